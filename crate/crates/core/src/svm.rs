//! Soft-margin linear SVM.
//!
//! The binary solver is SMO on the dual
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j <x_i, x_j>
//! s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0
//! ```
//!
//! with maximal-violating-pair working-set selection and the clipped
//! two-variable update. Shrinking is not used. Multi-class models combine
//! binary machines one-vs-all (largest score wins) or one-vs-one (majority vote).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError, NamedTensor};
use crate::linalg::dot;

pub const SVM_MAGIC: &[u8; 4] = b"SVMM";
pub const SCALER_MAGIC: &[u8; 4] = b"STDZ";

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("binary labels must be -1 or +1, got {0}")]
    BadLabel(f64),
    #[error("penalty C must be positive and finite, got {0}")]
    BadPenalty(f64),
    #[error("SMO did not reach KKT tolerance within {0} pair updates")]
    NoConvergence(usize),
    #[error("expected dimension {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("multi-class training needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("machine {machine}: {source}")]
    Machine {
        machine: String,
        #[source]
        source: Box<SvmError>,
    },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct SmoOptions {
    /// Stop once the maximal KKT violation `m(a) - M(a)` drops below this.
    pub tolerance: f64,
    pub max_updates: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        SmoOptions {
            tolerance: 1e-3,
            max_updates: 10_000_000,
        }
    }
}

/// Linear two-class machine `f(x) = w.x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    /// Training indices with a nonzero dual variable.
    pub support_indices: Vec<usize>,
    /// Dual variables matching `support_indices`.
    pub alphas: Vec<f64>,
}

impl BinarySvm {
    /// A machine with only the primal parameters (as stored in model files).
    pub fn from_parts(w: Vec<f64>, b: f64, c: f64) -> Self {
        BinarySvm {
            w,
            b,
            c,
            support_indices: Vec::new(),
            alphas: Vec::new(),
        }
    }

    /// Raw margin score `w.x + b`.
    pub fn decision(&self, x: &[f64]) -> Result<f64, SvmError> {
        if x.len() != self.w.len() {
            return Err(SvmError::DimMismatch {
                expected: self.w.len(),
                found: x.len(),
            });
        }
        Ok(dot(&self.w, x) + self.b)
    }

    /// Dual objective `sum a - 1/2 |w|^2`.
    pub fn dual_objective(&self) -> f64 {
        self.alphas.iter().sum::<f64>() - 0.5 * dot(&self.w, &self.w)
    }
}

/// Source of kernel rows `<x_s[i], x_s[t]>` for a subset `s` of the samples.
struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    gram: Option<&'a [f64]>,
    subset: &'a [usize],
    cache: HashMap<usize, Vec<f64>>,
    cache_limit: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], gram: Option<&'a [f64]>, subset: &'a [usize]) -> Self {
        let row_bytes = subset.len().max(1) * 8;
        KernelRows {
            x,
            gram,
            subset,
            cache: HashMap::new(),
            cache_limit: ((256usize << 20) / row_bytes).max(2),
        }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.subset[i], self.subset[j]);
        match self.gram {
            Some(g) => g[a * self.x.len() + b],
            None => dot(&self.x[a], &self.x[b]),
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.cache.contains_key(&i) {
            if self.cache.len() >= self.cache_limit {
                self.cache.clear();
            }
            let row = (0..self.subset.len()).map(|t| self.entry(i, t)).collect();
            self.cache.insert(i, row);
        }
        &self.cache[&i]
    }
}

/// Full `N x N` linear Gram matrix, row-major.
fn gram_matrix(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| x.iter().map(|xj| dot(&x[i], xj)).collect())
        .collect();
    rows.concat()
}

const DENSE_GRAM_LIMIT: usize = 4096;

fn check_inputs(x: &[Vec<f64>], c: f64) -> Result<usize, SvmError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(SvmError::BadPenalty(c));
    }
    if x.len() < 2 {
        return Err(SvmError::TooFewSamples(x.len()));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(SvmError::DimMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(d)
}

pub fn train_binary(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<BinarySvm, SvmError> {
    train_binary_with(x, y, c, SmoOptions::default())
}

pub fn train_binary_with(
    x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    opts: SmoOptions,
) -> Result<BinarySvm, SvmError> {
    check_inputs(x, c)?;
    if y.len() != x.len() {
        return Err(SvmError::DimMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let gram = (x.len() <= DENSE_GRAM_LIMIT).then(|| gram_matrix(x));
    let subset: Vec<usize> = (0..x.len()).collect();
    solve(x, gram.as_deref(), &subset, y, c, opts)
}

/// SMO on `x[subset]` with labels `y` (aligned with `subset`).
fn solve(
    x: &[Vec<f64>],
    gram: Option<&[f64]>,
    subset: &[usize],
    y: &[f64],
    c: f64,
    opts: SmoOptions,
) -> Result<BinarySvm, SvmError> {
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::BadLabel(bad));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClassInput);
    }
    let n = subset.len();
    let mut kernel = KernelRows::new(x, gram, subset);
    let diag: Vec<f64> = (0..n).map(|i| kernel.entry(i, i)).collect();
    let mut alpha = vec![0.0; n];
    // Gradient of 1/2 a^T Q a - e^T a with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0; n];
    const TAU: f64 = 1e-12;

    let mut updates = 0usize;
    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = if y[t] > 0.0 {
                alpha[t] < c
            } else {
                alpha[t] > 0.0
            };
            let low = if y[t] > 0.0 {
                alpha[t] > 0.0
            } else {
                alpha[t] < c
            };
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < opts.tolerance {
            break;
        }
        if updates >= opts.max_updates {
            return Err(SvmError::NoConvergence(updates));
        }
        updates += 1;

        let kij = kernel.entry(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (diag[i] + diag[j] - 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        let (yi, yj) = (y[i], y[j]);
        let row_i = kernel.row(i).to_vec();
        let row_j = kernel.row(j);
        for t in 0..n {
            grad[t] += y[t] * (yi * row_i[t] * di + yj * row_j[t] * dj);
        }
    }

    let d = x[subset[0]].len();
    let mut w = vec![0.0; d];
    let mut support_indices = Vec::new();
    let mut alphas = Vec::new();
    for (t, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            let coef = a * y[t];
            w.iter_mut()
                .zip(&x[subset[t]])
                .for_each(|(wv, xv)| *wv += coef * xv);
            support_indices.push(t);
            alphas.push(a);
        }
    }

    // b from unbounded support vectors, else the midpoint of the interval
    // the bounded ones leave feasible.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for t in 0..n {
        let r = y[t] - dot(&w, &x[subset[t]]);
        let a = alpha[t];
        if a > 0.0 && a < c {
            free_sum += r;
            free_count += 1;
        } else if (y[t] > 0.0) == (a == 0.0) {
            lower = lower.max(r);
        } else {
            upper = upper.min(r);
        }
    }
    let b = if free_count > 0 {
        free_sum / free_count as f64
    } else if lower.is_finite() && upper.is_finite() {
        0.5 * (lower + upper)
    } else if lower.is_finite() {
        lower
    } else {
        upper
    };

    Ok(BinarySvm {
        w,
        b,
        c,
        support_indices,
        alphas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    #[serde(alias = "ova")]
    OneVsAll,
    #[serde(alias = "ovo")]
    OneVsOne,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::OneVsAll => "one_vs_all",
            Strategy::OneVsOne => "one_vs_one",
        })
    }
}

/// One binary machine of a multi-class model: `positive` vs `negative`
/// (class indices), or `positive` vs the rest when `negative` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub positive: usize,
    pub negative: Option<usize>,
    pub svm: BinarySvm,
}

/// Per-dimension z-scoring with training-set statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            var.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_all(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().map(|r| self.apply(r)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = [
            NamedTensor::vector("mean", self.mean.clone()),
            NamedTensor::vector("scale", self.scale.clone()),
        ];
        container::encode(SCALER_MAGIC, &t).expect("scaler tensors are encodable")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SvmError> {
        match <[NamedTensor<f64>; 2]>::try_from(container::decode::<f64>(bytes, SCALER_MAGIC)?) {
            Ok([m, s]) if m.name == "mean" && s.name == "scale" && m.data.len() == s.data.len() => {
                Ok(Standardizer {
                    mean: m.data,
                    scale: s.data,
                })
            }
            _ => Err(SvmError::Format(
                "scaler file needs `mean` and `scale` of equal length".into(),
            )),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SvmError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| SvmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SvmError> {
        let bytes = std::fs::read(path).map_err(|source| SvmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSvmModel {
    pub strategy: Strategy,
    /// Sorted class labels; machines refer to classes by index into this list.
    pub classes: Vec<String>,
    pub machines: Vec<Machine>,
    /// Applied to inputs before scoring when present.
    pub scaler: Option<Standardizer>,
}

pub fn train_multiclass(
    x: &[Vec<f64>],
    labels: &[String],
    c: f64,
    strategy: Strategy,
) -> Result<MultiSvmModel, SvmError> {
    train_multiclass_with(x, labels, c, strategy, SmoOptions::default())
}

pub fn train_multiclass_with(
    x: &[Vec<f64>],
    labels: &[String],
    c: f64,
    strategy: Strategy,
    opts: SmoOptions,
) -> Result<MultiSvmModel, SvmError> {
    check_inputs(x, c)?;
    if labels.len() != x.len() {
        return Err(SvmError::DimMismatch {
            expected: x.len(),
            found: labels.len(),
        });
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::TooFewClasses(classes.len()));
    }
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label is in class table"))
        .collect();

    let pairs: Vec<(usize, Option<usize>)> = match strategy {
        Strategy::OneVsAll => (0..classes.len()).map(|a| (a, None)).collect(),
        Strategy::OneVsOne => (0..classes.len())
            .flat_map(|a| (a + 1..classes.len()).map(move |b| (a, Some(b))))
            .collect(),
    };

    let gram = (x.len() <= DENSE_GRAM_LIMIT).then(|| gram_matrix(x));
    let machines = pairs
        .into_par_iter()
        .map(|(pos, neg)| {
            let subset: Vec<usize> = match neg {
                None => (0..x.len()).collect(),
                Some(neg) => (0..x.len())
                    .filter(|&i| class_of[i] == pos || class_of[i] == neg)
                    .collect(),
            };
            let y: Vec<f64> = subset
                .iter()
                .map(|&i| if class_of[i] == pos { 1.0 } else { -1.0 })
                .collect();
            let mut svm =
                solve(x, gram.as_deref(), &subset, &y, c, opts).map_err(|e| SvmError::Machine {
                    machine: match neg {
                        None => format!("{} vs rest", classes[pos]),
                        Some(n) => format!("{} vs {}", classes[pos], classes[n]),
                    },
                    source: Box::new(e),
                })?;
            // report support vectors as indices into the full training set
            svm.support_indices.iter_mut().for_each(|i| *i = subset[*i]);
            Ok(Machine {
                positive: pos,
                negative: neg,
                svm,
            })
        })
        .collect::<Result<Vec<_>, SvmError>>()?;

    Ok(MultiSvmModel {
        strategy,
        classes,
        machines,
        scaler: None,
    })
}

impl MultiSvmModel {
    pub fn input_dim(&self) -> usize {
        self.machines.first().map_or(0, |m| m.svm.w.len())
    }

    /// Index of the predicted class.
    pub fn predict_index(&self, x: &[f64]) -> Result<usize, SvmError> {
        let scaled;
        let x = match &self.scaler {
            Some(s) => {
                if x.len() != s.mean.len() {
                    return Err(SvmError::DimMismatch {
                        expected: s.mean.len(),
                        found: x.len(),
                    });
                }
                scaled = s.apply(x);
                &scaled[..]
            }
            None => x,
        };
        let scores = self
            .machines
            .iter()
            .map(|m| m.svm.decision(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(match self.strategy {
            Strategy::OneVsAll => {
                let mut per_class = vec![f64::NEG_INFINITY; self.classes.len()];
                for (m, s) in self.machines.iter().zip(&scores) {
                    per_class[m.positive] = *s;
                }
                argmax_lowest(&per_class)
            }
            Strategy::OneVsOne => {
                let k = self.classes.len();
                let mut votes = vec![0usize; k];
                let mut margin = vec![0.0; k];
                for (m, &s) in self.machines.iter().zip(&scores) {
                    let neg = m.negative.expect("one-vs-one machine has a negative class");
                    if s > 0.0 {
                        votes[m.positive] += 1;
                    } else {
                        votes[neg] += 1;
                    }
                    margin[m.positive] += s;
                    margin[neg] -= s;
                }
                let top = *votes.iter().max().expect("at least two classes");
                let tied: Vec<f64> = (0..k)
                    .map(|c| {
                        if votes[c] == top {
                            margin[c]
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                argmax_lowest(&tied)
            }
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<&str, SvmError> {
        Ok(&self.classes[self.predict_index(x)?])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut t = vec![NamedTensor::scalar(
            "strategy",
            match self.strategy {
                Strategy::OneVsAll => 0.0,
                Strategy::OneVsOne => 1.0,
            },
        )];
        for (i, c) in self.classes.iter().enumerate() {
            t.push(NamedTensor::scalar(format!("class:{c}"), i as f64));
        }
        for (k, m) in self.machines.iter().enumerate() {
            t.push(NamedTensor::vector(
                format!("machine.{k}.w"),
                m.svm.w.clone(),
            ));
            t.push(NamedTensor::scalar(format!("machine.{k}.b"), m.svm.b));
            t.push(NamedTensor::scalar(format!("machine.{k}.c"), m.svm.c));
            t.push(NamedTensor::vector(
                format!("machine.{k}.classes"),
                vec![m.positive as f64, m.negative.map_or(-1.0, |n| n as f64)],
            ));
        }
        if let Some(s) = &self.scaler {
            t.push(NamedTensor::vector("scaler.mean", s.mean.clone()));
            t.push(NamedTensor::vector("scaler.scale", s.scale.clone()));
        }
        container::encode(SVM_MAGIC, &t).expect("SVM tensors are encodable")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SvmError> {
        let bad = |m: &str| SvmError::Format(m.to_owned());
        let mut it = container::decode::<f64>(bytes, SVM_MAGIC)?
            .into_iter()
            .peekable();
        let strategy = match it.next() {
            Some(t) if t.name == "strategy" && t.data == [0.0] => Strategy::OneVsAll,
            Some(t) if t.name == "strategy" && t.data == [1.0] => Strategy::OneVsOne,
            _ => return Err(bad("missing strategy")),
        };
        let mut classes = Vec::new();
        while let Some(label) = it.peek().and_then(|t| t.name.strip_prefix("class:")) {
            classes.push(label.to_owned());
            it.next();
        }
        let mut machines = Vec::new();
        let mut scaler_mean = None;
        let mut scaler_scale = None;
        while let Some(t) = it.next() {
            if t.name == "scaler.mean" {
                scaler_mean = Some(t.data);
                continue;
            }
            if t.name == "scaler.scale" {
                scaler_scale = Some(t.data);
                continue;
            }
            let k = machines.len();
            if t.name != format!("machine.{k}.w") {
                return Err(SvmError::Format(format!("unexpected tensor `{}`", t.name)));
            }
            let mut field = |suffix: &str| -> Result<Vec<f64>, SvmError> {
                match it.next() {
                    Some(f) if f.name == format!("machine.{k}.{suffix}") => Ok(f.data),
                    _ => Err(SvmError::Format(format!("machine {k} lacks `{suffix}`"))),
                }
            };
            let b = field("b")?;
            let c = field("c")?;
            let pair = field("classes")?;
            if b.len() != 1 || c.len() != 1 || pair.len() != 2 {
                return Err(bad("malformed machine tensors"));
            }
            let positive = pair[0] as usize;
            let negative = (pair[1] >= 0.0).then_some(pair[1] as usize);
            if positive >= classes.len() || negative.is_some_and(|n| n >= classes.len()) {
                return Err(bad("machine refers to an unknown class"));
            }
            machines.push(Machine {
                positive,
                negative,
                svm: BinarySvm::from_parts(t.data, b[0], c[0]),
            });
        }
        let scaler = match (scaler_mean, scaler_scale) {
            (Some(mean), Some(scale)) if mean.len() == scale.len() => {
                Some(Standardizer { mean, scale })
            }
            (None, None) => None,
            _ => return Err(bad("incomplete scaler")),
        };
        Ok(MultiSvmModel {
            strategy,
            classes,
            machines,
            scaler,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SvmError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| SvmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SvmError> {
        let bytes = std::fs::read(path).map_err(|source| SvmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kkt_violation(svm: &BinarySvm, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let mut alpha = vec![0.0; x.len()];
        for (&i, &a) in svm.support_indices.iter().zip(&svm.alphas) {
            alpha[i] = a;
        }
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let m = y[i] * svm.decision(&x[i]).unwrap();
            let v = if alpha[i] == 0.0 {
                (1.0 - m).max(0.0)
            } else if alpha[i] < svm.c {
                (m - 1.0).abs()
            } else {
                (m - 1.0).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn blobs(seed: u64, n: usize, d: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            x.push(
                (0..d)
                    .map(|_| rng.gen_range(-1.0..1.0) + label * sep)
                    .collect(),
            );
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn symmetric_pair() {
        let svm = train_binary(&[vec![-1.0], vec![1.0]], &[-1.0, 1.0], 1.0).unwrap();
        assert!((svm.w[0] - 1.0).abs() < 1e-6);
        assert!(svm.b.abs() < 1e-6);
        assert_eq!(svm.support_indices, vec![0, 1]);
        assert!((svm.decision(&[1.0]).unwrap() - 1.0).abs() < 1e-6);
        assert!((svm.decision(&[-2.0]).unwrap() + 2.0).abs() < 1e-6);
    }

    #[test]
    fn decision_cases() {
        let svm = BinarySvm::from_parts(vec![1.0], 0.0, 1.0);
        assert_eq!(svm.decision(&[0.5]).unwrap(), 0.5);
        let svm = BinarySvm::from_parts(vec![2.0, -1.0], 3.0, 1.0);
        assert_eq!(svm.decision(&[-1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            svm.decision(&[1.0]),
            Err(SvmError::DimMismatch { .. })
        ));
    }

    #[test]
    fn input_errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train_binary(&x, &[1.0, 1.0], 1.0),
            Err(SvmError::SingleClassInput)
        ));
        assert!(matches!(
            train_binary(&x, &[1.0, 0.0], 1.0),
            Err(SvmError::BadLabel(_))
        ));
        assert!(matches!(
            train_binary(&x, &[1.0, -1.0], 0.0),
            Err(SvmError::BadPenalty(_))
        ));
        assert!(matches!(
            train_binary(&x[..1], &[1.0], 1.0),
            Err(SvmError::TooFewSamples(1))
        ));
    }

    #[test]
    fn iteration_cap() {
        let (x, y) = blobs(3, 40, 3, 0.1);
        let opts = SmoOptions {
            max_updates: 2,
            ..Default::default()
        };
        assert!(matches!(
            train_binary_with(&x, &y, 1.0, opts),
            Err(SvmError::NoConvergence(2))
        ));
    }

    #[test]
    fn dense_and_lazy_kernels_agree() {
        let (x, y) = blobs(4, 30, 4, 0.3);
        let subset: Vec<usize> = (0..x.len()).collect();
        let gram = gram_matrix(&x);
        let a = solve(&x, Some(&gram), &subset, &y, 1.0, SmoOptions::default()).unwrap();
        let b = solve(&x, None, &subset, &y, 1.0, SmoOptions::default()).unwrap();
        assert_eq!(a.support_indices, b.support_indices);
        for (p, q) in a.w.iter().zip(&b.w) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn multiclass_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for c in 0..4 {
            for _ in 0..5 {
                x.push(vec![
                    c as f64 * 3.0 + rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ]);
                labels.push(format!("c{c}"));
            }
        }
        let ova = train_multiclass(&x, &labels, 1.0, Strategy::OneVsAll).unwrap();
        assert_eq!(ova.machines.len(), 4);
        let ovo = train_multiclass(&x, &labels, 1.0, Strategy::OneVsOne).unwrap();
        assert_eq!(ovo.machines.len(), 6);
        for (xi, li) in x.iter().zip(&labels) {
            assert_eq!(ovo.predict(xi).unwrap(), li);
        }
    }

    #[test]
    fn two_class_ova_machines_are_negations() {
        let (x, y) = blobs(6, 20, 3, 0.4);
        let labels: Vec<String> = y
            .iter()
            .map(|&v| if v > 0.0 { "p".into() } else { "n".into() })
            .collect();
        let ova = train_multiclass(&x, &labels, 1.0, Strategy::OneVsAll).unwrap();
        assert_eq!(ova.machines.len(), 2);
        for xi in &x {
            let a = ova.machines[0].svm.decision(xi).unwrap();
            let b = ova.machines[1].svm.decision(xi).unwrap();
            assert!((a + b).abs() < 1e-2 * (1.0 + a.abs()), "{a} vs {b}");
        }
        let ovo = train_multiclass(&x, &labels, 1.0, Strategy::OneVsOne).unwrap();
        assert_eq!(ovo.machines.len(), 1);
    }

    fn fixed_model(
        strategy: Strategy,
        machines: Vec<(usize, Option<usize>, f64)>,
    ) -> MultiSvmModel {
        MultiSvmModel {
            strategy,
            classes: vec!["a".into(), "b".into(), "c".into()],
            machines: machines
                .into_iter()
                .map(|(positive, negative, b)| Machine {
                    positive,
                    negative,
                    svm: BinarySvm::from_parts(vec![0.0], b, 1.0),
                })
                .collect(),
            scaler: None,
        }
    }

    #[test]
    fn ova_takes_largest_score() {
        let m = fixed_model(
            Strategy::OneVsAll,
            vec![(0, None, -0.2), (1, None, 1.3), (2, None, 0.4)],
        );
        assert_eq!(m.predict(&[0.0]).unwrap(), "b");
        let tie = fixed_model(
            Strategy::OneVsAll,
            vec![(0, None, 0.5), (1, None, 0.5), (2, None, 0.1)],
        );
        assert_eq!(tie.predict(&[0.0]).unwrap(), "a");
    }

    #[test]
    fn ovo_majority_and_ties() {
        // a beats b, a beats c, b beats c: votes a:2 b:1 c:0
        let m = fixed_model(
            Strategy::OneVsOne,
            vec![(0, Some(1), 1.0), (0, Some(2), 1.0), (1, Some(2), 1.0)],
        );
        assert_eq!(m.predict(&[0.0]).unwrap(), "a");
        // cycle a>b, c>a, b>c: one vote each; margins a: 0.5-2 = -1.5, b: -0.5+1 = 0.5, c: 2-1 = 1
        let cyc = fixed_model(
            Strategy::OneVsOne,
            vec![(0, Some(1), 0.5), (0, Some(2), -2.0), (1, Some(2), 1.0)],
        );
        assert_eq!(cyc.predict(&[0.0]).unwrap(), "c");
    }

    #[test]
    fn three_gaussian_clusters_fully_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let centers = [(0.0, 0.0), (6.0, 0.0), (0.0, 6.0)];
        let mut sample = |n: usize| {
            let mut x = Vec::new();
            let mut l = Vec::new();
            for (ci, &(cx, cy)) in centers.iter().enumerate() {
                for _ in 0..n {
                    let r: f64 = rng.gen_range(0.0..1.0);
                    let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    x.push(vec![cx + r * t.cos(), cy + r * t.sin()]);
                    l.push(format!("k{ci}"));
                }
            }
            (x, l)
        };
        let (xtr, ltr) = sample(10);
        let (xte, lte) = sample(10);
        for strategy in [Strategy::OneVsAll, Strategy::OneVsOne] {
            let m = train_multiclass(&xtr, &ltr, 1.0, strategy).unwrap();
            for (x, l) in xte.iter().zip(&lte) {
                assert_eq!(m.predict(x).unwrap(), l);
            }
        }
    }

    #[test]
    fn model_file_round_trip() {
        let (x, y) = blobs(8, 12, 3, 0.5);
        let labels: Vec<String> = y
            .iter()
            .map(|&v| if v > 0.0 { "x".into() } else { "y".into() })
            .collect();
        let mut m = train_multiclass(&x, &labels, 1.0, Strategy::OneVsOne).unwrap();
        m.scaler = Some(Standardizer::fit(&x));
        let back = MultiSvmModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.classes, m.classes);
        assert_eq!(back.scaler, m.scaler);
        for (a, b) in back.machines.iter().zip(&m.machines) {
            assert_eq!(a.svm.w, b.svm.w);
            assert_eq!(a.svm.b, b.svm.b);
        }
        for xi in &x {
            assert_eq!(back.predict(xi).unwrap(), m.predict(xi).unwrap());
        }
    }

    #[test]
    fn standardizer_zero_variance_column() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
        assert_eq!(Standardizer::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn dual_feasibility_and_kkt(seed in any::<u64>(), n in 4usize..30, d in 1usize..5, c in 0.05f64..10.0) {
            let (x, y) = blobs(seed, n, d, 0.3);
            let svm = train_binary(&x, &y, c).unwrap();
            let mut balance = 0.0;
            let mut w = vec![0.0; d];
            for (&i, &a) in svm.support_indices.iter().zip(&svm.alphas) {
                prop_assert!(a > 0.0 && a <= c);
                balance += a * y[i];
                w.iter_mut().zip(&x[i]).for_each(|(wv, xv)| *wv += a * y[i] * xv);
            }
            prop_assert!(balance.abs() < 1e-9);
            for (p, q) in w.iter().zip(&svm.w) {
                prop_assert!((p - q).abs() < 1e-9);
            }
            prop_assert!(kkt_violation(&svm, &x, &y) <= 1e-3);
        }

        #[test]
        fn ova_argmax_ignores_constant_shift(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let biases: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = fixed_model(Strategy::OneVsAll, (0..3).map(|c| (c, None, biases[c])).collect());
            let shifted = fixed_model(Strategy::OneVsAll, (0..3).map(|c| (c, None, biases[c] + shift)).collect());
            prop_assert_eq!(m.predict(&[0.0]).unwrap(), shifted.predict(&[0.0]).unwrap());
        }
    }
}
