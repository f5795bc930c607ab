//! Principal component analysis.
//!
//! Components are the top eigenvectors of the sample covariance
//! `Z^T Z / (N - 1)` of the centered data `Z`. When the feature dimension
//! exceeds the sample count the `N x N` Gram matrix `Z Z^T / (N - 1)` is
//! diagonalized instead and its eigenvectors are mapped back through `Z^T`;
//! both share the same nonzero spectrum.

use std::path::Path;

use thiserror::Error;

use crate::container::{self, ContainerError, NamedTensor};
use crate::linalg::{dot, symmetric_eigen, LinalgError};

pub const PCA_MAGIC: &[u8; 4] = b"PCAM";

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("K = {k} outside 1..={max} (min(d, N - 1))")]
    BadK { k: usize, max: usize },
    #[error("all samples are identical; the scatter matrix is zero")]
    DegenerateInput,
    #[error("expected dimension {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
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

/// Which matrix to diagonalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Route {
    /// Covariance when `d <= N`, Gram matrix otherwise.
    #[default]
    Auto,
    Covariance,
    Gram,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PcaOptions {
    pub route: Route,
    /// Fit zero-variance data instead of failing with `DegenerateInput`.
    pub allow_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

pub fn fit(samples: &[Vec<f64>], k: usize) -> Result<PcaModel, PcaError> {
    fit_with(samples, k, PcaOptions::default())
}

pub fn fit_with(samples: &[Vec<f64>], k: usize, opts: PcaOptions) -> Result<PcaModel, PcaError> {
    let n = samples.len();
    if n < 2 {
        return Err(PcaError::TooFewSamples(n));
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(PcaError::DimMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let max_k = d.min(n - 1);
    if k == 0 || k > max_k {
        return Err(PcaError::BadK { k, max: max_k });
    }

    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let denom = (n - 1) as f64;
    let total_variance = centered.iter().map(|z| dot(z, z)).sum::<f64>() / denom;
    if total_variance == 0.0 && !opts.allow_degenerate {
        return Err(PcaError::DegenerateInput);
    }

    let use_gram = match opts.route {
        Route::Auto => d > n,
        Route::Covariance => false,
        Route::Gram => true,
    };
    let (eigenvalues, mut components) = if use_gram {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(&centered[i], &centered[j]) / denom;
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let eig = symmetric_eigen(&gram, n)?;
        let lambda_max = eig.values[0].max(0.0);
        let mut comps = Vec::with_capacity(k);
        for (lambda, u) in eig.values.iter().zip(&eig.vectors).take(k) {
            // Directions with (numerically) zero variance cannot be recovered
            // through Z^T; they are completed by Gram-Schmidt below.
            if *lambda <= 1e-12 * lambda_max || *lambda <= 0.0 {
                break;
            }
            let mut v = vec![0.0; d];
            for (ui, z) in u.iter().zip(&centered) {
                for (vj, zj) in v.iter_mut().zip(z) {
                    *vj += ui * zj;
                }
            }
            let scale = 1.0 / (lambda * denom).sqrt();
            v.iter_mut().for_each(|x| *x *= scale);
            comps.push(v);
        }
        orthonormalize(&mut comps);
        complete_basis(&mut comps, d, k);
        (eig.values[..k].to_vec(), comps)
    } else {
        let mut cov = vec![0.0; d * d];
        for z in &centered {
            for i in 0..d {
                let zi = z[i];
                if zi == 0.0 {
                    continue;
                }
                let row = &mut cov[i * d..(i + 1) * d];
                for j in i..d {
                    row[j] += zi * z[j];
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= denom);
        let eig = symmetric_eigen(&cov, d)?;
        (
            eig.values[..k].to_vec(),
            eig.vectors.into_iter().take(k).collect(),
        )
    };

    for c in components.iter_mut() {
        fix_sign(c);
    }
    let eigenvalues = eigenvalues.into_iter().map(|l| l.max(0.0)).collect();
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        total_variance,
    })
}

/// Makes the largest-magnitude entry (first one on ties) positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Modified Gram-Schmidt in place.
fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let p = dot(u, v);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let nrm = dot(v, v).sqrt();
        v.iter_mut().for_each(|a| *a /= nrm);
    }
}

/// Extends an orthonormal set to `k` vectors using the standard basis.
fn complete_basis(vs: &mut Vec<Vec<f64>>, d: usize, k: usize) {
    let mut axis = 0;
    while vs.len() < k && axis < d {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        axis += 1;
        for _ in 0..2 {
            for u in vs.iter() {
                let p = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let nrm = dot(&v, &v).sqrt();
        if nrm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= nrm);
            vs.push(v);
        }
    }
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Trace of the full covariance at fit time.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// `z = components (x - mean)`
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, PcaError> {
        if x.len() != self.mean.len() {
            return Err(PcaError::DimMismatch {
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centered)).collect())
    }

    pub fn transform_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PcaError> {
        xs.iter().map(|x| self.transform(x)).collect()
    }

    /// `x = mean + components^T z`
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>, PcaError> {
        if z.len() != self.components.len() {
            return Err(PcaError::DimMismatch {
                expected: self.components.len(),
                found: z.len(),
            });
        }
        let mut x = self.mean.clone();
        for (zi, c) in z.iter().zip(&self.components) {
            x.iter_mut().zip(c).for_each(|(a, b)| *a += zi * b);
        }
        Ok(x)
    }

    /// Fraction of total variance captured by the first `k` components.
    pub fn retained_variance(&self, k: usize) -> Result<f64, PcaError> {
        if k == 0 || k > self.components.len() {
            return Err(PcaError::BadK {
                k,
                max: self.components.len(),
            });
        }
        if self.total_variance == 0.0 {
            return Ok(1.0);
        }
        let kept: f64 = self.eigenvalues[..k].iter().sum();
        Ok((kept / self.total_variance).clamp(0.0, 1.0))
    }

    /// The model restricted to its first `k` components. Identical to a fresh
    /// fit with `k`, since components are nested.
    pub fn truncate(&self, k: usize) -> Result<PcaModel, PcaError> {
        if k == 0 || k > self.components.len() {
            return Err(PcaError::BadK {
                k,
                max: self.components.len(),
            });
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            total_variance: self.total_variance,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.mean.len();
        let k = self.components.len();
        let tensors = vec![
            NamedTensor::vector("mean", self.mean.clone()),
            NamedTensor::new("components", vec![k, d], self.components.concat()),
            NamedTensor::vector("eigenvalues", self.eigenvalues.clone()),
            NamedTensor::scalar("total_variance", self.total_variance),
        ];
        container::encode(PCA_MAGIC, &tensors).expect("PCA tensors are encodable")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PcaError> {
        let tensors = container::decode::<f64>(bytes, PCA_MAGIC)?;
        let [mean, comps, eig, total] = <[NamedTensor<f64>; 4]>::try_from(tensors)
            .map_err(|t| PcaError::Format(format!("expected 4 tensors, found {}", t.len())))?;
        let names = [&mean.name, &comps.name, &eig.name, &total.name];
        if names != ["mean", "components", "eigenvalues", "total_variance"] {
            return Err(PcaError::Format(format!(
                "unexpected tensor names {names:?}"
            )));
        }
        let d = mean.data.len();
        let k = eig.data.len();
        if comps.dims != [k, d] || total.data.len() != 1 {
            return Err(PcaError::Format("inconsistent tensor shapes".into()));
        }
        Ok(PcaModel {
            components: if d == 0 {
                vec![Vec::new(); k]
            } else {
                comps.data.chunks(d).map(<[f64]>::to_vec).collect()
            },
            mean: mean.data,
            eigenvalues: eig.data,
            total_variance: total.data[0],
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PcaError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| PcaError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PcaError> {
        let bytes = std::fs::read(path).map_err(|source| PcaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
