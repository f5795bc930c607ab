use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{FitScope, RunConfig, Standardize};
use super::features::{extract_features, extract_layer_features};
use super::report::{Record, Report};
use super::{io_err, PipelineError};
use crate::cnn::FeatureVector;
use crate::dataset::{index_dataset, split_dataset, DatasetIndex, Entry, SplitSpec};
use crate::pca::{self, PcaModel};
use crate::svm::{train_multiclass, MultiSvmModel, Standardizer};

/// Largest feature count kept per layer in the layer sweep.
pub const LAYER_FEATURE_CAP: usize = 256;

/// Exact top-1 counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

pub fn accuracy<T: PartialEq>(predictions: &[T], truth: &[T]) -> Result<Accuracy, PipelineError> {
    if predictions.len() != truth.len() {
        return Err(PipelineError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(PipelineError::Empty);
    }
    Ok(Accuracy {
        correct: predictions
            .iter()
            .zip(truth)
            .filter(|(p, t)| p == t)
            .count(),
        total: truth.len(),
    })
}

/// Everything needed to classify a raw feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    /// z-scoring applied before PCA, when configured there.
    pub scaler: Option<Standardizer>,
    pub pca: PcaModel,
    /// Carries its own standardizer when z-scoring follows PCA.
    pub svm: MultiSvmModel,
}

impl TrainedModels {
    pub const SCALER_FILE: &'static str = "scaler.stdz";
    pub const PCA_FILE: &'static str = "pca.pcam";
    pub const SVM_FILE: &'static str = "svm.svmm";

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let scaler_path = dir.join(Self::SCALER_FILE);
        match &self.scaler {
            Some(s) => s.save(&scaler_path)?,
            None if scaler_path.exists() => {
                std::fs::remove_file(&scaler_path).map_err(io_err(&scaler_path))?
            }
            None => {}
        }
        self.pca.save(&dir.join(Self::PCA_FILE))?;
        self.svm.save(&dir.join(Self::SVM_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let scaler_path = dir.join(Self::SCALER_FILE);
        Ok(TrainedModels {
            scaler: if scaler_path.exists() {
                Some(Standardizer::load(&scaler_path)?)
            } else {
                None
            },
            pca: PcaModel::load(&dir.join(Self::PCA_FILE))?,
            svm: MultiSvmModel::load(&dir.join(Self::SVM_FILE))?,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<String, PipelineError> {
        let z = match &self.scaler {
            Some(s) => self.pca.transform(&s.apply(x))?,
            None => self.pca.transform(x)?,
        };
        Ok(self.svm.predict(&z)?.to_owned())
    }
}

/// Features for a whole index, addressable by entry.
struct FeatureTable {
    index: DatasetIndex,
    rows: Vec<FeatureVector>,
    position: HashMap<Entry, usize>,
}

impl FeatureTable {
    fn new(index: DatasetIndex, rows: Vec<FeatureVector>) -> Self {
        let position = index
            .entries()
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, e)| (e, i))
            .collect();
        FeatureTable {
            index,
            rows,
            position,
        }
    }

    fn select(&self, subset: &DatasetIndex) -> (Vec<Vec<f64>>, Vec<String>) {
        subset
            .entries()
            .iter()
            .map(|e| {
                (
                    self.rows[self.position[e]].values.clone(),
                    e.subject_id.clone(),
                )
            })
            .unzip()
    }

    fn dim(&self) -> usize {
        self.rows.first().map_or(0, FeatureVector::dim)
    }
}

/// Train and test features after any pre-PCA scaling.
struct Split {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<String>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<String>,
    /// All samples, for PCA fitted on everything.
    all_x: Option<Vec<Vec<f64>>>,
    scaler: Option<Standardizer>,
}

impl Split {
    fn pca_samples(&self) -> &[Vec<f64>] {
        self.all_x.as_deref().unwrap_or(&self.train_x)
    }
}

fn split_table(
    cfg: &RunConfig,
    table: &FeatureTable,
    spec: &SplitSpec,
) -> Result<Split, PipelineError> {
    let (train, test) = split_dataset(&table.index, spec)?;
    let (mut train_x, train_y) = table.select(&train);
    let (mut test_x, test_y) = table.select(&test);
    let mut all_x = (cfg.pca.fit_scope == FitScope::All).then(|| {
        table
            .rows
            .iter()
            .map(|r| r.values.clone())
            .collect::<Vec<_>>()
    });
    let scaler =
        (cfg.svm.standardize == Standardize::BeforePca).then(|| Standardizer::fit(&train_x));
    if let Some(s) = &scaler {
        train_x = s.apply_all(&train_x);
        test_x = s.apply_all(&test_x);
        all_x = all_x.map(|a| s.apply_all(&a));
    }
    Ok(Split {
        train_x,
        train_y,
        test_x,
        test_y,
        all_x,
        scaler,
    })
}

fn fit_pca(split: &Split, k: usize) -> Result<PcaModel, PipelineError> {
    Ok(pca::fit(split.pca_samples(), k)?)
}

fn train_classifier(
    cfg: &RunConfig,
    pca: &PcaModel,
    split: &Split,
) -> Result<MultiSvmModel, PipelineError> {
    let mut z = pca.transform_all(&split.train_x)?;
    let scaler = (cfg.svm.standardize == Standardize::AfterPca).then(|| Standardizer::fit(&z));
    if let Some(s) = &scaler {
        z = s.apply_all(&z);
    }
    let mut svm = train_multiclass(&z, &split.train_y, cfg.svm.c, cfg.svm.strategy)?;
    svm.scaler = scaler;
    Ok(svm)
}

/// Per-class (correct, total) for already pre-scaled inputs.
fn score(
    pca: &PcaModel,
    svm: &MultiSvmModel,
    x: &[Vec<f64>],
    y: &[String],
) -> Result<BTreeMap<String, (usize, usize)>, PipelineError> {
    let predictions = x
        .par_iter()
        .map(|v| Ok(svm.predict(&pca.transform(v)?)?.to_owned()))
        .collect::<Result<Vec<String>, PipelineError>>()?;
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(y) {
        let slot = per_class.entry(t.clone()).or_default();
        slot.1 += 1;
        if p == t {
            slot.0 += 1;
        }
    }
    Ok(per_class)
}

fn totals(per_class: &BTreeMap<String, (usize, usize)>) -> Result<(usize, usize), PipelineError> {
    let (correct, total) = per_class
        .values()
        .fold((0, 0), |(c, t), &(pc, pt)| (c + pc, t + pt));
    if total == 0 {
        return Err(PipelineError::Empty);
    }
    Ok((correct, total))
}

/// Trains on the split and scores its test half.
fn evaluate_point(
    cfg: &RunConfig,
    split: &Split,
    pca: PcaModel,
    sweep_var: &str,
    value: String,
    started: Instant,
) -> Result<(Record, TrainedModels), PipelineError> {
    let svm = train_classifier(cfg, &pca, split)?;
    let per_class = score(&pca, &svm, &split.test_x, &split.test_y)?;
    let (correct, total) = totals(&per_class)?;
    let record = Record {
        sweep_var: sweep_var.to_owned(),
        value,
        correct,
        total,
        train_size: split.train_x.len(),
        test_size: split.test_x.len(),
        wall_ms: cfg.timing.then(|| started.elapsed().as_millis()),
        pca_k: pca.output_dim(),
        per_class,
    };
    let models = TrainedModels {
        scaler: split.scaler.clone(),
        pca,
        svm,
    };
    Ok((record, models))
}

fn load_table(cfg: &RunConfig) -> Result<FeatureTable, PipelineError> {
    cfg.validate()?;
    let index = index_dataset(&cfg.dataset_root)?;
    let rows = extract_features(cfg, &index)?;
    Ok(FeatureTable::new(index, rows))
}

/// Fits PCA and the classifier on the training split and saves both to the
/// output directory.
pub fn train(cfg: &RunConfig) -> Result<TrainedModels, PipelineError> {
    let table = load_table(cfg)?;
    let split = split_table(cfg, &table, &cfg.split)?;
    let pca = fit_pca(&split, cfg.pca.k)?;
    let svm = train_classifier(cfg, &pca, &split)?;
    let models = TrainedModels {
        scaler: split.scaler,
        pca,
        svm,
    };
    models.save(&cfg.output_dir)?;
    Ok(models)
}

/// Scores saved models on the test split and writes `evaluation.{csv,json}`.
pub fn evaluate(cfg: &RunConfig, models: &TrainedModels) -> Result<Report, PipelineError> {
    let started = Instant::now();
    let table = load_table(cfg)?;
    let (train, test) = split_dataset(&table.index, &cfg.split)?;
    let (test_x, test_y) = table.select(&test);
    let predictions = test_x
        .par_iter()
        .map(|v| models.predict(v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(&test_y) {
        let slot = per_class.entry(t.clone()).or_default();
        slot.1 += 1;
        slot.0 += usize::from(p == t);
    }
    let (correct, total) = totals(&per_class)?;
    let report = Report {
        config: cfg.clone(),
        records: vec![Record {
            sweep_var: "run".into(),
            value: "evaluate".into(),
            correct,
            total,
            train_size: train.len(),
            test_size: test.len(),
            wall_ms: cfg.timing.then(|| started.elapsed().as_millis()),
            pca_k: models.pca.output_dim(),
            per_class,
        }],
    };
    report.write(&cfg.output_dir, "evaluation")?;
    Ok(report)
}

/// Split, extract, fit PCA, train, score. Writes the models and
/// `experiment.{csv,json}` to the output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<Report, PipelineError> {
    let started = Instant::now();
    let table = load_table(cfg)?;
    let split = split_table(cfg, &table, &cfg.split)?;
    let pca = fit_pca(&split, cfg.pca.k)?;
    let (record, models) = evaluate_point(cfg, &split, pca, "run", "experiment".into(), started)?;
    let report = Report {
        config: cfg.clone(),
        records: vec![record],
    };
    models.save(&cfg.output_dir)?;
    report.write(&cfg.output_dir, "experiment")?;
    Ok(report)
}

/// Accuracy for each PCA dimension in `ks`, from one fit at the largest K
/// truncated to each value.
pub fn sweep_pca(cfg: &RunConfig, ks: &[usize]) -> Result<Report, PipelineError> {
    let kmax = *ks
        .iter()
        .max()
        .ok_or_else(|| PipelineError::Config("no K values to sweep".into()))?;
    let table = load_table(cfg)?;
    let split = split_table(cfg, &table, &cfg.split)?;
    let full = fit_pca(&split, kmax)?;
    let mut records = Vec::with_capacity(ks.len());
    for &k in ks {
        let started = Instant::now();
        let pca = full.truncate(k)?;
        records.push(evaluate_point(cfg, &split, pca, "pca_k", k.to_string(), started)?.0);
    }
    let report = Report {
        config: cfg.clone(),
        records,
    };
    report.write(&cfg.output_dir, "sweep_pca")?;
    Ok(report)
}

/// Accuracy for features tapped at each layer, reduced by PCA to at most
/// [`LAYER_FEATURE_CAP`] dimensions (also bounded by the fit sample count).
pub fn sweep_layers(cfg: &RunConfig, taps: &[&str]) -> Result<Report, PipelineError> {
    if taps.is_empty() {
        return Err(PipelineError::Config("no layers to sweep".into()));
    }
    cfg.validate()?;
    let index = index_dataset(&cfg.dataset_root)?;
    let sets = extract_layer_features(cfg, &index, taps)?;
    let mut records = Vec::with_capacity(taps.len());
    for (tap, rows) in taps.iter().zip(sets) {
        let started = Instant::now();
        let table = FeatureTable::new(index.clone(), rows);
        let split = split_table(cfg, &table, &cfg.split)?;
        let k = LAYER_FEATURE_CAP
            .min(table.dim())
            .min(split.pca_samples().len().saturating_sub(1));
        let pca = fit_pca(&split, k)?;
        records.push(evaluate_point(cfg, &split, pca, "layer", (*tap).to_owned(), started)?.0);
    }
    let report = Report {
        config: cfg.clone(),
        records,
    };
    report.write(&cfg.output_dir, "sweep_layers")?;
    Ok(report)
}

/// Accuracy for each number of training images per subject. The split is
/// rebuilt per count with the configured seed and mode; K is lowered when a
/// small training set cannot support it.
pub fn sweep_train_count(cfg: &RunConfig, counts: &[usize]) -> Result<Report, PipelineError> {
    if counts.is_empty() {
        return Err(PipelineError::Config("no training counts to sweep".into()));
    }
    let table = load_table(cfg)?;
    let mut records = Vec::with_capacity(counts.len());
    for &count in counts {
        let started = Instant::now();
        let spec = SplitSpec {
            train_per_subject: count,
            ..cfg.split.clone()
        };
        let split = split_table(cfg, &table, &spec)?;
        let limit = table.dim().min(split.pca_samples().len().saturating_sub(1));
        let k = cfg.pca.k.min(limit);
        if k < cfg.pca.k {
            log::warn!(
                "{count} per subject: PCA dimension lowered from {} to {k}",
                cfg.pca.k
            );
        }
        let pca = fit_pca(&split, k)?;
        records.push(
            evaluate_point(
                cfg,
                &split,
                pca,
                "train_per_subject",
                count.to_string(),
                started,
            )?
            .0,
        );
    }
    let report = Report {
        config: cfg.clone(),
        records,
    };
    report.write(&cfg.output_dir, "sweep_train_count")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts() {
        assert_eq!(
            accuracy(&["a", "b", "a"], &["a", "a", "a"]).unwrap(),
            Accuracy {
                correct: 2,
                total: 3
            }
        );
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap().fraction(), 1.0);
        assert!(matches!(
            accuracy(&[1], &[1, 2]),
            Err(PipelineError::LengthMismatch { .. })
        ));
        assert!(matches!(
            accuracy::<u8>(&[], &[]),
            Err(PipelineError::Empty)
        ));
    }
}
