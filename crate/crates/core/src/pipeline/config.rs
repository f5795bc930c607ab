use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::cnn::{NetworkSpec, TapMode};
use crate::dataset::SplitSpec;
use crate::svm::Strategy;

/// Per-channel RGB means of the ImageNet training set, as used by VGG releases.
pub const VGG_MEAN: [f32; 3] = [123.68, 116.779, 103.939];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Cnn,
    Scattering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapSide {
    #[default]
    PostRelu,
    PreRelu,
}

impl From<TapSide> for TapMode {
    fn from(t: TapSide) -> Self {
        match t {
            TapSide::PostRelu => TapMode::PostRelu,
            TapSide::PreRelu => TapMode::PreRelu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    /// Network description (JSON). Absent means the built-in VGG-16.
    pub network: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub tap: String,
    pub tap_side: TapSide,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            network: None,
            weights: None,
            tap: "fc6".into(),
            tap_side: TapSide::PostRelu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatteringConfig {
    pub scales: usize,
    pub orientations: usize,
    /// Images are resized to `[height, width]` before scattering.
    pub size: [usize; 2],
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        ScatteringConfig {
            scales: 3,
            orientations: 6,
            size: [128, 128],
        }
    }
}

/// Network-input preparation. Images are resized to the network's input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub mean: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { mean: VGG_MEAN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    #[default]
    TrainOnly,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub k: usize,
    pub fit_scope: FitScope,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            k: 100,
            fit_scope: FitScope::TrainOnly,
        }
    }
}

/// Where per-dimension z-scoring (training statistics) is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardize {
    #[default]
    Off,
    /// On the raw features, before PCA is fitted.
    BeforePca,
    /// On the PCA outputs, right before the SVM.
    AfterPca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c: f64,
    pub strategy: Strategy,
    pub standardize: Standardize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            strategy: Strategy::OneVsAll,
            standardize: Standardize::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    #[serde(default)]
    pub features: FeatureKind,
    #[serde(default)]
    pub cnn: CnnConfig,
    #[serde(default)]
    pub scattering: ScatteringConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub split: SplitSpec,
    pub output_dir: PathBuf,
    /// Reuse extracted features across runs via `<output_dir>/cache`.
    #[serde(default = "yes")]
    pub cache: bool,
    /// Record wall-clock milliseconds in reports. Off by default so repeated
    /// runs produce identical files.
    #[serde(default)]
    pub timing: bool,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn new(dataset_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset_root: dataset_root.into(),
            features: FeatureKind::default(),
            cnn: CnnConfig::default(),
            scattering: ScatteringConfig::default(),
            preprocess: PreprocessConfig::default(),
            pca: PcaConfig::default(),
            svm: SvmConfig::default(),
            split: SplitSpec::default(),
            output_dir: output_dir.into(),
            cache: true,
            timing: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset_root);
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.cnn.network.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.cnn.weights.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, PipelineError> {
        match &self.cnn.network {
            Some(p) => NetworkSpec::load(p).map_err(PipelineError::Cnn),
            None => Ok(NetworkSpec::vgg16()),
        }
    }

    /// Checks referenced files and parameter ranges.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !self.dataset_root.is_dir() {
            return bad(format!(
                "dataset root {} is not a directory",
                self.dataset_root.display()
            ));
        }
        if self.pca.k == 0 {
            return bad("pca.k must be at least 1".into());
        }
        if !(self.svm.c > 0.0 && self.svm.c.is_finite()) {
            return bad(format!("svm.c must be positive, got {}", self.svm.c));
        }
        if self.split.train_per_subject == 0 {
            return bad("split.train_per_subject must be at least 1".into());
        }
        match self.features {
            FeatureKind::Cnn => {
                if let Some(p) = &self.cnn.network {
                    if !p.is_file() {
                        return bad(format!("network spec {} not found", p.display()));
                    }
                }
                match &self.cnn.weights {
                    None => return bad("cnn.weights is required for cnn features".into()),
                    Some(p) if !p.is_file() => {
                        return bad(format!("weight file {} not found", p.display()))
                    }
                    Some(_) => {}
                }
                let spec = self.network_spec()?;
                if spec.position(&self.cnn.tap).is_none() {
                    return bad(format!(
                        "tap `{}` is not a layer of the network",
                        self.cnn.tap
                    ));
                }
            }
            FeatureKind::Scattering => {
                let s = &self.scattering;
                crate::scattering::build_filter_bank(
                    s.scales,
                    s.orientations,
                    (s.size[0], s.size[1]),
                )
                .map_err(|e| PipelineError::Config(format!("scattering: {e}")))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_json(r#"{"dataset_root": "d", "output_dir": "o"}"#).unwrap();
        assert_eq!(cfg.pca.k, 100);
        assert_eq!(cfg.svm.c, 1.0);
        assert_eq!(cfg.svm.strategy, Strategy::OneVsAll);
        assert_eq!(cfg.cnn.tap, "fc6");
        assert_eq!(cfg.split.train_per_subject, 5);
        assert!(cfg.cache && !cfg.timing);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"dataset_root": "d", "output_dir": "o", "pca_k": 3}"#,
            r#"{"dataset_root": "d", "output_dir": "o", "pca": {"kk": 3}}"#,
            r#"{"dataset_root": "d", "output_dir": "o", "svm": {"C": 3}}"#,
        ] {
            assert!(
                matches!(RunConfig::from_json(text), Err(PipelineError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn strategy_aliases() {
        let cfg = RunConfig::from_json(
            r#"{"dataset_root": "d", "output_dir": "o", "svm": {"strategy": "ovo"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.svm.strategy, Strategy::OneVsOne);
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::new("data", "out");
        cfg.features = FeatureKind::Scattering;
        cfg.pca.fit_scope = FitScope::All;
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(dir.path(), dir.path().join("out"));
        cfg.features = FeatureKind::Scattering;
        cfg.validate().unwrap();
        cfg.pca.k = 0;
        assert!(cfg.validate().is_err());
        cfg.pca.k = 5;
        cfg.svm.c = -1.0;
        assert!(cfg.validate().is_err());
        cfg.svm.c = 1.0;
        cfg.scattering.size = [100, 100];
        assert!(cfg.validate().is_err());
        cfg.features = FeatureKind::Cnn;
        assert!(cfg.validate().is_err(), "missing weights");
        cfg.dataset_root = dir.path().join("absent");
        assert!(cfg.validate().is_err());
    }
}
