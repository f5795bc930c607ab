use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{FeatureKind, RunConfig};
use super::{io_err, PipelineError};
use crate::cnn::{spatial_average, FeatureVector, Network, TapMode};
use crate::container::{self, NamedTensor};
use crate::dataset::{load_image, resize_bilinear, to_network_input, DatasetIndex};
use crate::scattering::{
    build_filter_bank, prepare_image, scatter, scattering_features, FilterBank,
};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";

enum Extractor {
    Cnn {
        network: Network,
        mean: [f32; 3],
        mode: TapMode,
    },
    Scattering(FilterBank),
}

impl Extractor {
    fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        Ok(match cfg.features {
            FeatureKind::Cnn => {
                let weights = cfg.cnn.weights.as_ref().ok_or_else(|| {
                    PipelineError::Config("cnn.weights is required for cnn features".into())
                })?;
                Extractor::Cnn {
                    network: Network::load(cfg.network_spec()?, weights)?,
                    mean: cfg.preprocess.mean,
                    mode: cfg.cnn.tap_side.into(),
                }
            }
            FeatureKind::Scattering => {
                let s = &cfg.scattering;
                Extractor::Scattering(build_filter_bank(
                    s.scales,
                    s.orientations,
                    (s.size[0], s.size[1]),
                )?)
            }
        })
    }

    /// One feature vector per tap (a single vector for scattering).
    fn run(&self, path: &Path, taps: &[&str]) -> Result<Vec<Vec<f64>>, PipelineError> {
        let tagged = |message: String| PipelineError::Image {
            path: path.to_path_buf(),
            message,
        };
        let img = load_image(path).map_err(|e| tagged(e.to_string()))?;
        match self {
            Extractor::Cnn {
                network,
                mean,
                mode,
            } => {
                let (h, w, _) = network.spec.input_shape;
                let input = to_network_input(&resize_bilinear(&img, h, w), mean)
                    .map_err(|e| tagged(e.to_string()))?;
                let acts = network
                    .forward(&input, taps, *mode)
                    .map_err(|e| tagged(e.to_string()))?;
                Ok(taps
                    .iter()
                    .map(|t| spatial_average(&acts[*t]).values)
                    .collect())
            }
            Extractor::Scattering(bank) => {
                let maps =
                    scatter(&prepare_image(&img, bank), bank).map_err(|e| tagged(e.to_string()))?;
                Ok(vec![scattering_features(&maps).values])
            }
        }
    }
}

/// Cache key over everything that determines the features: the feature
/// settings, the tap, and the (subject, path, size) of every image.
fn cache_key(cfg: &RunConfig, tap: &str, index: &DatasetIndex) -> String {
    let source = match cfg.features {
        FeatureKind::Cnn => {
            let weights = cfg
                .cnn
                .weights
                .as_ref()
                .and_then(|p| std::fs::metadata(p).ok());
            json!({
                "kind": "cnn",
                "network": cfg.cnn.network,
                "weights": cfg.cnn.weights,
                "weights_len": weights.as_ref().map(|m| m.len()),
                "weights_modified": weights
                    .and_then(|m| m.modified().ok())
                    .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
                    .map(|d| d.as_nanos().to_string()),
                "tap": tap,
                "tap_side": cfg.cnn.tap_side,
                "mean": cfg.preprocess.mean,
            })
        }
        FeatureKind::Scattering => json!({ "kind": "scattering", "scattering": cfg.scattering }),
    };
    let mut h = Sha256::new();
    h.update(source.to_string().as_bytes());
    for e in index.entries() {
        let len = std::fs::metadata(&e.image_path)
            .map(|m| m.len())
            .unwrap_or(0);
        h.update(e.subject_id.as_bytes());
        h.update([0]);
        h.update(e.image_path.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(len.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn cache_path(cfg: &RunConfig, key: &str) -> PathBuf {
    cfg.output_dir.join("cache").join(format!("{key}.feat"))
}

fn read_cache(path: &Path, n: usize) -> Result<Option<Vec<Vec<f64>>>, PipelineError> {
    let Ok(bytes) = std::fs::read(path) else {
        return Ok(None);
    };
    let tensors = container::decode::<f64>(&bytes, FEATURE_MAGIC)
        .map_err(|e| PipelineError::Cache(e.to_string()))?;
    match tensors.as_slice() {
        [t] if t.dims.len() == 2 && t.dims[0] == n => {
            let d = t.dims[1];
            if d == 0 {
                return Ok(Some(vec![Vec::new(); n]));
            }
            Ok(Some(t.data.chunks(d).map(<[f64]>::to_vec).collect()))
        }
        _ => Err(PipelineError::Cache(format!(
            "{} does not hold {n} feature rows",
            path.display()
        ))),
    }
}

fn write_cache(path: &Path, rows: &[Vec<f64>]) -> Result<(), PipelineError> {
    let d = rows.first().map_or(0, Vec::len);
    let tensor = NamedTensor::new("features", vec![rows.len(), d], rows.concat());
    let dir = path.parent().expect("cache file has a parent");
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = path.with_extension("tmp");
    let bytes = container::encode(FEATURE_MAGIC, &[tensor])
        .map_err(|e| PipelineError::Cache(e.to_string()))?;
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn labelled(rows: Vec<Vec<f64>>, source: &str, index: &DatasetIndex) -> Vec<FeatureVector> {
    rows.into_iter()
        .zip(index.entries())
        .map(|(values, e)| FeatureVector {
            values,
            source_layer: source.to_owned(),
            subject_id: Some(e.subject_id.clone()),
        })
        .collect()
}

/// Features for each tap (scattering ignores `taps` and yields one set),
/// read from the cache where possible.
fn extract_sets(
    cfg: &RunConfig,
    index: &DatasetIndex,
    taps: &[&str],
) -> Result<Vec<Vec<FeatureVector>>, PipelineError> {
    if index.is_empty() {
        return Err(PipelineError::Config("dataset index is empty".into()));
    }
    let sources: Vec<&str> = match cfg.features {
        FeatureKind::Cnn => taps.to_vec(),
        FeatureKind::Scattering => vec!["scattering"],
    };
    let keys: Vec<String> = sources.iter().map(|s| cache_key(cfg, s, index)).collect();
    let mut found: Vec<Option<Vec<Vec<f64>>>> = Vec::with_capacity(sources.len());
    for key in &keys {
        found.push(if cfg.cache {
            read_cache(&cache_path(cfg, key), index.len())?
        } else {
            None
        });
    }
    let missing: Vec<usize> = (0..sources.len()).filter(|&i| found[i].is_none()).collect();
    if !missing.is_empty() {
        let extractor = Extractor::from_config(cfg)?;
        let wanted: Vec<&str> = missing.iter().map(|&i| sources[i]).collect();
        log::info!(
            "extracting {} feature set(s) from {} images",
            wanted.len(),
            index.len()
        );
        let per_image = index
            .entries()
            .par_iter()
            .map(|e| extractor.run(&e.image_path, &wanted))
            .collect::<Result<Vec<_>, _>>()?;
        for (slot, &i) in missing.iter().enumerate() {
            let rows: Vec<Vec<f64>> = per_image.iter().map(|r| r[slot].clone()).collect();
            if cfg.cache {
                write_cache(&cache_path(cfg, &keys[i]), &rows)?;
            }
            found[i] = Some(rows);
        }
    }
    Ok(found
        .into_iter()
        .zip(&sources)
        .map(|(rows, s)| labelled(rows.expect("every set filled"), s, index))
        .collect())
}

/// One feature vector per index entry, in index order.
pub fn extract_features(
    cfg: &RunConfig,
    index: &DatasetIndex,
) -> Result<Vec<FeatureVector>, PipelineError> {
    let mut sets = extract_sets(cfg, index, &[cfg.cnn.tap.as_str()])?;
    Ok(sets.swap_remove(0))
}

/// CNN features for several taps from a single forward pass per image.
pub fn extract_layer_features(
    cfg: &RunConfig,
    index: &DatasetIndex,
    taps: &[&str],
) -> Result<Vec<Vec<FeatureVector>>, PipelineError> {
    if cfg.features != FeatureKind::Cnn {
        return Err(PipelineError::Config(
            "layer features need `features: cnn`".into(),
        ));
    }
    let spec = cfg.network_spec()?;
    if let Some(bad) = taps.iter().find(|t| spec.position(t).is_none()) {
        return Err(crate::cnn::CnnError::UnknownTap((*bad).to_owned()).into());
    }
    extract_sets(cfg, index, taps)
}
