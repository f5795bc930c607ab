//! Synthetic grating-texture dataset and a tiny network, for tests and demos.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde_json::json;

use super::{io_err, PipelineError};
use crate::cnn::{LayerKind, LayerSpec, NetworkSpec, WeightStore};
use crate::dataset::{write_pgm, ImageTensor};

pub const FIXTURE_SUBJECTS: usize = 20;
pub const FIXTURE_IMAGES: usize = 10;
pub const FIXTURE_SIZE: usize = 128;

/// Paths written by [`make_fixtures`].
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub dataset: PathBuf,
    pub network_spec: PathBuf,
    pub weights: PathBuf,
    pub scattering_config: PathBuf,
    pub cnn_config: PathBuf,
}

/// Subject `s` gets one of ten orientations and one of two grating periods.
fn subject_pattern(s: usize) -> (f64, f64) {
    let theta = PI * (s % 10) as f64 / 10.0;
    let period = if s < 10 { 6.0 } else { 11.0 };
    (theta, period)
}

fn grating(rng: &mut ChaCha8Rng, theta: f64, period: f64) -> ImageTensor {
    let theta = theta + rng.gen_range(-3.0f64..3.0).to_radians();
    let freq = 2.0 * PI / period * rng.gen_range(0.96..1.04);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let amplitude = rng.gen_range(60.0..80.0);
    let noise = Normal::new(0.0, 12.0).expect("valid normal");
    let (c, s) = (theta.cos(), theta.sin());
    let n = FIXTURE_SIZE;
    let mut data = Vec::with_capacity(n * n);
    for r in 0..n {
        for col in 0..n {
            let v = 128.0
                + amplitude * (freq * (r as f64 * c + col as f64 * s) + phase).sin()
                + rng.sample(noise);
            data.push(v.round().clamp(0.0, 255.0) as f32);
        }
    }
    ImageTensor::new(n, n, 1, data).expect("fixture image shape")
}

/// 32x32 RGB input, two conv blocks and one fully connected layer.
pub fn tiny_network() -> NetworkSpec {
    NetworkSpec::new(
        (32, 32, 3),
        vec![
            LayerSpec::new("conv1", LayerKind::Conv { out_channels: 8 }),
            LayerSpec::new("relu1", LayerKind::Relu),
            LayerSpec::new("pool1", LayerKind::Maxpool),
            LayerSpec::new("conv2", LayerKind::Conv { out_channels: 16 }),
            LayerSpec::new("relu2", LayerKind::Relu),
            LayerSpec::new("pool2", LayerKind::Maxpool),
            LayerSpec::new("flatten", LayerKind::Flatten),
            LayerSpec::new("fc1", LayerKind::Fc { out_features: 32 }),
            LayerSpec::new("relu3", LayerKind::Relu),
        ],
    )
    .expect("tiny network is valid")
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes `dataset/<subject>/<n>.pgm`, the tiny network with random weights,
/// and ready-to-run configs for both feature sources under `root`.
pub fn make_fixtures(root: &Path, seed: u64) -> Result<FixtureSet, PipelineError> {
    let dataset = root.join("dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..FIXTURE_SUBJECTS {
        let dir = dataset.join(format!("subject{s:02}"));
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let (theta, period) = subject_pattern(s);
        for i in 0..FIXTURE_IMAGES {
            write_pgm(
                &dir.join(format!("{i:02}.pgm")),
                &grating(&mut rng, theta, period),
            )?;
        }
    }

    let spec = tiny_network();
    let network_spec = root.join("tiny_net.json");
    write_text(&network_spec, &spec.to_json())?;
    let weights = root.join("tiny_net.vggw");
    WeightStore::random(&spec, seed)?.save(&weights, &spec)?;

    let scattering_config = root.join("scattering.json");
    let cfg = json!({
        "dataset_root": "dataset",
        "features": "scattering",
        "scattering": { "scales": 3, "orientations": 6, "size": [FIXTURE_SIZE, FIXTURE_SIZE] },
        "pca": { "k": 30 },
        "svm": { "c": 1.0 },
        "split": { "train_per_subject": 5 },
        "output_dir": "out/scattering"
    });
    write_text(
        &scattering_config,
        &serde_json::to_string_pretty(&cfg).expect("json"),
    )?;

    let cnn_config = root.join("cnn.json");
    let cfg = json!({
        "dataset_root": "dataset",
        "features": "cnn",
        "cnn": { "network": "tiny_net.json", "weights": "tiny_net.vggw", "tap": "fc1" },
        "pca": { "k": 30 },
        "svm": { "c": 1.0 },
        "split": { "train_per_subject": 5 },
        "output_dir": "out/cnn"
    });
    write_text(
        &cnn_config,
        &serde_json::to_string_pretty(&cfg).expect("json"),
    )?;

    Ok(FixtureSet {
        dataset,
        network_spec,
        weights,
        scattering_config,
        cnn_config,
    })
}
