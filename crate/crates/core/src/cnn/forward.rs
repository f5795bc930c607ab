use std::collections::BTreeMap;
use std::path::Path;

use super::{
    conv2d, flatten, fully_connected, maxpool2d, relu, Activation, CnnError, LayerKind,
    NetworkSpec, WeightStore,
};
use crate::dataset::ImageTensor;

/// Which activation a tap on a conv/fc layer returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TapMode {
    /// Output of the relu directly following the layer, if there is one.
    #[default]
    PostRelu,
    /// Raw layer output.
    PreRelu,
}

/// Runs `spec` on `input`, returning the post-relu activation of every tapped layer.
pub fn forward(
    spec: &NetworkSpec,
    weights: &WeightStore,
    input: &ImageTensor,
    taps: &[&str],
) -> Result<BTreeMap<String, Activation>, CnnError> {
    forward_with(spec, weights, input, taps, TapMode::PostRelu)
}

pub fn forward_with(
    spec: &NetworkSpec,
    weights: &WeightStore,
    input: &ImageTensor,
    taps: &[&str],
    mode: TapMode,
) -> Result<BTreeMap<String, Activation>, CnnError> {
    // Map every tap to the layer index whose output it reads.
    let mut capture: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for &tap in taps {
        let pos = spec
            .position(tap)
            .ok_or_else(|| CnnError::UnknownTap(tap.to_owned()))?;
        let follows_relu = spec
            .layers
            .get(pos + 1)
            .is_some_and(|l| l.kind == LayerKind::Relu);
        let read_at = if mode == TapMode::PostRelu
            && spec.layers[pos].kind.is_parameterized()
            && follows_relu
        {
            pos + 1
        } else {
            pos
        };
        capture.entry(read_at).or_default().push(tap);
    }
    let mut out = BTreeMap::new();
    let Some(&last) = capture.keys().next_back() else {
        return Ok(out);
    };

    let (h, w, c) = spec.input_shape;
    if (input.height(), input.width(), input.channels()) != (h, w, c) {
        return Err(CnnError::ShapeMismatch {
            layer: "input".into(),
            expected: format!("({h}, {w}, {c})"),
            found: format!(
                "({}, {}, {})",
                input.height(),
                input.width(),
                input.channels()
            ),
        });
    }

    let mut act = Activation::from_image(input);
    for (i, layer) in spec.layers.iter().enumerate().take(last + 1) {
        let params = || {
            weights
                .get(&layer.name)
                .ok_or_else(|| CnnError::MissingLayer(layer.name.clone()))
        };
        act = match layer.kind {
            LayerKind::Conv { .. } => {
                let p = params()?;
                conv2d(&act, &p.weight, &p.bias)?
            }
            LayerKind::Fc { .. } => {
                let p = params()?;
                fully_connected(&act, &p.weight, &p.bias)?
            }
            LayerKind::Relu => relu(&act),
            LayerKind::Maxpool => maxpool2d(&act)?,
            LayerKind::Flatten => flatten(&act),
        };
        act.layer_name.clone_from(&layer.name);
        if let Some(names) = capture.get(&i) {
            for &name in names {
                let mut tapped = act.clone();
                tapped.layer_name = name.to_owned();
                out.insert(name.to_owned(), tapped);
            }
        }
    }
    Ok(out)
}

/// A network spec together with its loaded weights.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: WeightStore,
}

impl Network {
    pub fn load(spec: NetworkSpec, weights_path: &Path) -> Result<Self, CnnError> {
        let weights = super::load_weights(weights_path, &spec)?;
        Ok(Network { spec, weights })
    }

    pub fn forward(
        &self,
        input: &ImageTensor,
        taps: &[&str],
        mode: TapMode,
    ) -> Result<BTreeMap<String, Activation>, CnnError> {
        forward_with(&self.spec, &self.weights, input, taps, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{spatial_average, LayerSpec, Shape};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> NetworkSpec {
        NetworkSpec::new(
            (4, 4, 3),
            vec![
                LayerSpec::new("conv1", LayerKind::Conv { out_channels: 2 }),
                LayerSpec::new("relu1", LayerKind::Relu),
                LayerSpec::new("pool1", LayerKind::Maxpool),
                LayerSpec::new("flatten", LayerKind::Flatten),
                LayerSpec::new("fc1", LayerKind::Fc { out_features: 5 }),
            ],
        )
        .unwrap()
    }

    fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(
            h,
            w,
            3,
            (0..h * w * 3).map(|_| rng.gen_range(-50.0..50.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv_tap_is_post_relu() {
        let spec = tiny();
        let weights = WeightStore::random(&spec, 4).unwrap();
        let img = random_image(5, 4, 4);
        let p = weights.get("conv1").unwrap();
        let manual = relu(&conv2d(&Activation::from_image(&img), &p.weight, &p.bias).unwrap());
        let got = forward(&spec, &weights, &img, &["conv1"]).unwrap();
        assert_eq!(got["conv1"].data, manual.data);

        let pre = forward_with(&spec, &weights, &img, &["conv1"], TapMode::PreRelu).unwrap();
        let raw = conv2d(&Activation::from_image(&img), &p.weight, &p.bias).unwrap();
        assert_eq!(pre["conv1"].data, raw.data);
    }

    #[test]
    fn empty_taps_and_unknown_tap() {
        let spec = tiny();
        let weights = WeightStore::random(&spec, 4).unwrap();
        // Wrong input shape is not even inspected when nothing is tapped.
        let img = random_image(1, 2, 2);
        assert!(forward(&spec, &weights, &img, &[]).unwrap().is_empty());
        assert!(matches!(
            forward(&spec, &weights, &img, &["nope"]),
            Err(CnnError::UnknownTap(_))
        ));
        assert!(matches!(
            forward(&spec, &weights, &img, &["fc1"]),
            Err(CnnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn single_tap_equals_full_run() {
        let spec = tiny();
        let weights = WeightStore::random(&spec, 8).unwrap();
        let img = random_image(9, 4, 4);
        let all: Vec<&str> = spec.layers.iter().map(|l| l.name.as_str()).collect();
        let full = forward(&spec, &weights, &img, &all).unwrap();
        for name in &all {
            let one = forward(&spec, &weights, &img, &[name]).unwrap();
            assert_eq!(one[*name], full[*name]);
        }
        assert_eq!(full["fc1"].shape, Shape::Flat(5));
        assert_eq!(spatial_average(&full["pool1"]).dim(), 2);
    }
}
