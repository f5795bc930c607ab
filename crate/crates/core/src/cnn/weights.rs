use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CnnError, NetworkSpec};
use crate::container::{self, NamedTensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"VGGW";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor data does not match dims"
        );
        Tensor { dims, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

/// Parameters of every conv/fc layer of a network, keyed by layer name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    layers: BTreeMap<String, LayerParams>,
}

impl WeightStore {
    /// Builds a store from named tensors, checking them strictly against `spec`.
    pub fn from_tensors(
        spec: &NetworkSpec,
        tensors: Vec<NamedTensor<f32>>,
    ) -> Result<Self, CnnError> {
        let mut by_name: BTreeMap<String, NamedTensor<f32>> = BTreeMap::new();
        for t in tensors {
            if by_name.contains_key(&t.name) {
                return Err(CnnError::Malformed(format!(
                    "duplicate tensor `{}`",
                    t.name
                )));
            }
            by_name.insert(t.name.clone(), t);
        }
        let mut layers = BTreeMap::new();
        for (layer, weight_dims, bias_len) in spec.parameter_shapes()? {
            let weight = by_name.remove(&format!("{layer}.weight"));
            let bias = by_name.remove(&format!("{layer}.bias"));
            let (weight, bias) = match (weight, bias) {
                (Some(w), Some(b)) => (w, b),
                _ => return Err(CnnError::MissingLayer(layer)),
            };
            if weight.dims != weight_dims {
                return Err(CnnError::ShapeMismatch {
                    layer: format!("{layer}.weight"),
                    expected: format!("{weight_dims:?}"),
                    found: format!("{:?}", weight.dims),
                });
            }
            if bias.dims != [bias_len] {
                return Err(CnnError::ShapeMismatch {
                    layer: format!("{layer}.bias"),
                    expected: format!("[{bias_len}]"),
                    found: format!("{:?}", bias.dims),
                });
            }
            layers.insert(
                layer,
                LayerParams {
                    weight: Tensor::new(weight.dims, weight.data),
                    bias: bias.data,
                },
            );
        }
        if let Some(extra) = by_name.into_keys().next() {
            return Err(CnnError::UnexpectedTensor(extra));
        }
        Ok(WeightStore { layers })
    }

    /// He-normal random weights and zero biases; used for fixtures and tests.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Result<Self, CnnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = BTreeMap::new();
        for (layer, dims, bias_len) in spec.parameter_shapes()? {
            let fan_in: usize = dims[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let n = dims.iter().product();
            let data = (0..n)
                .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
                .collect();
            layers.insert(
                layer,
                LayerParams {
                    weight: Tensor::new(dims, data),
                    bias: vec![0.0; bias_len],
                },
            );
        }
        Ok(WeightStore { layers })
    }

    pub fn get(&self, layer: &str) -> Option<&LayerParams> {
        self.layers.get(layer)
    }

    pub fn get_mut(&mut self, layer: &str) -> Option<&mut LayerParams> {
        self.layers.get_mut(layer)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .values()
            .map(|p| p.weight.data.len() + p.bias.len())
            .sum()
    }

    /// Tensors in network order, weight before bias.
    pub fn to_tensors(&self, spec: &NetworkSpec) -> Vec<NamedTensor<f32>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in spec.weighted_layer_names() {
            if let Some(p) = self.layers.get(layer) {
                out.push(NamedTensor::new(
                    format!("{layer}.weight"),
                    p.weight.dims.clone(),
                    p.weight.data.clone(),
                ));
                out.push(NamedTensor::vector(format!("{layer}.bias"), p.bias.clone()));
            }
        }
        out
    }

    pub fn to_bytes(&self, spec: &NetworkSpec) -> Vec<u8> {
        container::encode(WEIGHT_MAGIC, &self.to_tensors(spec))
            .expect("weight tensors are encodable")
    }

    pub fn save(&self, path: &Path, spec: &NetworkSpec) -> Result<(), CnnError> {
        std::fs::write(path, self.to_bytes(spec)).map_err(|source| CnnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_bytes(bytes: &[u8], spec: &NetworkSpec) -> Result<Self, CnnError> {
        let tensors = container::decode::<f32>(bytes, WEIGHT_MAGIC)?;
        Self::from_tensors(spec, tensors)
    }
}

/// Reads a `VGGW` weight file. Extra, missing, or misshapen tensors are errors.
pub fn load_weights(path: &Path, spec: &NetworkSpec) -> Result<WeightStore, CnnError> {
    let bytes = std::fs::read(path).map_err(|source| CnnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    WeightStore::from_bytes(&bytes, spec)
}

#[cfg(test)]
mod tests {
    use super::super::{LayerKind, LayerSpec};
    use super::*;

    fn one_conv() -> NetworkSpec {
        NetworkSpec::new(
            (4, 4, 3),
            vec![LayerSpec::new("conv1", LayerKind::Conv { out_channels: 2 })],
        )
        .unwrap()
    }

    #[test]
    fn one_conv_file_round_trip() {
        let spec = one_conv();
        let store = WeightStore::random(&spec, 9).unwrap();
        assert_eq!(store.parameter_count(), 56);
        let bytes = store.to_bytes(&spec);
        assert_eq!(WeightStore::from_bytes(&bytes, &spec).unwrap(), store);
    }

    #[test]
    fn wrong_bias_length() {
        let spec = one_conv();
        let tensors = vec![
            NamedTensor::new("conv1.weight", vec![2, 3, 3, 3], vec![0.0; 54]),
            NamedTensor::vector("conv1.bias", vec![0.0; 3]),
        ];
        assert!(matches!(
            WeightStore::from_tensors(&spec, tensors),
            Err(CnnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn extra_tensor_rejected() {
        let spec = one_conv();
        let mut tensors = WeightStore::random(&spec, 1).unwrap().to_tensors(&spec);
        tensors.push(NamedTensor::vector("conv9.bias", vec![0.0]));
        assert!(matches!(
            WeightStore::from_tensors(&spec, tensors),
            Err(CnnError::UnexpectedTensor(n)) if n == "conv9.bias"
        ));
    }
}
