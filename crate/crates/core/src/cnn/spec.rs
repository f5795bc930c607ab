use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CnnError, Shape};

/// Layer kinds. Geometry is fixed: 3x3 stride-1 pad-1 convolutions and
/// 2x2 stride-2 max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { out_channels: usize },
    Relu,
    Maxpool,
    Flatten,
    Fc { out_features: usize },
}

impl LayerKind {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Fc { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// (height, width, channels)
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Validates the spec and returns it.
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<LayerSpec>,
    ) -> Result<Self, CnnError> {
        let spec = NetworkSpec {
            input_shape,
            layers,
        };
        spec.output_shapes()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self, CnnError> {
        let spec: NetworkSpec =
            serde_json::from_str(text).map_err(|e| CnnError::InvalidSpec(e.to_string()))?;
        spec.output_shapes()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CnnError> {
        let text = std::fs::read_to_string(path).map_err(|source| CnnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// The 16-weight-layer VGG configuration ("D") with 224x224x3 input.
    pub fn vgg16() -> Self {
        let blocks: [&[usize]; 5] = [
            &[64, 64],
            &[128, 128],
            &[256, 256, 256],
            &[512, 512, 512],
            &[512, 512, 512],
        ];
        let mut layers = Vec::new();
        for (b, widths) in blocks.iter().enumerate() {
            for (i, &w) in widths.iter().enumerate() {
                let suffix = format!("{}_{}", b + 1, i + 1);
                layers.push(LayerSpec::new(
                    format!("conv{suffix}"),
                    LayerKind::Conv { out_channels: w },
                ));
                layers.push(LayerSpec::new(format!("relu{suffix}"), LayerKind::Relu));
            }
            layers.push(LayerSpec::new(format!("pool{}", b + 1), LayerKind::Maxpool));
        }
        layers.push(LayerSpec::new("flatten", LayerKind::Flatten));
        for (name, relu, out) in [
            ("fc6", true, 4096),
            ("fc7", true, 4096),
            ("fc8", false, 1000),
        ] {
            layers.push(LayerSpec::new(name, LayerKind::Fc { out_features: out }));
            if relu {
                layers.push(LayerSpec::new(
                    format!("relu{}", &name[2..]),
                    LayerKind::Relu,
                ));
            }
        }
        NetworkSpec::new((224, 224, 3), layers).expect("bundled VGG-16 spec is valid")
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Names of conv/fc layers in order; the k-th entry is "layer k" (1-based) of a layer sweep.
    pub fn weighted_layer_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.kind.is_parameterized())
            .map(|l| l.name.as_str())
            .collect()
    }

    pub fn input_as_shape(&self) -> Shape {
        let (height, width, channels) = self.input_shape;
        Shape::Spatial {
            height,
            width,
            channels,
        }
    }

    /// Output shape of every layer, validating the structural invariants on the way.
    pub fn output_shapes(&self) -> Result<Vec<Shape>, CnnError> {
        let invalid = |m: String| Err(CnnError::InvalidSpec(m));
        let (h, w, c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return invalid("input shape must be positive".into());
        }
        let mut seen = HashSet::new();
        let mut flattens = 0;
        let mut shape = self.input_as_shape();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if layer.name.is_empty() || layer.name.contains('.') {
                return invalid(format!("bad layer name `{}`", layer.name));
            }
            if !seen.insert(layer.name.as_str()) {
                return invalid(format!("duplicate layer name `{}`", layer.name));
            }
            shape = match (layer.kind, shape) {
                (LayerKind::Relu, s) => s,
                (LayerKind::Conv { out_channels }, Shape::Spatial { height, width, .. })
                    if out_channels > 0 =>
                {
                    Shape::Spatial {
                        height,
                        width,
                        channels: out_channels,
                    }
                }
                (
                    LayerKind::Maxpool,
                    Shape::Spatial {
                        height,
                        width,
                        channels,
                    },
                ) => {
                    if height % 2 != 0 || width % 2 != 0 {
                        return invalid(format!(
                            "`{}` pools an odd {height}x{width} map",
                            layer.name
                        ));
                    }
                    Shape::Spatial {
                        height: height / 2,
                        width: width / 2,
                        channels,
                    }
                }
                (LayerKind::Flatten, s @ Shape::Spatial { .. }) => {
                    flattens += 1;
                    Shape::Flat(s.len())
                }
                (LayerKind::Fc { out_features }, Shape::Flat(_)) if out_features > 0 => {
                    Shape::Flat(out_features)
                }
                (kind, s) => {
                    return invalid(format!(
                        "`{}` ({kind:?}) cannot follow shape {s}",
                        layer.name
                    ))
                }
            };
            shapes.push(shape);
        }
        if flattens > 1 {
            return invalid("more than one flatten layer".into());
        }
        Ok(shapes)
    }

    /// Expected parameter shapes `(layer, weight dims, bias len)` for every conv/fc layer.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>, usize)>, CnnError> {
        let shapes = self.output_shapes()?;
        let mut prev = self.input_as_shape();
        let mut out = Vec::new();
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match layer.kind {
                LayerKind::Conv { out_channels } => {
                    out.push((
                        layer.name.clone(),
                        vec![out_channels, prev.channels(), 3, 3],
                        out_channels,
                    ));
                }
                LayerKind::Fc { out_features } => {
                    out.push((
                        layer.name.clone(),
                        vec![out_features, prev.len()],
                        out_features,
                    ));
                }
                _ => {}
            }
            prev = *shape;
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> Result<usize, CnnError> {
        Ok(self
            .parameter_shapes()?
            .iter()
            .map(|(_, dims, bias)| dims.iter().product::<usize>() + bias)
            .sum())
    }
}
