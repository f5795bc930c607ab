use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CnnError, Tensor};
use crate::dataset::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Spatial {
        height: usize,
        width: usize,
        channels: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial {
                height,
                width,
                channels,
            } => height * width * channels,
            Shape::Flat(d) => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channel count of a spatial shape, feature count of a flat one.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Spatial { channels, .. } => channels,
            Shape::Flat(d) => d,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Spatial {
                height,
                width,
                channels,
            } => write!(f, "({height}, {width}, {channels})"),
            Shape::Flat(d) => write!(f, "({d})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub layer_name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl Activation {
    pub fn new(layer_name: impl Into<String>, shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.len(),
            data.len(),
            "activation data does not match its shape"
        );
        Activation {
            layer_name: layer_name.into(),
            shape,
            data,
        }
    }

    pub fn from_image(img: &ImageTensor) -> Self {
        Activation::new(
            "input",
            Shape::Spatial {
                height: img.height(),
                width: img.width(),
                channels: img.channels(),
            },
            img.data().to_vec(),
        )
    }

    fn spatial_dims(&self) -> Result<(usize, usize, usize), CnnError> {
        match self.shape {
            Shape::Spatial {
                height,
                width,
                channels,
            } => Ok((height, width, channels)),
            Shape::Flat(_) => Err(CnnError::NotSpatial),
        }
    }

    fn derived(&self, shape: Shape, data: Vec<f32>) -> Activation {
        Activation::new(self.layer_name.clone(), shape, data)
    }
}

fn check_conv_params(
    input_channels: usize,
    kernel: &Tensor,
    bias: &[f32],
) -> Result<usize, CnnError> {
    let [out_c, in_c, kh, kw] = kernel.dims[..] else {
        return Err(CnnError::ShapeMismatch {
            layer: "conv kernel".into(),
            expected: "rank 4".into(),
            found: format!("{:?}", kernel.dims),
        });
    };
    if (kh, kw) != (3, 3) {
        return Err(CnnError::ShapeMismatch {
            layer: "conv kernel".into(),
            expected: "3x3".into(),
            found: format!("{kh}x{kw}"),
        });
    }
    if in_c != input_channels {
        return Err(CnnError::ChannelMismatch {
            expected: in_c,
            found: input_channels,
        });
    }
    if bias.len() != out_c {
        return Err(CnnError::DimMismatch {
            expected: out_c,
            found: bias.len(),
        });
    }
    Ok(out_c)
}

/// 3x3, stride 1, zero pad 1 cross-correlation:
/// `out[y, x, o] = bias[o] + sum_{c, dy, dx} in[y + dy - 1, x + dx - 1, c] * kernel[o, c, dy, dx]`.
///
/// Kernel layout is (out_c, in_c, 3, 3). Accumulates in f64.
pub fn conv2d(input: &Activation, kernel: &Tensor, bias: &[f32]) -> Result<Activation, CnnError> {
    let (h, w, c) = input.spatial_dims()?;
    let o = check_conv_params(c, kernel, bias)?;

    // Re-lay the kernel as [dy][dx][c][o] so the innermost loop is contiguous in o.
    let mut taps = vec![0f64; 9 * c * o];
    for oo in 0..o {
        for cc in 0..c {
            for k in 0..9 {
                taps[(k * c + cc) * o + oo] = kernel.data[(oo * c + cc) * 9 + k] as f64;
            }
        }
    }
    let bias64: Vec<f64> = bias.iter().map(|&b| b as f64).collect();

    let mut out = vec![0f32; h * w * o];
    let mut acc = vec![0f64; o];
    for y in 0..h {
        for x in 0..w {
            acc.copy_from_slice(&bias64);
            for dy in 0..3 {
                let Some(sy) = (y + dy).checked_sub(1).filter(|&s| s < h) else {
                    continue;
                };
                for dx in 0..3 {
                    let Some(sx) = (x + dx).checked_sub(1).filter(|&s| s < w) else {
                        continue;
                    };
                    let px = &input.data[(sy * w + sx) * c..][..c];
                    let k = dy * 3 + dx;
                    for (cc, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let v = v as f64;
                        let row = &taps[(k * c + cc) * o..][..o];
                        for (a, &t) in acc.iter_mut().zip(row) {
                            *a += v * t;
                        }
                    }
                }
            }
            for (dst, &a) in out[(y * w + x) * o..][..o].iter_mut().zip(&acc) {
                *dst = a as f32;
            }
        }
    }
    Ok(input.derived(
        Shape::Spatial {
            height: h,
            width: w,
            channels: o,
        },
        out,
    ))
}

/// Direct evaluation of the convolution sum, one output sample at a time.
/// Reference path that [`conv2d`] is checked against.
pub fn conv2d_direct(
    input: &Activation,
    kernel: &Tensor,
    bias: &[f32],
) -> Result<Activation, CnnError> {
    let (h, w, c) = input.spatial_dims()?;
    let o = check_conv_params(c, kernel, bias)?;
    let sample = |y: isize, x: isize, ch: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            input.data[(y as usize * w + x as usize) * c + ch] as f64
        }
    };
    let mut out = vec![0f32; h * w * o];
    for y in 0..h {
        for x in 0..w {
            for oo in 0..o {
                let mut sum = bias[oo] as f64;
                for cc in 0..c {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let k = kernel.data[((oo * c + cc) * 3 + dy) * 3 + dx] as f64;
                            sum += sample(
                                y as isize + dy as isize - 1,
                                x as isize + dx as isize - 1,
                                cc,
                            ) * k;
                        }
                    }
                }
                out[(y * w + x) * o + oo] = sum as f32;
            }
        }
    }
    Ok(input.derived(
        Shape::Spatial {
            height: h,
            width: w,
            channels: o,
        },
        out,
    ))
}

pub fn relu(a: &Activation) -> Activation {
    a.derived(a.shape, a.data.iter().map(|&v| v.max(0.0)).collect())
}

/// 2x2 window, stride 2, no padding.
pub fn maxpool2d(a: &Activation) -> Result<Activation, CnnError> {
    let (h, w, c) = a.spatial_dims()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CnnError::OddSpatialDim {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let at = |yy: usize, xx: usize| a.data[(yy * w + xx) * c + ch];
                let m = at(2 * y, 2 * x)
                    .max(at(2 * y, 2 * x + 1))
                    .max(at(2 * y + 1, 2 * x))
                    .max(at(2 * y + 1, 2 * x + 1));
                out.push(m);
            }
        }
    }
    Ok(a.derived(
        Shape::Spatial {
            height: oh,
            width: ow,
            channels: c,
        },
        out,
    ))
}

/// Flattens in channel-major (C, H, W) order, the layout fc weights of
/// published VGG checkpoints expect.
pub fn flatten(a: &Activation) -> Activation {
    match a.shape {
        Shape::Flat(_) => a.clone(),
        Shape::Spatial {
            height,
            width,
            channels,
        } => {
            let mut out = Vec::with_capacity(a.data.len());
            for ch in 0..channels {
                for p in 0..height * width {
                    out.push(a.data[p * channels + ch]);
                }
            }
            a.derived(Shape::Flat(out.len()), out)
        }
    }
}

/// `y = W x + b` with `W` stored (out, in).
pub fn fully_connected(
    x: &Activation,
    weight: &Tensor,
    bias: &[f32],
) -> Result<Activation, CnnError> {
    let Shape::Flat(d_in) = x.shape else {
        return Err(CnnError::DimMismatch {
            expected: weight.dims.get(1).copied().unwrap_or(0),
            found: x.data.len(),
        });
    };
    let [d_out, w_in] = weight.dims[..] else {
        return Err(CnnError::ShapeMismatch {
            layer: "fc weight".into(),
            expected: "rank 2".into(),
            found: format!("{:?}", weight.dims),
        });
    };
    if w_in != d_in {
        return Err(CnnError::DimMismatch {
            expected: w_in,
            found: d_in,
        });
    }
    if bias.len() != d_out {
        return Err(CnnError::DimMismatch {
            expected: d_out,
            found: bias.len(),
        });
    }
    let out = weight
        .data
        .chunks_exact(d_in)
        .zip(bias)
        .map(|(row, &b)| {
            let dot: f64 = row
                .iter()
                .zip(&x.data)
                .map(|(&wv, &xv)| wv as f64 * xv as f64)
                .sum();
            (dot + b as f64) as f32
        })
        .collect();
    Ok(x.derived(Shape::Flat(d_out), out))
}

/// Fixed-length descriptor of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source_layer: String,
    pub subject_id: Option<String>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per-channel mean over all spatial positions. Flat activations pass through unchanged.
pub fn spatial_average(a: &Activation) -> FeatureVector {
    let values = match a.shape {
        Shape::Flat(_) => a.data.iter().map(|&v| v as f64).collect(),
        Shape::Spatial {
            height,
            width,
            channels,
        } => {
            let mut sums = vec![0f64; channels];
            for px in a.data.chunks_exact(channels) {
                for (s, &v) in sums.iter_mut().zip(px) {
                    *s += v as f64;
                }
            }
            let n = (height * width) as f64;
            sums.into_iter().map(|s| s / n).collect()
        }
    };
    FeatureVector {
        values,
        source_layer: a.layer_name.clone(),
        subject_id: None,
    }
}
