//! Two-order scattering transform with Morlet wavelets.
//!
//! Filters are built in the spatial domain (periodized over neighbouring tiles),
//! then stored as 2-D DFTs so every convolution is a pointwise product. All
//! convolutions are circular.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::cnn::FeatureVector;
use crate::dataset::ImageTensor;

#[derive(Debug, Error, PartialEq)]
pub enum ScatteringError {
    #[error(
        "scale count and orientation count must be at least 1 (J = {scales}, L = {orientations})"
    )]
    BadParameters { scales: usize, orientations: usize },
    #[error("image size {height}x{width} is not divisible by 2^{scales}")]
    IndivisibleSize {
        height: usize,
        width: usize,
        scales: usize,
    },
    #[error("filter bank is {expected:?} (h, w, channels), image is {found:?}")]
    SizeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
}

/// Width of the Gaussian envelope at scale 0.
const SIGMA0: f64 = 0.8;
/// Centre frequency at scale 0, in radians per pixel.
const XI0: f64 = 3.0 * PI / 4.0;
/// Number of tiles on each side summed when periodizing a filter.
const PERIODS: i64 = 2;

/// 2-D FFT over a row-major `height x width` complex buffer.
#[derive(Clone)]
struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process(buf);
        let mut column = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            cols.process(&mut column);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
        if inverse {
            let scale = 1.0 / (h * w) as f64;
            buf.iter_mut().for_each(|v| *v *= scale);
        }
    }

    fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }

    /// Inverse transform of `a * b` (pointwise), i.e. circular convolution.
    fn convolve(&self, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        self.run(&mut buf, true);
        buf
    }
}

/// Spatial Gabor filter `exp(-x^T A x + i xi <k, x>)`, periodized and scaled
/// so its Fourier transform peaks near 1. Coordinates are (row, col).
fn gabor(
    height: usize,
    width: usize,
    sigma: f64,
    theta: f64,
    xi: f64,
    slant: f64,
) -> Vec<Complex64> {
    let (c, s) = (theta.cos(), theta.sin());
    // A = R diag(1, slant^2) R^T / (2 sigma^2)
    let inv = 1.0 / (2.0 * sigma * sigma);
    let a00 = (c * c + slant * slant * s * s) * inv;
    let a01 = (c * s - slant * slant * c * s) * inv;
    let a11 = (s * s + slant * slant * c * c) * inv;
    let mut out = vec![Complex64::default(); height * width];
    for ex in -PERIODS..=PERIODS {
        for ey in -PERIODS..=PERIODS {
            for r in 0..height {
                let x = r as f64 + (ex * height as i64) as f64;
                for col in 0..width {
                    let y = col as f64 + (ey * width as i64) as f64;
                    let envelope = -(a00 * x * x + 2.0 * a01 * x * y + a11 * y * y);
                    let phase = xi * (x * c + y * s);
                    out[r * width + col] += Complex64::from_polar(envelope.exp(), phase);
                }
            }
        }
    }
    let norm = 2.0 * PI * sigma * sigma / slant;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Gabor minus the envelope scaled to cancel the mean, so the filter sum is zero.
fn morlet(
    height: usize,
    width: usize,
    sigma: f64,
    theta: f64,
    xi: f64,
    slant: f64,
) -> Vec<Complex64> {
    let wave = gabor(height, width, sigma, theta, xi, slant);
    let envelope = gabor(height, width, sigma, theta, 0.0, slant);
    let k = wave.iter().sum::<Complex64>() / envelope.iter().sum::<Complex64>();
    wave.iter().zip(&envelope).map(|(w, e)| w - k * e).collect()
}

/// Morlet band-pass filters at `scales` dyadic scales and `orientations`
/// angles, plus a Gaussian low-pass at the coarsest scale.
#[derive(Clone)]
pub struct FilterBank {
    scales: usize,
    orientations: usize,
    height: usize,
    width: usize,
    /// DFTs of the band-pass filters, index `j * orientations + t`.
    psi: Vec<Vec<Complex64>>,
    phi: Vec<Complex64>,
    fft: Fft2,
}

impl fmt::Debug for FilterBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterBank")
            .field("scales", &self.scales)
            .field("orientations", &self.orientations)
            .field("size", &(self.height, self.width))
            .finish()
    }
}

pub fn build_filter_bank(
    scales: usize,
    orientations: usize,
    size: (usize, usize),
) -> Result<FilterBank, ScatteringError> {
    if scales == 0 || orientations == 0 {
        return Err(ScatteringError::BadParameters {
            scales,
            orientations,
        });
    }
    let (height, width) = size;
    let block = 1usize.checked_shl(scales as u32).unwrap_or(0);
    if height == 0 || width == 0 || block == 0 || height % block != 0 || width % block != 0 {
        return Err(ScatteringError::IndivisibleSize {
            height,
            width,
            scales,
        });
    }
    let fft = Fft2::new(height, width);
    let slant = 4.0 / orientations as f64;
    let mut psi = Vec::with_capacity(scales * orientations);
    for j in 0..scales {
        let sigma = SIGMA0 * 2f64.powi(j as i32);
        let xi = XI0 / 2f64.powi(j as i32);
        for t in 0..orientations {
            let theta = PI * t as f64 / orientations as f64;
            let mut f = morlet(height, width, sigma, theta, xi, slant);
            fft.run(&mut f, false);
            psi.push(f);
        }
    }
    let mut low = gabor(
        height,
        width,
        SIGMA0 * 2f64.powi(scales as i32),
        0.0,
        0.0,
        1.0,
    );
    // Real and positive; normalize to unit sum so constants pass unchanged.
    let total: f64 = low.iter().map(|v| v.re).sum();
    low.iter_mut()
        .for_each(|v| *v = Complex64::new(v.re / total, 0.0));
    fft.run(&mut low, false);
    Ok(FilterBank {
        scales,
        orientations,
        height,
        width,
        psi,
        phi: low,
        fft,
    })
}

impl FilterBank {
    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn psi_count(&self) -> usize {
        self.psi.len()
    }

    /// Frequency response of band-pass filter `(j, t)`, row-major.
    pub fn psi(&self, j: usize, t: usize) -> &[Complex64] {
        &self.psi[j * self.orientations + t]
    }

    pub fn phi(&self) -> &[Complex64] {
        &self.phi
    }

    /// Spatial samples of band-pass filter `(j, t)`.
    pub fn psi_spatial(&self, j: usize, t: usize) -> Vec<Complex64> {
        let mut buf = self.psi(j, t).to_vec();
        self.fft.run(&mut buf, true);
        buf
    }

    /// `|sum of samples| / sum of |samples|` for band-pass filter `(j, t)`.
    pub fn dc_ratio(&self, j: usize, t: usize) -> f64 {
        let s = self.psi_spatial(j, t);
        s.iter().sum::<Complex64>().norm() / s.iter().map(|v| v.norm()).sum::<f64>()
    }

    pub fn order1_paths(&self) -> Vec<(usize, usize)> {
        (0..self.scales)
            .flat_map(|j| (0..self.orientations).map(move |t| (j, t)))
            .collect()
    }

    /// `(j1, t1, j2, t2)` with `j2 > j1`, in lexicographic order.
    pub fn order2_paths(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::new();
        for (j1, t1) in self.order1_paths() {
            for j2 in j1 + 1..self.scales {
                for t2 in 0..self.orientations {
                    out.push((j1, t1, j2, t2));
                }
            }
        }
        out
    }

    /// Length of the feature vector produced from this bank.
    pub fn feature_dim(&self) -> usize {
        2 * (1 + self.order1_paths().len() + self.order2_paths().len())
    }
}

/// Scattering coefficients of one image, each map row-major at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringMaps {
    pub height: usize,
    pub width: usize,
    pub order0: Vec<f64>,
    /// Indexed like [`FilterBank::order1_paths`].
    pub order1: Vec<Vec<f64>>,
    /// Indexed like [`FilterBank::order2_paths`].
    pub order2: Vec<Vec<f64>>,
}

impl ScatteringMaps {
    pub fn maps(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(&self.order0[..])
            .chain(self.order1.iter().map(Vec::as_slice))
            .chain(self.order2.iter().map(Vec::as_slice))
    }
}

/// Real part of a low-passed signal. Rounding can leave values like -1e-17
/// where the true result is a nonnegative modulus average; those clamp to 0.
fn low_pass(bank: &FilterBank, spectrum: &[Complex64]) -> Vec<f64> {
    bank.fft
        .convolve(spectrum, &bank.phi)
        .into_iter()
        .map(|v| v.re.max(0.0))
        .collect()
}

fn modulus_spectrum(
    bank: &FilterBank,
    spectrum: &[Complex64],
    filter: &[Complex64],
) -> Vec<Complex64> {
    let u: Vec<f64> = bank
        .fft
        .convolve(spectrum, filter)
        .iter()
        .map(|v| v.norm())
        .collect();
    bank.fft.forward_real(&u)
}

pub fn scatter(img: &ImageTensor, bank: &FilterBank) -> Result<ScatteringMaps, ScatteringError> {
    let found = (img.height(), img.width(), img.channels());
    if found != (bank.height, bank.width, 1) {
        return Err(ScatteringError::SizeMismatch {
            expected: (bank.height, bank.width, 1),
            found,
        });
    }
    let x: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
    let spectrum = bank.fft.forward_real(&x);
    let order0 = bank
        .fft
        .convolve(&spectrum, &bank.phi)
        .iter()
        .map(|v| v.norm())
        .collect();

    let l = bank.orientations;
    let mut order1 = Vec::with_capacity(bank.psi.len());
    let mut order2 = Vec::new();
    for j1 in 0..bank.scales {
        for t1 in 0..l {
            let u1 = modulus_spectrum(bank, &spectrum, bank.psi(j1, t1));
            order1.push(low_pass(bank, &u1));
            for j2 in j1 + 1..bank.scales {
                for t2 in 0..l {
                    let u2 = modulus_spectrum(bank, &u1, bank.psi(j2, t2));
                    order2.push(low_pass(bank, &u2));
                }
            }
        }
    }
    Ok(ScatteringMaps {
        height: bank.height,
        width: bank.width,
        order0,
        order1,
        order2,
    })
}

/// Mean and population standard deviation of every map, in canonical order.
pub fn scattering_features(maps: &ScatteringMaps) -> FeatureVector {
    let mut values = Vec::new();
    for m in maps.maps() {
        let n = m.len().max(1) as f64;
        let mean = m.iter().sum::<f64>() / n;
        let var = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        values.push(mean);
        values.push(var.sqrt());
    }
    FeatureVector {
        values,
        source_layer: "scattering".into(),
        subject_id: None,
    }
}

/// Grayscale conversion and resize to the bank's size.
pub fn prepare_image(img: &ImageTensor, bank: &FilterBank) -> ImageTensor {
    let gray = img.to_grayscale();
    if (gray.height(), gray.width()) == (bank.height, bank.width) {
        gray
    } else {
        crate::dataset::resize_bilinear(&gray, bank.height, bank.width)
    }
}
