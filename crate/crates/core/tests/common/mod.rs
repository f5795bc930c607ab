//! Reference implementations used as test oracles. They share no code with the library.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 3x3 stride-1 zero-padded cross-correlation, input stored (h, w, c), kernel (o, c, 3, 3).
pub fn naive_conv(
    input: &[f32],
    (h, w, c): (usize, usize, usize),
    kernel: &[f32],
    bias: &[f32],
) -> Vec<f64> {
    let o = bias.len();
    let mut out = vec![0f64; h * w * o];
    for oc in 0..o {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[oc] as f64;
                for ic in 0..c {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (yy, xx) =
                                (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let v = input[(yy as usize * w + xx as usize) * c + ic] as f64;
                            let k = kernel[((oc * c + ic) * 3 + dy) * 3 + dx] as f64;
                            acc += v * k;
                        }
                    }
                }
                out[(y * w + x) * o + oc] = acc;
            }
        }
    }
    out
}

/// Exact optimum of a linear soft-margin SVM dual, found by enumerating
/// which points sit at 0, at C, or strictly between.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
    pub dual: f64,
}

fn kernel(x: &[Vec<f64>], i: usize, j: usize) -> f64 {
    x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum()
}

pub fn brute_force_svm(x: &[Vec<f64>], y: &[f64], c: f64) -> Option<OracleSolution> {
    let n = x.len();
    let d = x[0].len();
    let eps = 1e-9 * c.max(1.0);
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        // 0: alpha = 0, 1: alpha = C, 2: free
        let mut state = vec![0u8; n];
        let mut rem = code;
        for s in state.iter_mut() {
            *s = (rem % 3) as u8;
            rem /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        if free.len() > d + 1 {
            continue;
        }
        let mut alpha: Vec<f64> = state
            .iter()
            .map(|&s| if s == 1 { c } else { 0.0 })
            .collect();
        let b_range;
        if free.is_empty() {
            let sum: f64 = (0..n).map(|i| alpha[i] * y[i]).sum();
            if sum.abs() > eps {
                continue;
            }
            b_range = None;
        } else {
            let m = free.len();
            let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut rhs = DVector::<f64>::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = y[i] * y[j] * kernel(x, i, j);
                }
                a[(r, m)] = y[i];
                let bound: f64 = (0..n)
                    .filter(|&j| state[j] == 1)
                    .map(|j| c * y[i] * y[j] * kernel(x, i, j))
                    .sum();
                rhs[r] = 1.0 - bound;
            }
            for (s, &j) in free.iter().enumerate() {
                a[(m, s)] = y[j];
            }
            rhs[m] = -(0..n)
                .filter(|&j| state[j] == 1)
                .map(|j| c * y[j])
                .sum::<f64>();
            let lu = a.lu();
            if lu.determinant().abs() < 1e-12 {
                continue;
            }
            let sol = lu.solve(&rhs)?;
            if free
                .iter()
                .enumerate()
                .any(|(r, _)| sol[r] < -eps || sol[r] > c + eps)
            {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r].clamp(0.0, c);
            }
            b_range = Some(sol[m]);
        }

        let mut w = vec![0.0; d];
        for i in 0..n {
            for (wk, xk) in w.iter_mut().zip(&x[i]) {
                *wk += alpha[i] * y[i] * xk;
            }
        }
        let wx: Vec<f64> = x
            .iter()
            .map(|xi| xi.iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect();
        // Bounds on b from the points at 0 (y f >= 1) and at C (y f <= 1).
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in (0..n).filter(|&i| state[i] != 2) {
            let t = y[i] - wx[i];
            // y(wx + b) >= 1  <=>  b >= t for y=+1, b <= t for y=-1; reversed at C.
            if (y[i] > 0.0) == (state[i] == 0) {
                lo = lo.max(t);
            } else {
                hi = hi.min(t);
            }
        }
        let feasible = match b_range {
            Some(b) => b >= lo - 1e-7 && b <= hi + 1e-7,
            None => lo <= hi + 1e-7,
        };
        if !feasible {
            continue;
        }
        let dual = alpha.iter().sum::<f64>() - 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        return Some(OracleSolution { alpha, w, dual });
    }
    None
}

/// Two Gaussian blobs in `d` dimensions, labels +1 / -1, centres `sep` apart along every axis.
pub fn blobs(rng: &mut ChaCha8Rng, n: usize, d: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        let centre = label * sep / 2.0;
        x.push((0..d).map(|_| centre + rng.gen_range(-1.0..1.0)).collect());
        y.push(label);
    }
    (x, y)
}

/// Largest violation of the box, equality and complementary-slackness conditions.
pub fn kkt_violation(x: &[Vec<f64>], y: &[f64], c: f64, alpha: &[f64], w: &[f64], b: f64) -> f64 {
    let mut worst: f64 = (0..x.len()).map(|i| alpha[i] * y[i]).sum::<f64>().abs();
    let scale = c.max(1.0) * 1e-9;
    for i in 0..x.len() {
        let margin = y[i] * (x[i].iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b);
        let v = if alpha[i] <= scale {
            (1.0 - margin).max(0.0)
        } else if alpha[i] >= c - scale {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v).max(-alpha[i]).max(alpha[i] - c);
    }
    worst
}
