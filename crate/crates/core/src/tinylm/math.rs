//! Scalar numeric primitives.
//!
//! Production parameters and activations are stored as `f32`; every
//! reduction (dot products, norms, softmax sums, loss) accumulates in
//! `f64`. The primitives are generic over the storage scalar so the same
//! code also runs as a full 64-bit reference path for gradient
//! verification.

/// Storage scalar: `f32` in production, `f64` on the reference path.
pub trait Scalar: Copy + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Dot product with 64-bit accumulation.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.to_f64() * y.to_f64();
    }
    acc
}

/// `y = W x` where `W` is row-major `[out, inp]`.
pub fn matvec<T: Scalar>(w: &[T], x: &[T], out: usize, inp: usize) -> Vec<T> {
    debug_assert_eq!(w.len(), out * inp);
    debug_assert_eq!(x.len(), inp);
    (0..out)
        .map(|o| T::from_f64(dot(&w[o * inp..(o + 1) * inp], x)))
        .collect()
}

/// `dx += W^T dy` for row-major `W: [out, inp]`.
pub fn matvec_t_acc<T: Scalar>(dx: &mut [f64], w: &[T], dy: &[f64], out: usize, inp: usize) {
    for o in 0..out {
        let row = &w[o * inp..(o + 1) * inp];
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        for i in 0..inp {
            dx[i] += row[i].to_f64() * g;
        }
    }
}

/// `dW += dy ⊗ x` for row-major `dW: [out, inp]`.
pub fn outer_acc<T: Scalar>(dw: &mut [f64], dy: &[f64], x: &[T], out: usize, inp: usize) {
    for o in 0..out {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[o * inp..(o + 1) * inp];
        for i in 0..inp {
            row[i] += g * x[i].to_f64();
        }
    }
}

pub const RMS_EPS: f64 = 1e-5;

/// RMS normalization with a learned gain. Returns the normalized vector
/// and the inverse RMS needed by the backward pass.
pub fn rmsnorm<T: Scalar>(x: &[T], gain: &[T]) -> (Vec<T>, f64) {
    let n = x.len();
    let mut ms = 0.0f64;
    for v in x {
        ms += v.to_f64() * v.to_f64();
    }
    ms /= n as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    let y = x
        .iter()
        .zip(gain)
        .map(|(v, g)| T::from_f64(v.to_f64() * inv * g.to_f64()))
        .collect();
    (y, inv)
}

/// Backward through [`rmsnorm`]: given `dy`, input `x`, gain and the saved
/// inverse RMS, accumulates `dgain` and returns `dx`.
pub fn rmsnorm_backward<T: Scalar>(
    dy: &[f64],
    x: &[T],
    gain: &[T],
    inv: f64,
    dgain: &mut [f64],
) -> Vec<f64> {
    let n = x.len();
    let mut dz = vec![0.0f64; n];
    for i in 0..n {
        dgain[i] += dy[i] * x[i].to_f64() * inv;
        dz[i] = dy[i] * gain[i].to_f64();
    }
    let mut dot_zx = 0.0f64;
    for i in 0..n {
        dot_zx += dz[i] * x[i].to_f64();
    }
    let k = inv * inv * inv / n as f64;
    (0..n)
        .map(|i| inv * dz[i] - k * dot_zx * x[i].to_f64())
        .collect()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation `x * sigmoid(x)`.
pub fn silu<T: Scalar>(x: T) -> T {
    let xf = x.to_f64();
    T::from_f64(xf * sigmoid(xf))
}

/// Derivative of SiLU evaluated at the pre-activation.
pub fn silu_deriv<T: Scalar>(x: T) -> f64 {
    let xf = x.to_f64();
    let s = sigmoid(xf);
    s * (1.0 + xf * (1.0 - s))
}

/// Stable softmax over logits, computed and returned in `f64`.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|v| (v.to_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    exps
}

/// `log softmax(logits)[target]`, used by the cross-entropy loss.
pub fn log_softmax_at<T: Scalar>(logits: &[T], target: usize) -> f64 {
    let max = logits
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v.to_f64() - max).exp()).sum();
    logits[target].to_f64() - max - sum.ln()
}

/// Fixed sinusoidal position encodings, one row per position.
pub fn position_table<T: Scalar>(max_seq: usize, d_model: usize) -> Vec<Vec<T>> {
    (0..max_seq)
        .map(|p| {
            (0..d_model)
                .map(|i| {
                    let pair = (i / 2) as f64;
                    let rate = 10000f64.powf(2.0 * pair / d_model as f64);
                    let angle = p as f64 / rate;
                    T::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f32, 2.0, -0.5, 3.25]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f32_and_f64_paths_agree() {
        let x32 = [0.3f32, -1.2, 0.7, 2.0];
        let x64: Vec<f64> = x32.iter().map(|v| f64::from(*v)).collect();
        let g32 = [1.1f32, 0.9, 1.0, 1.3];
        let g64: Vec<f64> = g32.iter().map(|v| f64::from(*v)).collect();
        let (y32, inv32) = rmsnorm(&x32, &g32);
        let (y64, inv64) = rmsnorm(&x64, &g64);
        assert!((inv32 - inv64).abs() < 1e-7);
        for (a, b) in y32.iter().zip(&y64) {
            assert!((f64::from(*a) - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rmsnorm_backward_matches_finite_difference() {
        let x = [0.3f64, -1.2, 0.7, 2.0];
        let g = [1.1f64, 0.9, 1.0, 1.3];
        let dy = [0.5f64, -0.25, 1.0, 0.1];
        let mut dgain = vec![0.0f64; 4];
        let (_, inv) = rmsnorm(&x, &g);
        let dx = rmsnorm_backward(&dy, &x, &g, inv, &mut dgain);

        let f = |x: &[f64], g: &[f64]| -> f64 {
            let (y, _) = rmsnorm(x, g);
            y.iter().zip(&dy).map(|(v, d)| v * d).sum()
        };
        let eps = 1e-5f64;
        for i in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (f(&xp, &g) - f(&xm, &g)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-8, "dx[{i}]: fd={fd} an={}", dx[i]);
            let mut gp = g;
            let mut gm = g;
            gp[i] += eps;
            gm[i] -= eps;
            let fd = (f(&x, &gp) - f(&x, &gm)) / (2.0 * eps);
            assert!((fd - dgain[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn silu_deriv_matches_finite_difference() {
        for &x in &[-2.0f64, -0.3, 0.0, 0.9, 3.0] {
            let eps = 1e-6f64;
            let fd = (silu(x + eps) - silu(x - eps)) / (2.0 * eps);
            assert!((fd - silu_deriv(x)).abs() < 1e-8);
        }
    }
}
