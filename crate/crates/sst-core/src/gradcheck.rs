//! Finite-difference verification of the analytic attention backward pass.
//!
//! The check projects the attention output onto a fixed random direction to
//! get a scalar loss, differentiates that loss analytically through
//! [`attention_backward`](crate::attention::attention_backward), and compares
//! every component against central finite differences of the loss itself.
//! The two paths share no code beyond the forward kernel being probed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{attention_backward, sparse_attention_with_state};
use crate::error::Result;
use crate::patterns::PatternSpec;
use crate::tensor::{Dims3, VideoFeatureTensor};

/// Central finite differences of a scalar function, one partial per input.
pub fn finite_diff_grad<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe);
        probe[i] = point[i] - step;
        let minus = f(&probe);
        probe[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Relative error with an absolute floor, so components whose true gradient
/// is zero (softmax-invariant directions) compare against finite-difference
/// noise instead of dividing by it.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub variant: String,
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_err_query: f64,
    pub max_rel_err_key: f64,
    pub max_rel_err_value: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_query
            .max(self.max_rel_err_key)
            .max(self.max_rel_err_value)
    }
}

/// Runs `trials` seeded gradient checks of sparse attention under `pattern`.
///
/// Each trial draws query/key/value tensors and a projection direction,
/// computes analytic gradients, and compares them to central finite
/// differences with the given step. Tolerance applies to the maximum
/// relative error across all components of all three inputs.
pub fn check_sparse_attention(
    pattern: &PatternSpec,
    channels: usize,
    dims: Dims3,
    trials: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut max_q: f64 = 0.0;
    let mut max_k: f64 = 0.0;
    let mut max_v: f64 = 0.0;

    for trial in 0..trials {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let n = channels * dims.cells();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let q0 = draw(&mut rng);
        let k0 = draw(&mut rng);
        let v0 = draw(&mut rng);
        let direction: Vec<f64> = draw(&mut rng);

        let make = |data: &[f64]| {
            VideoFeatureTensor::from_data(channels, dims, data.to_vec()).expect("sized to shape")
        };
        let loss = |q: &[f64], k: &[f64], v: &[f64]| -> f64 {
            let (out, _) =
                sparse_attention_with_state(&make(q), &make(k), &make(v), pattern, false)
                    .expect("forward succeeds on checked shapes");
            out.values
                .data()
                .iter()
                .zip(&direction)
                .map(|(o, d)| o * d)
                .sum()
        };

        let grad_out = make(&direction);
        let (_, state) =
            sparse_attention_with_state(&make(&q0), &make(&k0), &make(&v0), pattern, false)?;
        let analytic = attention_backward(&grad_out, &state)?;

        let fd_q = finite_diff_grad(|q| loss(q, &k0, &v0), &q0, step);
        let fd_k = finite_diff_grad(|k| loss(&q0, k, &v0), &k0, step);
        let fd_v = finite_diff_grad(|v| loss(&q0, &k0, v), &v0, step);

        for (a, f) in analytic.query.data().iter().zip(&fd_q) {
            max_q = max_q.max(relative_error(*a, *f));
        }
        for (a, f) in analytic.key.data().iter().zip(&fd_k) {
            max_k = max_k.max(relative_error(*a, *f));
        }
        for (a, f) in analytic.value.data().iter().zip(&fd_v) {
            max_v = max_v.max(relative_error(*a, *f));
        }
    }

    Ok(GradCheckReport {
        variant: pattern.variant.name().to_string(),
        trials,
        step,
        tolerance,
        max_rel_err_query: max_q,
        max_rel_err_key: max_k,
        max_rel_err_value: max_v,
        pass: max_q.max(max_k).max(max_v) < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::Variant;

    #[test]
    fn finite_diff_on_quadratic() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[1];
        let g = finite_diff_grad(f, &[2.0, 5.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn grid_backward_matches_finite_differences() {
        let report = check_sparse_attention(
            &PatternSpec::new(Variant::Grid),
            2,
            Dims3::new(2, 2, 2),
            3,
            1e-5,
            1e-4,
            1234,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn constant_query_rows_key_gradient() {
        // With constant query rows a uniform shift of all keys is a softmax
        // no-op; the analytic key gradient sums to zero exactly and still has
        // to match finite differences componentwise.
        let dims = Dims3::new(1, 2, 2);
        let channels = 2;
        let pattern = PatternSpec::new(Variant::Full);
        let q_data = vec![0.7; channels * dims.cells()];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = channels * dims.cells();
        let k0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direction: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let make =
            |data: &[f64]| VideoFeatureTensor::from_data(channels, dims, data.to_vec()).unwrap();
        let loss = |k: &[f64]| -> f64 {
            let (out, _) =
                sparse_attention_with_state(&make(&q_data), &make(k), &make(&v0), &pattern, false)
                    .unwrap();
            out.values
                .data()
                .iter()
                .zip(&direction)
                .map(|(o, d)| o * d)
                .sum()
        };
        let (_, state) =
            sparse_attention_with_state(&make(&q_data), &make(&k0), &make(&v0), &pattern, false)
                .unwrap();
        let analytic = attention_backward(&make(&direction), &state).unwrap();
        let fd = finite_diff_grad(loss, &k0, 1e-5);
        for (a, f) in analytic.key.data().iter().zip(&fd) {
            assert!(relative_error(*a, *f) < 1e-4);
        }
        // Shift-invariance direction: per-channel sums of the key gradient vanish.
        let cells = dims.cells();
        for c in 0..channels {
            let sum: f64 = analytic.key.data()[c * cells..(c + 1) * cells].iter().sum();
            assert!(sum.abs() < 1e-12);
        }
    }
}
