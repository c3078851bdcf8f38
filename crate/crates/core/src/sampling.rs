//! Random configurations for verification suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::arm_model::{AngularConfig, ArmDims};
use crate::vector_fields::a_coeff;

/// Rejection threshold on `|A_i|` for regular sample suites.
pub const REGULAR_MIN_ABS_A: f64 = 0.05;

/// Options for [`random_regular_config`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularSampling {
    /// Reject samples with some `|A_i| < min_abs_a`.
    pub min_abs_a: f64,
    /// Reject samples whose standard chart has some `|sin θ^j| < chart_margin`, `j < k`.
    pub chart_margin: f64,
}

impl Default for RegularSampling {
    fn default() -> Self {
        Self {
            min_abs_a: REGULAR_MIN_ABS_A,
            chart_margin: 0.0,
        }
    }
}

pub fn random_unit(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// Base point standard normal, directions uniform on `S^k`.
pub fn random_config(dims: ArmDims, rng: &mut impl Rng) -> AngularConfig {
    let d = dims.space();
    let x0 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let segments = (0..dims.segments()).map(|_| random_unit(rng, d)).collect();
    AngularConfig::new(x0, segments).expect("sampled directions are nonzero")
}

/// Rejection-samples a configuration away from `A_i = 0` (and optionally
/// away from standard-chart boundaries).
pub fn random_regular_config(
    dims: ArmDims,
    rng: &mut impl Rng,
    opts: RegularSampling,
) -> AngularConfig {
    loop {
        let q = random_config(dims, rng);
        let a_ok = (1..=dims.n).all(|i| a_coeff(&q, i).abs() >= opts.min_abs_a);
        let chart_ok = opts.chart_margin <= 0.0
            || q.directions().iter().all(|d| {
                let t = d.angles().as_slice();
                t[..t.len() - 1].iter().all(|a| a.sin().abs() >= opts.chart_margin)
            });
        if a_ok && chart_ok {
            return q;
        }
    }
}

/// A regular sample with segment `index` turned orthogonal to segment
/// `index - 1`, so that `A_index = 0` exactly up to rounding. `1 ≤ index ≤ n`.
pub fn singular_config(dims: ArmDims, rng: &mut impl Rng, index: usize) -> AngularConfig {
    assert!(
        (1..=dims.n).contains(&index),
        "A_i is only defined for 1 <= i <= n"
    );
    let q = random_regular_config(dims, rng, RegularSampling::default());
    let mut segments: Vec<DVector<f64>> = q.directions().iter().map(|d| d.z().clone()).collect();
    let prev = segments[index - 1].clone();
    let mut w = random_unit(rng, dims.space());
    w -= &prev * prev.dot(&w);
    segments[index] = w.normalize();
    AngularConfig::new(q.x0().clone(), segments).expect("orthogonalized direction is nonzero")
}

/// Random orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let c = -q.column(j);
            q.set_column(j, &c);
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regular_samples_respect_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = ArmDims::new(2, 3).unwrap();
        for _ in 0..50 {
            let q = random_regular_config(dims, &mut rng, RegularSampling::default());
            for i in 1..=dims.n {
                assert!(a_coeff(&q, i).abs() >= REGULAR_MIN_ABS_A);
            }
        }
    }

    #[test]
    fn singular_sample_has_zero_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = ArmDims::new(3, 2).unwrap();
        for index in 1..=2 {
            let q = singular_config(dims, &mut rng, index);
            assert!(a_coeff(&q, index).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_orthogonal(&mut rng, 4);
        assert!((q.transpose() * &q - DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);
    }
}
