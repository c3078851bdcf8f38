//! Hyperspherical ("geographical") chart on `R^{k+1}`.
//!
//! Angles `θ = (θ^1, ..., θ^k)` map to the unit sphere by
//!
//! ```text
//! z^{k+1} = cos θ^1
//! z^{k}   = sin θ^1 cos θ^2
//! ...
//! z^2     = sin θ^1 ... sin θ^{k-1} cos θ^k
//! z^1     = sin θ^1 ... sin θ^{k-1} sin θ^k
//! ```
//!
//! and `Φ̂(ρ, θ) = ρ Φ(θ)`. Slices are 0-based: `theta[0]` is `θ^1` and
//! component `z[0]` is `z^1`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard on `sin θ^j`, `j < k`, below which the chart is treated as degenerate.
pub const CHART_GUARD: f64 = 1e-8;

/// Tolerance on `|‖z‖ - 1|` accepted for unit vectors.
pub const UNIT_TOL: f64 = 1e-12;

/// Hyperspherical angles of one sphere `S^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angles {
    theta: Vec<f64>,
}

impl Angles {
    /// Builds an angle vector, reducing the last angle into `[0, 2π)`.
    pub fn new(mut theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidArgument("angles need k >= 1 entries".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("angles must be finite".into()));
        }
        let last = theta.len() - 1;
        theta[last] = theta[last].rem_euclid(TAU);
        // rem_euclid can round up to exactly 2π for tiny negative inputs
        if theta[last] >= TAU {
            theta[last] = 0.0;
        }
        Ok(Self { theta })
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    /// True iff every `θ^j`, `j < k`, lies in `(ε, π - ε)` with `ε = CHART_GUARD`.
    pub fn is_interior(&self) -> bool {
        let k = self.k();
        self.theta[..k - 1]
            .iter()
            .all(|&t| t > CHART_GUARD && t < PI - CHART_GUARD)
    }

    /// Fails with `ChartDegenerate` when some `|sin θ^j|`, `j < k`, is below the guard.
    pub fn check_chart(&self) -> Result<()> {
        let k = self.k();
        for (j, &t) in self.theta[..k - 1].iter().enumerate() {
            let s = t.sin().abs();
            if s < CHART_GUARD {
                return Err(Error::ChartDegenerate { index: j + 1, sine: s });
            }
        }
        Ok(())
    }
}

/// A point of the unit sphere `S^k ⊂ R^{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(DVector<f64>);

impl UnitVector {
    /// Normalizes `v`; fails on zero, non-finite or 1-dimensional input.
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::Dimension(format!(
                "unit vectors live in R^(k+1) with k >= 1, got length {}",
                v.len()
            )));
        }
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(Self(v / norm))
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    pub fn k(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.0.dot(&other.0)
    }
}

/// Evaluated moving frame `{ν, Θ^1, ..., Θ^k}` at a sphere point.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub nu: UnitVector,
    /// `Θ^j = ∂Φ/∂θ^j`.
    pub tangents: Vec<DVector<f64>>,
    /// `‖Θ^j‖ = |sin θ^1 ⋯ sin θ^{j-1}|` (1 for `j = 1`).
    pub norms: Vec<f64>,
}

/// `Φ(θ)` for a raw angle slice. Total: no range requirement on the angles.
pub fn phi_coords(theta: &[f64]) -> DVector<f64> {
    let k = theta.len();
    let mut z = DVector::zeros(k + 1);
    let mut prefix = 1.0;
    for (j, &t) in theta.iter().enumerate() {
        // angle θ^{j+1} closes component z^{k+1-j}
        z[k - j] = prefix * t.cos();
        prefix *= t.sin();
    }
    z[0] = prefix;
    z
}

/// Partial derivatives `∂Φ/∂θ^j`, `j = 1..k`, for a raw angle slice.
pub fn phi_partials(theta: &[f64]) -> Vec<DVector<f64>> {
    let k = theta.len();
    let sines: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    let cosines: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
    (0..k)
        .map(|i| {
            let mut d = DVector::zeros(k + 1);
            // components z^{k+1-j} = (∏_{l<j} sin θ^l) cos θ^j, j = 0..k-1 (0-based)
            for j in i..k {
                let mut term = 1.0;
                for l in 0..j {
                    term *= if l == i { cosines[l] } else { sines[l] };
                }
                term *= if j == i { -sines[j] } else { cosines[j] };
                d[k - j] = term;
            }
            // z^1 = ∏_{l<k} sin θ^l
            let mut top = 1.0;
            for l in 0..k {
                top *= if l == i { cosines[l] } else { sines[l] };
            }
            d[0] = top;
            d
        })
        .collect()
}

/// Closed-form `‖∂Φ/∂θ^j‖` for `j = 1..k`.
pub fn partial_norms(theta: &[f64]) -> Vec<f64> {
    let mut norms = Vec::with_capacity(theta.len());
    let mut prefix = 1.0_f64;
    for &t in theta {
        norms.push(prefix.abs());
        prefix *= t.sin();
    }
    norms
}

/// `Φ(θ)` on the unit sphere.
pub fn phi(theta: &Angles) -> UnitVector {
    UnitVector(phi_coords(theta.as_slice()))
}

/// Angles of a point of `R^{k+1}` without any degeneracy check.
///
/// At chart-degenerate points the undetermined angles come out as 0 (or as
/// `atan2` of signed zeros); the result is still a preimage: `Φ(θ) = z/‖z‖`.
pub fn angles_unchecked(z: &[f64]) -> Vec<f64> {
    let k = z.len() - 1;
    let mut theta = vec![0.0; k];
    // tail[r] = ‖(z^1, ..., z^r)‖ accumulated from the front
    let mut partial_sq = vec![0.0; k + 2];
    for r in 0..=k {
        partial_sq[r + 1] = partial_sq[r] + z[r] * z[r];
    }
    for j in 0..k.saturating_sub(1) {
        // θ^{j+1} = atan2(‖(z^1..z^{k-j})‖, z^{k+1-j})
        let head = partial_sq[k - j].sqrt();
        theta[j] = head.atan2(z[k - j]);
    }
    theta[k - 1] = z[0].atan2(z[1]).rem_euclid(TAU);
    if theta[k - 1] >= TAU {
        theta[k - 1] = 0.0;
    }
    theta
}

/// Inverse of the chart. Fails with `ChartDegenerate` near `sin θ^j = 0`, `j < k`.
pub fn phi_inverse(z: &UnitVector) -> Result<Angles> {
    let angles = Angles::new(angles_unchecked(z.as_vector().as_slice()))?;
    angles.check_chart()?;
    Ok(angles)
}

/// Jacobian of `Φ̂(ρ, θ) = ρ Φ(θ)`: columns `Φ, ρ ∂Φ/∂θ^1, ..., ρ ∂Φ/∂θ^k`.
pub fn jacobian(rho: f64, theta: &Angles) -> DMatrix<f64> {
    let k = theta.k();
    let mut jac = DMatrix::zeros(k + 1, k + 1);
    jac.set_column(0, &phi_coords(theta.as_slice()));
    for (j, d) in phi_partials(theta.as_slice()).into_iter().enumerate() {
        jac.set_column(j + 1, &(d * rho));
    }
    jac
}

/// Closed form `det DΦ̂ = (-1)^{⌊(k+1)/2⌋} ρ^k ∏_{i=1}^{k-1} (sin θ^{k-i})^i`.
pub fn jacobian_determinant(rho: f64, theta: &Angles) -> f64 {
    let k = theta.k();
    let t = theta.as_slice();
    let sign = if matches!(k % 4, 0 | 3) { 1.0 } else { -1.0 };
    let mut det = sign * rho.powi(k as i32);
    for i in 1..k {
        det *= t[k - i - 1].sin().powi(i as i32);
    }
    det
}

/// Inverse of `jacobian(1, θ)`.
///
/// The columns of the Jacobian are pairwise orthogonal, so row `j` of the
/// inverse is column `j` divided by its squared norm.
pub fn jacobian_inverse(theta: &Angles) -> Result<DMatrix<f64>> {
    theta.check_chart()?;
    let t = theta.as_slice();
    let k = t.len();
    let norms = partial_norms(t);
    let mut inv = DMatrix::zeros(k + 1, k + 1);
    inv.set_row(0, &phi_coords(t).transpose());
    for (j, d) in phi_partials(t).into_iter().enumerate() {
        let scale = 1.0 / (norms[j] * norms[j]);
        inv.set_row(j + 1, &(d.transpose() * scale));
    }
    Ok(inv)
}

/// Moving frame `{ν, Θ^1, ..., Θ^k}` at `Φ(θ)`.
pub fn frame(theta: &Angles) -> TangentFrame {
    let t = theta.as_slice();
    TangentFrame {
        nu: phi(theta),
        tangents: phi_partials(t),
        norms: partial_norms(t),
    }
}

/// Coefficients `(A, B)` with `ν' = A ν + Σ_j B^j Θ^j`, the frame taken at `theta`.
///
/// `A = ⟨Φ(θ), Φ(θ')⟩` and `B^j = ⟨ν', Θ^j⟩ / ‖Θ^j‖²`, so that `Σ B^j Θ^j`
/// is the orthogonal projection of `ν'` onto the tangent space at `Φ(θ)`.
pub fn frame_change(theta: &Angles, theta_prime: &Angles) -> Result<(f64, DVector<f64>)> {
    if theta.k() != theta_prime.k() {
        return Err(Error::Dimension(format!(
            "frame change between S^{} and S^{}",
            theta.k(),
            theta_prime.k()
        )));
    }
    theta.check_chart()?;
    let nu_prime = phi_coords(theta_prime.as_slice());
    Ok(projection_coefficients(theta.as_slice(), &nu_prime))
}

/// `(⟨v, Φ(θ)⟩, (⟨v, ∂Φ/∂θ^j⟩ / ‖∂Φ/∂θ^j‖²)_j)` for an arbitrary vector `v`.
///
/// The caller is responsible for the chart guard.
pub fn projection_coefficients(theta: &[f64], v: &DVector<f64>) -> (f64, DVector<f64>) {
    let a = phi_coords(theta).dot(v);
    let norms = partial_norms(theta);
    let b = DVector::from_iterator(
        theta.len(),
        phi_partials(theta)
            .iter()
            .zip(&norms)
            .map(|(d, n)| d.dot(v) / (n * n)),
    );
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior(rng: &mut impl Rng, k: usize) -> Angles {
        let mut t: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.05..PI - 0.05)).collect();
        t.push(rng.gen_range(0.0..TAU));
        Angles::new(t).unwrap()
    }

    // central differences of Φ, independent of phi_partials
    fn fd_partials(theta: &[f64], h: f64) -> Vec<DVector<f64>> {
        (0..theta.len())
            .map(|j| {
                let mut p = theta.to_vec();
                let mut m = theta.to_vec();
                p[j] += h;
                m[j] -= h;
                (phi_coords(&p) - phi_coords(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn phi_known_points() {
        let z = phi(&Angles::new(vec![0.0, 0.0, 0.0]).unwrap());
        assert_eq!(z.as_vector().as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        let z = phi(&Angles::new(vec![PI / 2.0, PI / 2.0]).unwrap());
        let e = [1.0, 0.0, 0.0];
        for (a, b) in z.as_vector().iter().zip(e) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = phi(&Angles::new(vec![PI / 2.0]).unwrap());
        assert!((z.as_vector()[0] - 1.0).abs() < 1e-15 && z.as_vector()[1].abs() < 1e-15);
    }

    #[test]
    fn last_angle_reduced_mod_two_pi() {
        let a = Angles::new(vec![1.0, -0.5]).unwrap();
        assert!((a.as_slice()[1] - (TAU - 0.5)).abs() < 1e-15);
        let a = Angles::new(vec![7.0]).unwrap();
        assert!((a.as_slice()[0] - (7.0 - TAU)).abs() < 1e-15);
        assert!(Angles::new(vec![]).is_err());
    }

    #[test]
    fn interior_flag() {
        assert!(Angles::new(vec![0.3, 5.0]).unwrap().is_interior());
        assert!(!Angles::new(vec![0.0, 1.0]).unwrap().is_interior());
        assert!(!Angles::new(vec![1.0, PI, 1.0]).unwrap().is_interior());
        // k = 1 has no constrained angle
        assert!(Angles::new(vec![0.0]).unwrap().is_interior());
    }

    #[test]
    fn inverse_of_north_pole_is_degenerate() {
        let z = UnitVector::from_slice(&[0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(phi_inverse(&z), Err(Error::ChartDegenerate { index: 1, .. })));
        // the unchecked angles still form a preimage
        let t = angles_unchecked(z.as_vector().as_slice());
        assert_eq!(t[0], 0.0);
        let back = phi_coords(&t);
        assert!((back - z.as_vector()).norm() < 1e-15);
    }

    #[test]
    fn inverse_of_e1() {
        let z = UnitVector::from_slice(&[1.0, 0.0, 0.0]).unwrap();
        let t = phi_inverse(&z).unwrap();
        assert!((t.as_slice()[0] - PI / 2.0).abs() < 1e-15);
        assert!((t.as_slice()[1] - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=5 {
            for _ in 0..200 {
                let t = interior(&mut rng, k);
                let back = phi_inverse(&phi(&t)).unwrap();
                for (a, b) in back.as_slice().iter().zip(t.as_slice()) {
                    let d = (a - b).rem_euclid(TAU);
                    assert!(d.min(TAU - d) < 1e-10, "k={k} {t:?} -> {back:?}");
                }
                let z = phi(&back);
                assert!((z.as_vector() - phi(&t).as_vector()).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobian_at_zero_k1() {
        let j = jacobian(1.0, &Angles::new(vec![0.0]).unwrap());
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((j - expected).amax() < 1e-15);
    }

    #[test]
    fn jacobian_columns_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..=5 {
            for _ in 0..50 {
                let t = interior(&mut rng, k);
                let rho = rng.gen_range(0.2..3.0);
                let jac = jacobian(rho, &t);
                let fd = fd_partials(t.as_slice(), 1e-6);
                assert!((jac.column(0) - phi_coords(t.as_slice())).amax() < 1e-15);
                for j in 0..k {
                    let col = jac.column(j + 1).into_owned();
                    let expect = &fd[j] * rho;
                    let scale = expect.norm().max(1.0);
                    assert!((col - expect).norm() / scale < 1e-6);
                }
            }
        }
    }

    #[test]
    fn determinant_closed_form_matches_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 1..=6 {
            for _ in 0..100 {
                let t = interior(&mut rng, k);
                let rho = rng.gen_range(0.2..3.0);
                let numeric = jacobian(rho, &t).determinant();
                let closed = jacobian_determinant(rho, &t);
                assert!(
                    (numeric - closed).abs() <= 1e-8 * closed.abs(),
                    "k={k}: {numeric} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn unit_determinant_on_equator_k2() {
        let t = Angles::new(vec![PI / 2.0, 1.234]).unwrap();
        let det = jacobian(1.0, &t).determinant();
        assert!((det.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_jacobian_k1_is_swap() {
        let inv = jacobian_inverse(&Angles::new(vec![0.0]).unwrap()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((inv - expected).amax() < 1e-15);
    }

    #[test]
    fn inverse_jacobian_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 1..=5 {
            for _ in 0..100 {
                let t = interior(&mut rng, k);
                let prod = jacobian_inverse(&t).unwrap() * jacobian(1.0, &t);
                let eye = DMatrix::<f64>::identity(k + 1, k + 1);
                assert!((prod - eye).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn single_norm_inverse_is_not_an_inverse() {
        // transpose of the matrix with columns Φ, ∂Φ/∂θ^j / ‖∂Φ/∂θ^j‖
        let t = Angles::new(vec![0.7, 1.1, 2.0]).unwrap();
        let jac = jacobian(1.0, &t);
        let norms = partial_norms(t.as_slice());
        let mut m = jac.clone();
        for j in 0..3 {
            let c = m.column(j + 1) / norms[j];
            m.set_column(j + 1, &c);
        }
        let prod = m.transpose() * &jac;
        assert!((prod[(2, 2)] - norms[1]).abs() < 1e-12);
        assert!((prod[(2, 2)] - 1.0).abs() > 0.1);
    }

    #[test]
    fn inverse_jacobian_degenerate() {
        let t = Angles::new(vec![1e-12, 0.3]).unwrap();
        assert!(matches!(jacobian_inverse(&t), Err(Error::ChartDegenerate { .. })));
    }

    #[test]
    fn frame_known_points() {
        let f = frame(&Angles::new(vec![PI / 2.0]).unwrap());
        assert!((f.nu.as_vector() - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-15);
        assert!((&f.tangents[0] - DVector::from_vec(vec![0.0, -1.0])).amax() < 1e-15);

        let f = frame(&Angles::new(vec![PI / 2.0, 0.0]).unwrap());
        assert!((f.nu.as_vector() - DVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-15);
        assert!((&f.tangents[0] - DVector::from_vec(vec![0.0, 0.0, -1.0])).amax() < 1e-15);
        assert!((&f.tangents[1] - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn frame_orthogonality_and_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for k in 1..=5 {
            for _ in 0..100 {
                let t = interior(&mut rng, k);
                let f = frame(&t);
                let mut all = vec![f.nu.as_vector().clone()];
                all.extend(f.tangents.iter().cloned());
                for a in 0..all.len() {
                    for b in a + 1..all.len() {
                        assert!(all[a].dot(&all[b]).abs() < 1e-10);
                    }
                }
                assert!((f.tangents[0].norm() - 1.0).abs() < 1e-10);
                let mut prod: f64 = 1.0;
                for j in 0..k {
                    assert!((f.tangents[j].norm() - prod.abs()).abs() < 1e-10);
                    assert!((f.norms[j] - prod.abs()).abs() < 1e-15);
                    prod *= t.as_slice()[j].sin();
                }
            }
        }
    }

    #[test]
    fn frame_change_identity() {
        let t = Angles::new(vec![0.4, 2.0, 1.0]).unwrap();
        let (a, b) = frame_change(&t, &t).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        assert!(b.amax() < 1e-15);
    }

    #[test]
    fn frame_change_k1_reduces_to_angle_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let t = rng.gen_range(-10.0..10.0);
            let tp = rng.gen_range(-10.0..10.0);
            let (a, b) = frame_change(
                &Angles::new(vec![t]).unwrap(),
                &Angles::new(vec![tp]).unwrap(),
            )
            .unwrap();
            assert!((a - (tp - t).cos()).abs() < 1e-12);
            assert!((b[0] - (tp - t).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_change_reconstructs_and_pythagoras() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for k in 1..=5 {
            for _ in 0..100 {
                let t = interior(&mut rng, k);
                let tp = interior(&mut rng, k);
                let (a, b) = frame_change(&t, &tp).unwrap();
                let f = frame(&t);
                let mut tangential = DVector::zeros(k + 1);
                for j in 0..k {
                    tangential += &f.tangents[j] * b[j];
                }
                let rebuilt = f.nu.as_vector() * a + &tangential;
                assert!((rebuilt - phi(&tp).as_vector()).amax() < 1e-9);
                assert!((a * a + tangential.norm_squared() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_vector_normalizes() {
        let u = UnitVector::from_slice(&[3.0, 4.0]).unwrap();
        assert!((u.as_vector().norm() - 1.0).abs() <= UNIT_TOL);
        assert!(UnitVector::from_slice(&[0.0, 0.0]).is_err());
        assert!(UnitVector::from_slice(&[1.0]).is_err());
    }
}
