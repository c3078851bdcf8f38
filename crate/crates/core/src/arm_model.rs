//! Configuration spaces of the articulated arm.
//!
//! The arm has joints `M_0, ..., M_{n+1}` in `R^{k+1}` joined by `n + 1`
//! unit segments. The Cartesian space `C` stores the joints; the angular
//! space `S = R^{k+1} × (S^k)^{n+1}` stores the base joint `x_0` and the
//! segment directions `z_i = x_i - x_{i-1}`, `i = 1..n+1`. `Γ` maps one to
//! the other.
//!
//! Indexing: segment `s = 0..=n` carries `z_{s+1}` and lives on sphere `s`,
//! whose chart angles are `θ_s`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperspherical::{angles_unchecked, phi, Angles, UnitVector};

/// Tolerance on `|Ψ_i|` for the Cartesian invariant.
pub const CONSTRAINT_INVARIANT_TOL: f64 = 1e-10;
/// Tolerance on `|Ψ_i|` accepted by operations such as [`gamma`].
pub const CONSTRAINT_PRECONDITION_TOL: f64 = 1e-8;

/// Sphere dimension `k` and arm size `n` (`n + 1` segments, `n + 2` joints).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmDims {
    pub k: usize,
    pub n: usize,
}

impl ArmDims {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        Ok(Self { k, n })
    }

    pub fn segments(&self) -> usize {
        self.n + 1
    }

    pub fn joints(&self) -> usize {
        self.n + 2
    }

    /// Dimension of the ambient space `R^{k+1}`.
    pub fn space(&self) -> usize {
        self.k + 1
    }

    /// `dim S = k(n+2) + 1`.
    pub fn manifold_dim(&self) -> usize {
        self.k * (self.n + 2) + 1
    }

    /// `dim (R^{k+1})^{n+2}`.
    pub fn ambient_dim(&self) -> usize {
        (self.k + 1) * (self.n + 2)
    }
}

/// Joint positions `x_0, ..., x_{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianConfig {
    dims: ArmDims,
    points: Vec<DVector<f64>>,
}

impl CartesianConfig {
    /// Builds a configuration and checks `|Ψ_i| ≤ 1e-10` for every segment.
    pub fn new(dims: ArmDims, points: Vec<DVector<f64>>) -> Result<Self> {
        let c = Self::unchecked(dims, points)?;
        for (segment, psi) in constraint_residuals(&c).into_iter().enumerate() {
            if psi.abs() > CONSTRAINT_INVARIANT_TOL {
                return Err(Error::ConstraintViolated {
                    segment,
                    residual: psi.abs(),
                });
            }
        }
        Ok(c)
    }

    /// Builds a configuration checking only shapes; segment lengths are free.
    pub fn unchecked(dims: ArmDims, points: Vec<DVector<f64>>) -> Result<Self> {
        if points.len() != dims.joints() {
            return Err(Error::Dimension(format!(
                "expected {} joints, got {}",
                dims.joints(),
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dims.space()) {
            return Err(Error::Dimension(format!(
                "joint of length {} in R^{}",
                p.len(),
                dims.space()
            )));
        }
        Ok(Self { dims, points })
    }

    pub fn from_flat(dims: ArmDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.ambient_dim() {
            return Err(Error::Dimension(format!(
                "flat Cartesian vector of length {} for ambient dimension {}",
                flat.len(),
                dims.ambient_dim()
            )));
        }
        let d = dims.space();
        let points = flat
            .chunks(d)
            .map(DVector::from_column_slice)
            .collect();
        Self::unchecked(dims, points)
    }

    pub fn dims(&self) -> ArmDims {
        self.dims
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    /// `x_{s+1} - x_s`.
    pub fn segment(&self, s: usize) -> DVector<f64> {
        &self.points[s + 1] - &self.points[s]
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let d = self.dims.space();
        let mut flat = DVector::zeros(self.dims.ambient_dim());
        for (i, p) in self.points.iter().enumerate() {
            flat.rows_mut(i * d, d).copy_from(p);
        }
        flat
    }
}

/// One segment direction: a unit vector and an angle representation of it.
///
/// The unit vector is the source of truth. The angles always satisfy
/// `Φ(θ) = z`; they may sit at a chart boundary, see [`Direction::is_chart_regular`].
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    z: UnitVector,
    angles: Angles,
}

impl Direction {
    pub fn from_unit(z: UnitVector) -> Self {
        let angles = Angles::new(angles_unchecked(z.as_vector().as_slice()))
            .expect("unit vectors have k >= 1 and finite entries");
        Self { z, angles }
    }

    pub fn from_angles(angles: Angles) -> Self {
        Self {
            z: phi(&angles),
            angles,
        }
    }

    pub fn z(&self) -> &DVector<f64> {
        self.z.as_vector()
    }

    pub fn unit(&self) -> &UnitVector {
        &self.z
    }

    pub fn angles(&self) -> &Angles {
        &self.angles
    }

    /// True when the stored chart is invertible here (`|sin θ^j| ≥ ε`, `j < k`).
    pub fn is_chart_regular(&self) -> bool {
        self.angles.check_chart().is_ok()
    }
}

/// A point of `S = R^{k+1} × (S^k)^{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigRecord", into = "ConfigRecord")]
pub struct AngularConfig {
    dims: ArmDims,
    x0: DVector<f64>,
    dirs: Vec<Direction>,
}

impl AngularConfig {
    /// Builds a configuration from a base point and `n + 1` direction vectors,
    /// renormalizing each direction.
    pub fn new(x0: DVector<f64>, segments: Vec<DVector<f64>>) -> Result<Self> {
        let dirs = segments
            .into_iter()
            .map(|z| UnitVector::new(z).map(Direction::from_unit))
            .collect::<Result<Vec<_>>>()?;
        Self::from_directions(x0, dirs)
    }

    pub fn from_angles(x0: DVector<f64>, angles: Vec<Angles>) -> Result<Self> {
        Self::from_directions(x0, angles.into_iter().map(Direction::from_angles).collect())
    }

    pub fn from_directions(x0: DVector<f64>, dirs: Vec<Direction>) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::Dimension("an arm needs at least one segment".into()));
        }
        let k = x0.len().checked_sub(1).filter(|&k| k >= 1).ok_or_else(|| {
            Error::Dimension("base point must live in R^(k+1) with k >= 1".into())
        })?;
        if let Some(d) = dirs.iter().find(|d| d.z().len() != k + 1) {
            return Err(Error::Dimension(format!(
                "direction of length {} in R^{}",
                d.z().len(),
                k + 1
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("base point must be finite".into()));
        }
        let dims = ArmDims::new(k, dirs.len() - 1)?;
        Ok(Self { dims, x0, dirs })
    }

    pub fn dims(&self) -> ArmDims {
        self.dims
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn directions(&self) -> &[Direction] {
        &self.dirs
    }

    pub fn direction(&self, s: usize) -> &Direction {
        &self.dirs[s]
    }

    /// Direction `z_{s+1}` of segment `s`.
    pub fn segment(&self, s: usize) -> &DVector<f64> {
        self.dirs[s].z()
    }

    pub fn angles(&self, s: usize) -> &Angles {
        self.dirs[s].angles()
    }

    /// Indices of segments whose stored chart is degenerate.
    pub fn chart_degenerate_segments(&self) -> Vec<usize> {
        (0..self.dirs.len())
            .filter(|&s| !self.dirs[s].is_chart_regular())
            .collect()
    }

    /// Free coordinates: `k + 1` for the base point plus `k` per sphere.
    pub fn free_coordinates(&self) -> usize {
        self.x0.len() + self.dirs.iter().map(|d| d.angles().k()).sum::<usize>()
    }

    /// Applies the orthogonal map `r` to every direction and to the base point.
    pub fn transformed(&self, r: &DMatrix<f64>) -> Result<Self> {
        let segments = self.dirs.iter().map(|d| r * d.z()).collect();
        Self::new(r * &self.x0, segments)
    }

    /// Concatenation `[x_0 | z_1 | ... | z_{n+1}]`.
    pub fn to_embedded(&self) -> DVector<f64> {
        let d = self.dims.space();
        let mut flat = DVector::zeros(self.dims.ambient_dim());
        flat.rows_mut(0, d).copy_from(&self.x0);
        for (s, dir) in self.dirs.iter().enumerate() {
            flat.rows_mut((s + 1) * d, d).copy_from(dir.z());
        }
        flat
    }
}

/// `Γ(x_0, ..., x_{n+1}) = (x_0, x_1 - x_0, ..., x_{n+1} - x_n)`.
pub fn gamma(c: &CartesianConfig) -> Result<AngularConfig> {
    for (segment, psi) in constraint_residuals(c).into_iter().enumerate() {
        if psi.abs() > CONSTRAINT_PRECONDITION_TOL {
            return Err(Error::ConstraintViolated {
                segment,
                residual: psi.abs(),
            });
        }
    }
    let segments = (0..c.dims().segments()).map(|s| c.segment(s)).collect();
    AngularConfig::new(c.point(0).clone(), segments)
}

/// `Γ^{-1}`: `x_i = x_0 + Σ_{j ≤ i} z_j`.
pub fn gamma_inverse(a: &AngularConfig) -> CartesianConfig {
    let mut points = Vec::with_capacity(a.dims().joints());
    let mut current = a.x0().clone();
    points.push(current.clone());
    for dir in a.directions() {
        current += dir.z();
        points.push(current.clone());
    }
    CartesianConfig {
        dims: a.dims(),
        points,
    }
}

/// `Ψ_i = ‖x_{i+1} - x_i‖² - 1`, `i = 0..n`.
pub fn constraint_residuals(c: &CartesianConfig) -> Vec<f64> {
    (0..c.dims().segments())
        .map(|s| c.segment(s).norm_squared() - 1.0)
        .collect()
}

/// Fields `𝒩_i`: `(x_{i+1} - x_i)` in joint slot `i + 1` and its negative in slot `i`.
pub fn normal_fields(c: &CartesianConfig) -> Vec<DVector<f64>> {
    let dims = c.dims();
    let d = dims.space();
    (0..dims.segments())
        .map(|s| {
            let seg = c.segment(s);
            let mut v = DVector::zeros(dims.ambient_dim());
            v.rows_mut(s * d, d).copy_from(&(-&seg));
            v.rows_mut((s + 1) * d, d).copy_from(&seg);
            v
        })
        .collect()
}

/// JSON layout `{"k": .., "n": .., "x0": [..], "z": [[..], ..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub k: usize,
    pub n: usize,
    pub x0: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

impl TryFrom<ConfigRecord> for AngularConfig {
    type Error = Error;

    fn try_from(r: ConfigRecord) -> Result<Self> {
        let dims = ArmDims::new(r.k, r.n)?;
        if r.x0.len() != dims.space() || r.z.len() != dims.segments() {
            return Err(Error::Dimension(format!(
                "config for k = {}, n = {} needs x0 of length {} and {} directions",
                r.k,
                r.n,
                dims.space(),
                dims.segments()
            )));
        }
        if r.z.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("directions must be finite".into()));
        }
        AngularConfig::new(
            DVector::from_vec(r.x0),
            r.z.into_iter().map(DVector::from_vec).collect(),
        )
    }
}

impl From<AngularConfig> for ConfigRecord {
    fn from(a: AngularConfig) -> Self {
        ConfigRecord {
            k: a.dims.k,
            n: a.dims.n,
            x0: a.x0.iter().copied().collect(),
            z: a.dirs.iter().map(|d| d.z().iter().copied().collect()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::random_config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn dims_bookkeeping() {
        let d = ArmDims::new(2, 3).unwrap();
        assert_eq!(d.manifold_dim(), 11);
        assert_eq!(d.ambient_dim(), 15);
        assert!(ArmDims::new(0, 1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, n) in [(1, 0), (2, 2), (3, 4)] {
            let q = random_config(ArmDims::new(k, n).unwrap(), &mut rng);
            assert_eq!(q.free_coordinates(), k * (n + 2) + 1);
        }
    }

    #[test]
    fn gamma_single_segment() {
        let dims = ArmDims::new(1, 0).unwrap();
        let c = CartesianConfig::new(dims, vec![v(&[0.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        let a = gamma(&c).unwrap();
        assert_eq!(a.x0().as_slice(), &[0.0, 0.0]);
        assert_eq!(a.segment(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(a.angles(0).as_slice(), &[0.0]);
    }

    #[test]
    fn gamma_collinear_along_last_axis() {
        let dims = ArmDims::new(2, 2).unwrap();
        let points = (0..4).map(|i| v(&[0.0, 0.0, i as f64])).collect();
        let a = gamma(&CartesianConfig::new(dims, points).unwrap()).unwrap();
        for s in 0..3 {
            assert_eq!(a.segment(s).as_slice(), &[0.0, 0.0, 1.0]);
            assert_eq!(a.angles(s).as_slice()[0], 0.0);
        }
        assert_eq!(a.chart_degenerate_segments(), vec![0, 1, 2]);
    }

    #[test]
    fn gamma_rejects_broken_constraint() {
        let dims = ArmDims::new(1, 0).unwrap();
        let c = CartesianConfig::unchecked(dims, vec![v(&[0.0, 0.0]), v(&[2.0, 0.0])]).unwrap();
        assert_eq!(constraint_residuals(&c), vec![3.0]);
        assert!(matches!(gamma(&c), Err(Error::ConstraintViolated { segment: 0, .. })));
        assert!(CartesianConfig::new(dims, vec![v(&[0.0, 0.0]), v(&[2.0, 0.0])]).is_err());
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = ArmDims::new(2, 3).unwrap();
        for _ in 0..100 {
            let a = random_config(dims, &mut rng);
            let c = gamma_inverse(&a);
            assert!(constraint_residuals(&c).iter().all(|p| p.abs() <= 1e-12));
            let back = gamma(&c).unwrap();
            assert!((back.to_embedded() - a.to_embedded()).amax() < 1e-9);
            let again = gamma_inverse(&back);
            assert!((again.to_flat() - c.to_flat()).amax() < 1e-9);
        }
    }

    #[test]
    fn gamma_inverse_k1_matches_complex_sum() {
        // m_r = m_0 + Σ_{l<r} e^{iθ_l} after the axis swap x ↔ y of the chart
        let thetas = [0.3, -1.2, 2.5];
        let angles = thetas.iter().map(|&t| Angles::new(vec![t]).unwrap()).collect();
        let a = AngularConfig::from_angles(v(&[0.5, -0.25]), angles).unwrap();
        let c = gamma_inverse(&a);
        let (mut re, mut im) = (-0.25, 0.5);
        for (r, &t) in thetas.iter().enumerate() {
            re += t.cos();
            im += t.sin();
            let p = c.point(r + 1);
            assert!((p[1] - re).abs() < 1e-14 && (p[0] - im).abs() < 1e-14);
        }
    }

    #[test]
    fn perturbed_residual_is_squared_length_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = ArmDims::new(3, 2).unwrap();
        let a = random_config(dims, &mut rng);
        let mut flat = gamma_inverse(&a).to_flat();
        for (i, x) in flat.iter_mut().enumerate() {
            *x += 1e-3 * ((i * 7 % 5) as f64 - 2.0);
        }
        let c = CartesianConfig::from_flat(dims, flat.as_slice()).unwrap();
        for (s, psi) in constraint_residuals(&c).into_iter().enumerate() {
            let z = c.point(s + 1) - c.point(s);
            assert_eq!(psi, z.norm_squared() - 1.0);
        }
    }

    #[test]
    fn normal_field_blocks() {
        let dims = ArmDims::new(1, 0).unwrap();
        let c = CartesianConfig::new(dims, vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
        assert_eq!(normal_fields(&c)[0].as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn normal_fields_are_half_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = ArmDims::new(2, 3).unwrap();
        for _ in 0..20 {
            let c = gamma_inverse(&random_config(dims, &mut rng));
            let flat = c.to_flat();
            let normals = normal_fields(&c);
            let h = 1e-6;
            for s in 0..dims.segments() {
                let mut grad = DVector::zeros(flat.len());
                for j in 0..flat.len() {
                    let mut p = flat.clone();
                    let mut m = flat.clone();
                    p[j] += h;
                    m[j] -= h;
                    let fp = constraint_residuals(&CartesianConfig::from_flat(dims, p.as_slice()).unwrap())[s];
                    let fm = constraint_residuals(&CartesianConfig::from_flat(dims, m.as_slice()).unwrap())[s];
                    grad[j] = (fp - fm) / (2.0 * h);
                }
                assert!((grad * 0.5 - &normals[s]).amax() < 1e-6);
            }
            for i in 0..dims.segments() {
                for j in i + 2..dims.segments() {
                    assert_eq!(normals[i].dot(&normals[j]), 0.0);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let text = r#"{"k":2,"n":1,"x0":[0,0,0],"z":[[0,0,2],[3,4,0]]}"#;
        let q: AngularConfig = serde_json::from_str(text).unwrap();
        assert!((q.segment(0).norm() - 1.0).abs() < 1e-15);
        assert!((q.segment(1)[0] - 0.6).abs() < 1e-15);
        let back: AngularConfig = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back.to_embedded(), q.to_embedded());

        let wrong = r#"{"k":2,"n":2,"x0":[0,0,0],"z":[[0,0,1],[1,0,0]]}"#;
        assert!(serde_json::from_str::<AngularConfig>(wrong).is_err());
        let zero = r#"{"k":1,"n":0,"x0":[0,0],"z":[[0,0]]}"#;
        assert!(serde_json::from_str::<AngularConfig>(zero).is_err());
    }

    #[test]
    fn inner_products_match_chart_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dims = ArmDims::new(3, 3).unwrap();
        for _ in 0..50 {
            let a = random_config(dims, &mut rng);
            let c = gamma_inverse(&a);
            for i in 1..=dims.n {
                let cart = c.segment(i - 1).dot(&c.segment(i));
                let chart = crate::hyperspherical::phi_coords(a.angles(i - 1).as_slice())
                    .dot(&crate::hyperspherical::phi_coords(a.angles(i).as_slice()));
                assert!((cart - chart).abs() < 1e-9);
            }
        }
    }
}
