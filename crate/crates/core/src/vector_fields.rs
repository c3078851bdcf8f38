//! Control vector fields of the arm, in three coordinate systems.
//!
//! * **Cartesian**: joint coordinates `[x_0 | x_1 | ... | x_{n+1}]`, fields
//!   `𝒵_i` and the generators of `Δ = TC ∩ ℰ`.
//! * **Embedded**: `Γ`-coordinates `[x_0 | z_1 | ... | z_{n+1}]`, every
//!   sphere field written as an ambient vector tangent to its sphere.
//! * **Chart**: `[x_0 | θ_0 | ... | θ_n]`, dimension `k(n+2)+1`, with one
//!   hyperspherical chart per sphere, optionally pre-composed with an
//!   orthogonal map so that the chart can be centered anywhere.
//!
//! Field indices follow the arm notation: `Z_0` moves the base point along
//! `z_1`; `Z_i` (`1 ≤ i ≤ n`) lives on sphere `i - 1` and is the projection of
//! `z_{i+1}` onto the tangent space at `z_i`; `X_m^0 = Σ_{i≤m} f_m^i Z_i` and
//! `X_m^i = ∂/∂θ_m^i`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::arm_model::{gamma_inverse, normal_fields, AngularConfig, ArmDims, CartesianConfig};
use crate::error::{Error, Result};
use crate::hyperspherical::{
    angles_unchecked, jacobian_inverse, partial_norms, phi_coords, phi_partials, Angles,
    CHART_GUARD,
};
use crate::span::{principal_angle, GeneratorSet, DEFAULT_RANK_TOL};

/// Coordinate system a tangent vector is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Cartesian,
    Embedded,
    Chart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub coords: DVector<f64>,
    pub repr: Representation,
}

/// Named control fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldId {
    /// `Z_i`, `0 ≤ i ≤ n`.
    Z(usize),
    /// `X_m^0`, `0 ≤ m ≤ n`.
    XZero(usize),
    /// `X_m^i = ∂/∂θ_m^i`, `0 ≤ m ≤ n`, `1 ≤ i ≤ k`.
    XTangent { m: usize, i: usize },
    /// Cartesian `𝒵_i`, `0 ≤ i ≤ n`.
    CartesianZ(usize),
    /// Generator `r` (`1 ≤ r ≤ k+1`) of the Cartesian distribution `Δ`.
    CartesianDelta(usize),
    /// `∂/∂θ_n` of the car with trailers.
    CarX1,
    /// Drift-like generator of the car with trailers.
    CarX2,
}

impl FieldId {
    pub fn validate(&self, dims: ArmDims) -> Result<()> {
        let ok = match *self {
            FieldId::Z(i) | FieldId::XZero(i) | FieldId::CartesianZ(i) => i <= dims.n,
            FieldId::XTangent { m, i } => m <= dims.n && (1..=dims.k).contains(&i),
            FieldId::CartesianDelta(r) => (1..=dims.k + 1).contains(&r),
            FieldId::CarX1 | FieldId::CarX2 => dims.k == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{self} out of range for k = {}, n = {}",
                dims.k, dims.n
            )))
        }
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldId::Z(i) => write!(f, "Z_{i}"),
            FieldId::XZero(m) => write!(f, "X^0_{m}"),
            FieldId::XTangent { m, i } => write!(f, "X^{i}_{m}"),
            FieldId::CartesianZ(i) => write!(f, "Zc_{i}"),
            FieldId::CartesianDelta(r) => write!(f, "Delta_{r}"),
            FieldId::CarX1 => write!(f, "X^1_car"),
            FieldId::CarX2 => write!(f, "X^2_car"),
        }
    }
}

/// `A_i = ⟨z_i, z_{i+1}⟩` for `1 ≤ i ≤ n`, and `A_{n+1} = 1`.
pub fn a_coeff(q: &AngularConfig, i: usize) -> f64 {
    let n = q.dims().n;
    assert!((1..=n + 1).contains(&i), "A_i needs 1 <= i <= n+1, got {i}");
    if i == n + 1 {
        1.0
    } else {
        q.segment(i - 1).dot(q.segment(i))
    }
}

/// `f_m^r = ∏_{j=r+1}^{m} A_j` (`f_m^m = 1`).
pub fn f_coeff(q: &AngularConfig, r: usize, m: usize) -> f64 {
    assert!(r <= m && m <= q.dims().n, "f_m^r needs r <= m <= n");
    (r + 1..=m).map(|j| a_coeff(q, j)).product()
}

/// Per-sphere orthogonal maps composing the hyperspherical charts:
/// sphere `s` is parametrized by `z = R_s Φ(θ_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmChart {
    dims: ArmDims,
    rotations: Vec<Option<DMatrix<f64>>>,
}

impl ArmChart {
    /// The plain hyperspherical chart on every sphere.
    pub fn standard(dims: ArmDims) -> Self {
        Self {
            dims,
            rotations: vec![None; dims.segments()],
        }
    }

    /// Charts whose center `θ = (π/2, ..., π/2, ±π/2)` is the current
    /// direction of each segment, so every chart is far from its boundary.
    pub fn centered_at(q: &AngularConfig) -> Self {
        let dims = q.dims();
        let rotations = q
            .directions()
            .iter()
            .map(|d| Some(householder_to_axis(d.z())))
            .collect();
        Self { dims, rotations }
    }

    pub fn dims(&self) -> ArmDims {
        self.dims
    }

    pub fn rotation(&self, s: usize) -> Option<&DMatrix<f64>> {
        self.rotations[s].as_ref()
    }

    /// Chart coordinates of `q`. Fails if some sphere sits on its chart boundary.
    pub fn coordinates(&self, q: &AngularConfig) -> Result<DVector<f64>> {
        let dims = self.dims;
        let mut xi = DVector::zeros(dims.manifold_dim());
        xi.rows_mut(0, dims.space()).copy_from(q.x0());
        for s in 0..dims.segments() {
            let theta = match &self.rotations[s] {
                None => q.angles(s).clone(),
                Some(r) => Angles::new(angles_unchecked((r.transpose() * q.segment(s)).as_slice()))?,
            };
            theta.check_chart()?;
            xi.rows_mut(theta_offset(dims, s), dims.k)
                .copy_from_slice(theta.as_slice());
        }
        Ok(xi)
    }

    /// Evaluates the frame data at chart coordinates `xi`.
    pub fn point(&self, xi: &[f64]) -> ArmPoint {
        let dims = self.dims;
        assert_eq!(xi.len(), dims.manifold_dim(), "chart coordinate length");
        let d = dims.space();
        let x0 = DVector::from_column_slice(&xi[..d]);
        let mut z = Vec::with_capacity(dims.segments());
        let mut partials = Vec::with_capacity(dims.segments());
        let mut norms = Vec::with_capacity(dims.segments());
        for s in 0..dims.segments() {
            let off = theta_offset(dims, s);
            let theta = &xi[off..off + dims.k];
            let (zs, ps) = match &self.rotations[s] {
                None => (phi_coords(theta), phi_partials(theta)),
                Some(r) => (
                    r * phi_coords(theta),
                    phi_partials(theta).into_iter().map(|p| r * p).collect(),
                ),
            };
            z.push(zs);
            partials.push(ps);
            norms.push(partial_norms(theta));
        }
        ArmPoint {
            dims,
            x0,
            z,
            partials,
            norms,
        }
    }

    /// Configuration at chart coordinates `xi`.
    pub fn config(&self, xi: &[f64]) -> AngularConfig {
        let p = self.point(xi);
        AngularConfig::new(p.x0.clone(), p.z.clone()).expect("chart points are unit vectors")
    }
}

/// Householder reflection `H` with `H z = ±e_1` (sign chosen against cancellation).
fn householder_to_axis(z: &DVector<f64>) -> DMatrix<f64> {
    let d = z.len();
    let mut w = z.clone();
    let sign = if z[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += sign * z.norm();
    let ww = w.norm_squared();
    let mut h = DMatrix::identity(d, d);
    if ww > 0.0 {
        h -= (&w * w.transpose()) * (2.0 / ww);
    }
    h
}

/// Offset of `θ_s` in chart coordinates.
pub fn theta_offset(dims: ArmDims, s: usize) -> usize {
    dims.space() + s * dims.k
}

/// Offset of `z_{s+1}` in embedded coordinates.
pub fn segment_offset(dims: ArmDims, s: usize) -> usize {
    (s + 1) * dims.space()
}

/// Frame data of a configuration seen through an [`ArmChart`].
#[derive(Debug, Clone)]
pub struct ArmPoint {
    dims: ArmDims,
    x0: DVector<f64>,
    /// `z_{s+1}` per sphere.
    z: Vec<DVector<f64>>,
    /// `R_s ∂Φ/∂θ_s^j`.
    partials: Vec<Vec<DVector<f64>>>,
    /// closed-form `‖∂Φ/∂θ_s^j‖`.
    norms: Vec<Vec<f64>>,
}

impl ArmPoint {
    /// Standard-chart frame data using the angles stored in `q`.
    pub fn from_config(q: &AngularConfig) -> Self {
        let dims = q.dims();
        let mut partials = Vec::with_capacity(dims.segments());
        let mut norms = Vec::with_capacity(dims.segments());
        for s in 0..dims.segments() {
            let theta = q.angles(s).as_slice();
            partials.push(phi_partials(theta));
            norms.push(partial_norms(theta));
        }
        Self {
            dims,
            x0: q.x0().clone(),
            z: q.directions().iter().map(|d| d.z().clone()).collect(),
            partials,
            norms,
        }
    }

    pub fn dims(&self) -> ArmDims {
        self.dims
    }

    pub fn segment(&self, s: usize) -> &DVector<f64> {
        &self.z[s]
    }

    pub fn a(&self, i: usize) -> f64 {
        if i == self.dims.n + 1 {
            1.0
        } else {
            self.z[i - 1].dot(&self.z[i])
        }
    }

    pub fn f(&self, r: usize, m: usize) -> f64 {
        (r + 1..=m).map(|j| self.a(j)).product()
    }

    /// Coefficients of the tangent part of `v` on sphere `s` in its chart frame.
    fn chart_coefficients(&self, s: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.dims.k;
        let mut c = DVector::zeros(k);
        for j in 0..k {
            let norm = self.norms[s][j];
            if norm < CHART_GUARD {
                return Err(Error::ChartDegenerate { index: j, sine: norm });
            }
            c[j] = self.partials[s][j].dot(v) / (norm * norm);
        }
        Ok(c)
    }

    /// `Z_i` in chart coordinates.
    pub fn z_chart(&self, i: usize) -> Result<DVector<f64>> {
        let dims = self.dims;
        let mut out = DVector::zeros(dims.manifold_dim());
        if i == 0 {
            out.rows_mut(0, dims.space()).copy_from(&self.z[0]);
        } else {
            let c = self.chart_coefficients(i - 1, &self.z[i])?;
            out.rows_mut(theta_offset(dims, i - 1), dims.k).copy_from(&c);
        }
        Ok(out)
    }

    /// `Z_i` in embedded coordinates (no chart involved).
    pub fn z_embedded(&self, i: usize) -> DVector<f64> {
        let dims = self.dims;
        let d = dims.space();
        let mut out = DVector::zeros(dims.ambient_dim());
        if i == 0 {
            out.rows_mut(0, d).copy_from(&self.z[0]);
        } else {
            let proj = &self.z[i] - &self.z[i - 1] * self.a(i);
            out.rows_mut(segment_offset(dims, i - 1), d).copy_from(&proj);
        }
        out
    }

    pub fn x_zero_chart(&self, m: usize) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dims.manifold_dim());
        for i in 0..=m {
            out += self.z_chart(i)? * self.f(i, m);
        }
        Ok(out)
    }

    pub fn x_zero_embedded(&self, m: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.dims.ambient_dim());
        for i in 0..=m {
            out += self.z_embedded(i) * self.f(i, m);
        }
        out
    }

    /// `X_m^i` in chart coordinates: a coordinate basis vector.
    pub fn x_tangent_chart(&self, m: usize, i: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.dims.manifold_dim());
        out[theta_offset(self.dims, m) + i - 1] = 1.0;
        out
    }

    /// `X_m^i` in embedded coordinates: `Θ_m^i` at `x_{m+1}`.
    pub fn x_tangent_embedded(&self, m: usize, i: usize) -> DVector<f64> {
        let dims = self.dims;
        let mut out = DVector::zeros(dims.ambient_dim());
        out.rows_mut(segment_offset(dims, m), dims.space())
            .copy_from(&self.partials[m][i - 1]);
        out
    }

    pub fn eval_chart(&self, field: FieldId) -> Result<DVector<f64>> {
        field.validate(self.dims)?;
        match field {
            FieldId::Z(i) => self.z_chart(i),
            FieldId::XZero(m) => self.x_zero_chart(m),
            FieldId::XTangent { m, i } => Ok(self.x_tangent_chart(m, i)),
            other => Err(Error::FieldUnavailable(other.to_string())),
        }
    }

    pub fn eval_embedded(&self, field: FieldId) -> Result<DVector<f64>> {
        field.validate(self.dims)?;
        match field {
            FieldId::Z(i) => Ok(self.z_embedded(i)),
            FieldId::XZero(m) => Ok(self.x_zero_embedded(m)),
            FieldId::XTangent { m, i } => Ok(self.x_tangent_embedded(m, i)),
            other => Err(Error::FieldUnavailable(other.to_string())),
        }
    }

    /// Differential of the chart: maps chart vectors to embedded vectors.
    pub fn tangent_map(&self) -> DMatrix<f64> {
        let dims = self.dims;
        let d = dims.space();
        let mut t = DMatrix::zeros(dims.ambient_dim(), dims.manifold_dim());
        for r in 0..d {
            t[(r, r)] = 1.0;
        }
        for s in 0..dims.segments() {
            for j in 0..dims.k {
                t.view_mut((segment_offset(dims, s), theta_offset(dims, s) + j), (d, 1))
                    .copy_from(&self.partials[s][j]);
            }
        }
        t
    }
}

/// Evaluates an arm field at `q` (standard chart for the chart form).
pub fn eval_field(q: &AngularConfig, field: FieldId, repr: Representation) -> Result<TangentVector> {
    let p = ArmPoint::from_config(q);
    let coords = match repr {
        Representation::Chart => p.eval_chart(field)?,
        Representation::Embedded => p.eval_embedded(field)?,
        Representation::Cartesian => {
            let c = gamma_inverse(q);
            return eval_cartesian(&c, field);
        }
    };
    Ok(TangentVector { coords, repr })
}

pub fn z_field(q: &AngularConfig, i: usize, repr: Representation) -> Result<TangentVector> {
    eval_field(q, FieldId::Z(i), repr)
}

pub fn x0_field(q: &AngularConfig, m: usize, repr: Representation) -> Result<TangentVector> {
    eval_field(q, FieldId::XZero(m), repr)
}

pub fn xi_field(q: &AngularConfig, m: usize, i: usize, repr: Representation) -> Result<TangentVector> {
    eval_field(q, FieldId::XTangent { m, i }, repr)
}

/// `𝒵_i`: `x_{i+1} - x_i` in joint slot `i`.
pub fn cartesian_z(c: &CartesianConfig, i: usize) -> DVector<f64> {
    let dims = c.dims();
    let d = dims.space();
    let mut v = DVector::zeros(dims.ambient_dim());
    v.rows_mut(i * d, d).copy_from(&c.segment(i));
    v
}

/// `A_j = ⟨𝒵_j, 𝒩_{j-1}⟩` for `1 ≤ j ≤ n`, `A_{n+1} = 1`.
pub fn cartesian_a(c: &CartesianConfig, j: usize) -> f64 {
    if j == c.dims().n + 1 {
        return 1.0;
    }
    let normals = normal_fields(c);
    cartesian_z(c, j).dot(&normals[j - 1])
}

/// Generators of `Δ = TC ∩ span{𝒵_i, ∂/∂x_{n+1}}`:
/// `(x_{n+1}^r - x_n^r) Σ_i (∏_{j=i+1}^{n+1} A_j) 𝒵_i + ∂/∂x_{n+1}^r`.
pub fn cartesian_delta(c: &CartesianConfig) -> GeneratorSet {
    let dims = c.dims();
    let d = dims.space();
    let n = dims.n;
    let normals = normal_fields(c);
    let zs: Vec<DVector<f64>> = (0..=n).map(|i| cartesian_z(c, i)).collect();
    // a[j] = A_j for j = 1..=n+1
    let mut a = vec![1.0; n + 2];
    for j in 1..=n {
        a[j] = zs[j].dot(&normals[j - 1]);
    }
    let mut chain = DVector::zeros(dims.ambient_dim());
    for (i, zi) in zs.iter().enumerate() {
        let coeff: f64 = a[i + 1..=n + 1].iter().product();
        chain += zi * coeff;
    }
    let last = c.segment(n);
    let mut gs = GeneratorSet::new();
    for r in 0..d {
        let mut g = &chain * last[r];
        g[(n + 1) * d + r] += 1.0;
        gs.push(FieldId::CartesianDelta(r + 1).to_string(), g);
    }
    gs
}

pub fn eval_cartesian(c: &CartesianConfig, field: FieldId) -> Result<TangentVector> {
    field.validate(c.dims())?;
    let coords = match field {
        FieldId::CartesianZ(i) => cartesian_z(c, i),
        FieldId::CartesianDelta(r) => cartesian_delta(c).vectors()[r - 1].clone(),
        other => return Err(Error::FieldUnavailable(other.to_string())),
    };
    Ok(TangentVector {
        coords,
        repr: Representation::Cartesian,
    })
}

/// `DΓ`: Cartesian tangent vector to embedded (`ż_i = ẋ_i - ẋ_{i-1}`).
pub fn gamma_differential(dims: ArmDims, v: &DVector<f64>) -> DVector<f64> {
    let d = dims.space();
    let mut out = v.clone();
    for s in 0..dims.segments() {
        let diff = v.rows((s + 1) * d, d) - v.rows(s * d, d);
        out.rows_mut((s + 1) * d, d).copy_from(&diff);
    }
    out
}

/// Largest principal angle between `DΓ(Δ(q))` and `span{X_n^0, X_n^1..X_n^k}`
/// at `Γ(q)`, both in standard chart coordinates.
pub fn pushforward_check(c: &CartesianConfig) -> Result<f64> {
    let a = crate::arm_model::gamma(c)?;
    let dims = a.dims();
    let d = dims.space();
    let inverses = (0..dims.segments())
        .map(|s| jacobian_inverse(a.angles(s)))
        .collect::<Result<Vec<_>>>()?;
    let to_chart = |v: &DVector<f64>| {
        let e = gamma_differential(dims, v);
        let mut out = DVector::zeros(dims.manifold_dim());
        out.rows_mut(0, d).copy_from(&e.rows(0, d));
        for (s, inv) in inverses.iter().enumerate() {
            let full = inv * e.rows(segment_offset(dims, s), d);
            out.rows_mut(theta_offset(dims, s), dims.k)
                .copy_from(&full.rows(1, dims.k));
        }
        out
    };
    let mut pushed = GeneratorSet::new();
    let delta = cartesian_delta(c);
    for (label, g) in delta.labels().iter().zip(delta.vectors()) {
        pushed.push(label.clone(), to_chart(g));
    }
    let p = ArmPoint::from_config(&a);
    let mut target = GeneratorSet::new();
    target.push(FieldId::XZero(dims.n).to_string(), p.x_zero_chart(dims.n)?);
    for i in 1..=dims.k {
        target.push(
            FieldId::XTangent { m: dims.n, i }.to_string(),
            p.x_tangent_chart(dims.n, i),
        );
    }
    Ok(principal_angle(&pushed, &target, DEFAULT_RANK_TOL))
}

/// Generators `(X_n^1, X_n^2)` of the car with `n` trailers in car
/// coordinates `(x, y, θ_0, ..., θ_n)`.
pub fn car_generators(state: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let n = state.len() - 3;
    let theta = &state[2..];
    let mut x1 = DVector::zeros(state.len());
    x1[n + 2] = 1.0;
    // f[r] = ∏_{j=r+1}^{n} cos(θ_j - θ_{j-1})
    let mut f = vec![1.0; n + 1];
    for r in (0..n).rev() {
        f[r] = f[r + 1] * (theta[r + 1] - theta[r]).cos();
    }
    let mut x2 = DVector::zeros(state.len());
    x2[0] = theta[0].cos() * f[0];
    x2[1] = theta[0].sin() * f[0];
    for r in 0..n {
        x2[r + 2] = (theta[r + 1] - theta[r]).sin() * f[r + 1];
    }
    (x1, x2)
}

pub fn eval_car(state: &[f64], field: FieldId) -> Result<DVector<f64>> {
    match field {
        FieldId::CarX1 => Ok(car_generators(state).0),
        FieldId::CarX2 => Ok(car_generators(state).1),
        other => Err(Error::FieldUnavailable(other.to_string())),
    }
}

/// Car coordinates `(x, y, θ_0..θ_n)` to arm chart coordinates for `k = 1`:
/// the geographical chart swaps the two axes, `x_0 = (y, x)`.
pub fn car_to_arm_chart(state: &[f64]) -> DVector<f64> {
    let mut out = DVector::from_column_slice(state);
    out.swap_rows(0, 1);
    out
}

pub fn arm_chart_to_car(xi: &[f64]) -> DVector<f64> {
    car_to_arm_chart(xi)
}
