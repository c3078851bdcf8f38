//! Lie brackets of arm fields by central differences in chart coordinates.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use nalgebra::DVector;

use crate::arm_model::AngularConfig;
use crate::error::Result;
use crate::vector_fields::{ArmChart, FieldId, Representation, TangentVector};

pub const DEFAULT_BRACKET_STEP: f64 = 1e-5;

/// A field or an iterated bracket of fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FieldExpr {
    Field(FieldId),
    Bracket(Box<FieldExpr>, Box<FieldExpr>),
}

impl FieldExpr {
    pub fn bracket(x: impl Into<FieldExpr>, y: impl Into<FieldExpr>) -> Self {
        FieldExpr::Bracket(Box::new(x.into()), Box::new(y.into()))
    }

    pub fn depth(&self) -> usize {
        match self {
            FieldExpr::Field(_) => 0,
            FieldExpr::Bracket(a, b) => 1 + a.depth().max(b.depth()),
        }
    }
}

impl From<FieldId> for FieldExpr {
    fn from(id: FieldId) -> Self {
        FieldExpr::Field(id)
    }
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldExpr::Field(id) => write!(f, "{id}"),
            FieldExpr::Bracket(a, b) => write!(f, "[{a}, {b}]"),
        }
    }
}

/// Evaluates fields and brackets around one configuration in a fixed chart.
///
/// `[X, Y] = DY·X − DX·Y`, each directional derivative taken as
/// `(Y(ξ + hX) − Y(ξ − hX)) / 2h`.
pub struct BracketEngine {
    chart: ArmChart,
    xi: DVector<f64>,
    h: f64,
    cache: Mutex<HashMap<(FieldId, FieldId), DVector<f64>>>,
}

impl BracketEngine {
    /// Chart centered at `q`: isometric there and far from its boundary.
    pub fn centered(q: &AngularConfig, h: f64) -> Result<Self> {
        let chart = ArmChart::centered_at(q);
        Self::with_chart(chart, q, h)
    }

    /// Plain hyperspherical charts; fails where one of them degenerates.
    pub fn standard(q: &AngularConfig, h: f64) -> Result<Self> {
        Self::with_chart(ArmChart::standard(q.dims()), q, h)
    }

    pub fn with_chart(chart: ArmChart, q: &AngularConfig, h: f64) -> Result<Self> {
        let xi = chart.coordinates(q)?;
        Ok(Self {
            chart,
            xi,
            h,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn chart(&self) -> &ArmChart {
        &self.chart
    }

    pub fn coordinates(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Chart-coordinate value of `e` at the base point.
    pub fn eval(&self, e: &FieldExpr) -> Result<DVector<f64>> {
        if let FieldExpr::Bracket(a, b) = e {
            if let (FieldExpr::Field(x), FieldExpr::Field(y)) = (a.as_ref(), b.as_ref()) {
                return self.field_bracket(*x, *y);
            }
        }
        self.eval_at(e, &self.xi)
    }

    /// Bracket of two plain fields, memoized.
    pub fn field_bracket(&self, x: FieldId, y: FieldId) -> Result<DVector<f64>> {
        if let Some(v) = self.cache.lock().unwrap().get(&(x, y)) {
            return Ok(v.clone());
        }
        let v = self.bracket_at(&x.into(), &y.into(), &self.xi)?;
        let mut cache = self.cache.lock().unwrap();
        cache.insert((y, x), -&v);
        cache.insert((x, y), v.clone());
        Ok(v)
    }

    /// Embedded form of `e` at the base point.
    pub fn eval_embedded(&self, e: &FieldExpr) -> Result<TangentVector> {
        let chart_form = self.eval(e)?;
        let t = self.chart.point(self.xi.as_slice()).tangent_map();
        Ok(TangentVector {
            coords: t * chart_form,
            repr: Representation::Embedded,
        })
    }

    fn eval_at(&self, e: &FieldExpr, xi: &DVector<f64>) -> Result<DVector<f64>> {
        match e {
            FieldExpr::Field(id) => self.chart.point(xi.as_slice()).eval_chart(*id),
            FieldExpr::Bracket(a, b) => self.bracket_at(a, b, xi),
        }
    }

    fn bracket_at(&self, x: &FieldExpr, y: &FieldExpr, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.h;
        let xv = self.eval_at(x, xi)?;
        let yv = self.eval_at(y, xi)?;
        let dy_x = (self.eval_at(y, &(xi + &xv * h))? - self.eval_at(y, &(xi - &xv * h))?) / (2.0 * h);
        let dx_y = (self.eval_at(x, &(xi + &yv * h))? - self.eval_at(x, &(xi - &yv * h))?) / (2.0 * h);
        Ok(dy_x - dx_y)
    }
}

/// `[X, Y]` at `q` in embedded form, computed in a chart centered at `q`.
pub fn lie_bracket(x: &FieldExpr, y: &FieldExpr, q: &AngularConfig, h: f64) -> Result<TangentVector> {
    let engine = BracketEngine::centered(q, h)?;
    engine.eval_embedded(&FieldExpr::bracket(x.clone(), y.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_model::ArmDims;
    use crate::hyperspherical::Angles;
    use crate::sampling::{random_regular_config, RegularSampling};
    use crate::span::{principal_angle, GeneratorSet, DEFAULT_RANK_TOL};
    use crate::vector_fields::ArmPoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn regular(k: usize, n: usize, seed: u64) -> AngularConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_regular_config(
            ArmDims::new(k, n).unwrap(),
            &mut rng,
            RegularSampling {
                min_abs_a: 0.1,
                chart_margin: 0.2,
            },
        )
    }

    fn xt(m: usize, i: usize) -> FieldExpr {
        FieldId::XTangent { m, i }.into()
    }

    fn x0(m: usize) -> FieldExpr {
        FieldId::XZero(m).into()
    }

    #[test]
    fn coordinate_fields_commute() {
        let q = regular(3, 2, 1);
        let e = BracketEngine::centered(&q, DEFAULT_BRACKET_STEP).unwrap();
        for (a, b) in [((0, 1), (0, 2)), ((1, 3), (2, 1)), ((2, 2), (0, 1))] {
            let v = e.eval(&FieldExpr::bracket(xt(a.0, a.1), xt(b.0, b.1))).unwrap();
            assert!(v.amax() < 1e-8);
        }
    }

    #[test]
    fn higher_tangents_commute_with_lower_drift_fields() {
        let q = regular(2, 3, 2);
        let e = BracketEngine::centered(&q, DEFAULT_BRACKET_STEP).unwrap();
        for m in 0..3 {
            for r in m + 1..=3 {
                for j in 1..=2 {
                    let v = e.eval(&FieldExpr::bracket(xt(r, j), x0(m))).unwrap();
                    assert!(v.amax() < 1e-8, "[X^{j}_{r}, X^0_{m}]");
                }
            }
        }
    }

    #[test]
    fn bracket_is_antisymmetric_and_cached() {
        let q = regular(2, 2, 3);
        let e = BracketEngine::centered(&q, DEFAULT_BRACKET_STEP).unwrap();
        let a = e.field_bracket(FieldId::XTangent { m: 2, i: 1 }, FieldId::XZero(2)).unwrap();
        let b = e.field_bracket(FieldId::XZero(2), FieldId::XTangent { m: 2, i: 1 }).unwrap();
        assert_eq!(a, -b);
        assert!(a.norm() > 1e-3);
    }

    /// For `k = 1`, `n = 1`: `[X_1^1, X_1^0] = (−s sin θ_0, −s cos θ_0, c, 0)`,
    /// `s = sin(θ_1 − θ_0)`, `c = cos(θ_1 − θ_0)`.
    #[test]
    fn trig_bracket_converges_quadratically() {
        let (t0, t1) = (0.7, 1.9);
        let q = AngularConfig::from_angles(
            DVector::from_vec(vec![0.2, -0.4]),
            vec![Angles::new(vec![t0]).unwrap(), Angles::new(vec![t1]).unwrap()],
        )
        .unwrap();
        let (s, c) = ((t1 - t0).sin(), (t1 - t0).cos());
        let exact = DVector::from_vec(vec![-s * t0.sin(), -s * t0.cos(), c, 0.0]);
        let err = |h: f64| {
            let e = BracketEngine::standard(&q, h).unwrap();
            (e.eval(&FieldExpr::bracket(xt(1, 1), x0(1))).unwrap() - &exact).norm()
        };
        let (e3, e4, e5) = (err(1e-3), err(1e-4), err(1e-5));
        assert!(e3 / e4 > 50.0, "{e3} {e4}");
        assert!(e4 < 1e-8 && e5 < 1e-9, "{e4} {e5}");
    }

    #[test]
    fn drift_and_brackets_span_previous_layer() {
        for (k, n) in [(1, 1), (2, 2), (3, 2)] {
            let q = regular(k, n, 4 + k as u64);
            let e = BracketEngine::centered(&q, DEFAULT_BRACKET_STEP).unwrap();
            for m in 1..=n {
                let mut lhs = GeneratorSet::new();
                lhs.push("X0m", e.eval(&x0(m)).unwrap());
                let mut rhs = GeneratorSet::new();
                rhs.push("X0m-1", e.eval(&x0(m - 1)).unwrap());
                for i in 1..=k {
                    lhs.push("br", e.eval(&FieldExpr::bracket(xt(m, i), x0(m))).unwrap());
                    rhs.push("Xi", e.eval(&xt(m - 1, i)).unwrap());
                }
                assert_eq!(lhs.rank(DEFAULT_RANK_TOL), k + 1);
                assert!(principal_angle(&lhs, &rhs, DEFAULT_RANK_TOL) < 1e-6);
            }
        }
    }

    /// `Y^j = φ_{m-1}^j X^0_{m-1} + Σ_r ∂_r φ_{m-1}^j / ‖∂_r φ_{m-1}‖² X^r_{m-1}` and
    /// `[X_m^i, X_m^0] = Σ_j ∂_i φ_m^j Y^j`, `X_m^0 = Σ_j φ_m^j Y^j`.
    #[test]
    fn y_basis_decompositions() {
        for (k, n) in [(1, 2), (2, 2), (3, 1)] {
            let q = regular(k, n, 10 + k as u64);
            let e = BracketEngine::standard(&q, DEFAULT_BRACKET_STEP).unwrap();
            let p = ArmPoint::from_config(&q);
            let partials = |s: usize| crate::hyperspherical::phi_partials(q.angles(s).as_slice());
            let norms = |s: usize| crate::hyperspherical::partial_norms(q.angles(s).as_slice());
            for m in 1..=n {
                let phi_prev = q.segment(m - 1);
                let dprev = partials(m - 1);
                let nprev = norms(m - 1);
                let y: Vec<DVector<f64>> = (0..=k)
                    .map(|j| {
                        let mut v = p.x_zero_chart(m - 1).unwrap() * phi_prev[j];
                        for r in 0..k {
                            v += p.x_tangent_chart(m - 1, r + 1) * (dprev[r][j] / (nprev[r] * nprev[r]));
                        }
                        v
                    })
                    .collect();
                let phi = q.segment(m);
                let mut recon = DVector::zeros(y[0].len());
                for j in 0..=k {
                    recon += &y[j] * phi[j];
                }
                assert!((recon - p.x_zero_chart(m).unwrap()).amax() < 1e-12);
                let dphi = partials(m);
                for i in 1..=k {
                    let br = e.eval(&FieldExpr::bracket(xt(m, i), x0(m))).unwrap();
                    let mut expect = DVector::zeros(br.len());
                    for j in 0..=k {
                        expect += &y[j] * dphi[i - 1][j];
                    }
                    assert!((br - expect).amax() < 1e-6, "k={k} m={m} i={i}");
                }
            }
        }
    }

    #[test]
    fn geometric_field_brackets_are_chart_independent() {
        let q = regular(2, 2, 20);
        let std = BracketEngine::standard(&q, DEFAULT_BRACKET_STEP).unwrap();
        for (a, b) in [(FieldId::Z(0), FieldId::XZero(1)), (FieldId::Z(1), FieldId::Z(2))] {
            let c = lie_bracket(&a.into(), &b.into(), &q, DEFAULT_BRACKET_STEP).unwrap();
            let d = std.eval_embedded(&FieldExpr::bracket(a, b)).unwrap();
            assert!((c.coords - d.coords).amax() < 1e-7, "[{a}, {b}]");
        }
    }

    #[test]
    fn nested_bracket_display() {
        let e = FieldExpr::bracket(xt(1, 1), FieldExpr::bracket(xt(1, 2), x0(1)));
        assert_eq!(e.to_string(), "[X^1_1, [X^2_1, X^0_1]]");
        assert_eq!(e.depth(), 2);
        let q = regular(2, 1, 21);
        let engine = BracketEngine::centered(&q, 1e-4).unwrap();
        assert!(engine.eval(&e).unwrap().iter().all(|x| x.is_finite()));
    }
}
