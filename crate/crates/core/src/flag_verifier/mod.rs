//! Numerical verification of the special k-flag generated by `Δ_n`.
//!
//! For `m = 1..n+1`, `D^m` is spanned by `X^0_{m-1}` and `X_j^i`
//! (`m - 1 ≤ j ≤ n`, `1 ≤ i ≤ k`), and `E^m` drops `X^0_{m-1}`. `D^0 = TM`.
//! All spans are computed in charts centered at the sampled point; these are
//! isometric there, so ranks and angles match the embedded picture.

pub mod bracket;
pub mod report;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arm_model::{AngularConfig, ArmDims};
use crate::error::Result;
use crate::span::{orthogonal_component, principal_angle, GeneratorSet, DEFAULT_RANK_TOL};
use crate::vector_fields::{a_coeff, FieldId};

pub use crate::span::rank_of;
pub use bracket::{lie_bracket, BracketEngine, FieldExpr, DEFAULT_BRACKET_STEP};
pub use report::{Check, FlagReport, GoursatReport, LevelReport, SandwichEntry};

/// Brackets shorter than this are treated as zero by the residual measures.
pub const BRACKET_ZERO: f64 = 1e-9;
/// Absolute floor for singular values of the bracket pairing.
pub const PAIRING_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Relative SVD threshold.
    pub rank_tol: f64,
    /// Central-difference step of the bracket engine.
    pub step: f64,
    /// Bound for involutivity, inclusion and span-angle residuals.
    pub residual_tol: f64,
    /// `|A_i|` below this marks a singular point.
    pub singular_eps: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            step: DEFAULT_BRACKET_STEP,
            residual_tol: 1e-6,
            singular_eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Verdict {
    Regular,
    Singular { indices: Vec<usize> },
}

impl Verdict {
    pub fn is_regular(&self) -> bool {
        matches!(self, Verdict::Regular)
    }
}

/// Generators of `D^m` and `E^m`, `1 ≤ m ≤ n+1`.
pub fn level_fields(dims: ArmDims, m: usize) -> (Vec<FieldId>, Vec<FieldId>) {
    assert!((1..=dims.n + 1).contains(&m), "levels run from 1 to n+1");
    let mut e = Vec::new();
    for j in m - 1..=dims.n {
        for i in 1..=dims.k {
            e.push(FieldId::XTangent { m: j, i });
        }
    }
    let mut d = vec![FieldId::XZero(m - 1)];
    d.extend(e.iter().copied());
    (d, e)
}

/// `rank D^m = (n - m + 2)k + 1` for `m ≥ 1`, `dim TM` for `m = 0`.
pub fn expected_rank_d(dims: ArmDims, m: usize) -> usize {
    if m == 0 {
        dims.manifold_dim()
    } else {
        (dims.n + 2 - m) * dims.k + 1
    }
}

pub fn expected_rank_e(dims: ArmDims, m: usize) -> usize {
    (dims.n + 2 - m) * dims.k
}

/// Everything needed to test the flag at one configuration.
pub struct FlagPoint {
    q: AngularConfig,
    engine: BracketEngine,
    opts: VerifyOptions,
}

impl FlagPoint {
    pub fn new(q: &AngularConfig, opts: VerifyOptions) -> Result<Self> {
        Ok(Self {
            q: q.clone(),
            engine: BracketEngine::centered(q, opts.step)?,
            opts,
        })
    }

    pub fn dims(&self) -> ArmDims {
        self.q.dims()
    }

    pub fn engine(&self) -> &BracketEngine {
        &self.engine
    }

    pub fn generators(&self, ids: &[FieldId]) -> Result<GeneratorSet> {
        let mut gs = GeneratorSet::new();
        for &id in ids {
            gs.push(id.to_string(), self.engine.eval(&id.into())?);
        }
        Ok(gs)
    }

    fn tangent_space(&self) -> GeneratorSet {
        let dim = self.dims().manifold_dim();
        let mut gs = GeneratorSet::new();
        for i in 0..dim {
            gs.push(format!("e{i}"), DMatrix::<f64>::identity(dim, dim).column(i).into_owned());
        }
        gs
    }

    /// `(D^m, E^m)`; `m = 0` gives `(TM, TM)`.
    pub fn build_level(&self, m: usize) -> Result<(GeneratorSet, GeneratorSet)> {
        if m == 0 {
            let tm = self.tangent_space();
            return Ok((tm.clone(), tm));
        }
        let (d, e) = level_fields(self.dims(), m);
        Ok((self.generators(&d)?, self.generators(&e)?))
    }

    /// Brackets `[x, y]`, `x ∈ a`, `y ∈ b`, one per unordered pair of distinct fields.
    fn pair_brackets(&self, a: &[FieldId], b: &[FieldId]) -> Result<Vec<(String, DVector<f64>)>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &x in a {
            for &y in b {
                if x == y || seen.contains(&(y, x)) || !seen.insert((x, y)) {
                    continue;
                }
                out.push((format!("[{x}, {y}]"), self.engine.field_bracket(x, y)?));
            }
        }
        Ok(out)
    }

    /// `D^m` together with all pairwise brackets of its generators.
    pub fn derived_set(&self, m: usize) -> Result<GeneratorSet> {
        let (d, _) = level_fields(self.dims(), m);
        let mut gs = self.generators(&d)?;
        for (label, v) in self.pair_brackets(&d, &d)? {
            gs.push(label, v);
        }
        Ok(gs)
    }

    /// Rank of `[D^{m+1}, D^{m+1}]`, `0 ≤ m ≤ n`.
    pub fn derived_rank(&self, m: usize) -> Result<usize> {
        Ok(self.derived_set(m + 1)?.rank(self.opts.rank_tol))
    }

    /// Largest relative component of a pairwise bracket outside `span(ids)`.
    pub fn involutivity_residual(&self, ids: &[FieldId]) -> Result<f64> {
        let basis = self.generators(ids)?.orthonormal_basis(self.opts.rank_tol);
        let brackets = self.pair_brackets(ids, ids)?;
        Ok(relative_residual(&basis, brackets.iter().map(|(_, v)| v)))
    }

    /// `[E^{m+1}, D^{m+1}] ⊂ D^m` residual, `1 ≤ m ≤ n`.
    pub fn cauchy_inclusion_residual(&self, m: usize) -> Result<f64> {
        let (d_next, e_next) = level_fields(self.dims(), m + 1);
        let (d_m, _) = self.build_level(m)?;
        let basis = d_m.orthonormal_basis(self.opts.rank_tol);
        let brackets = self.pair_brackets(&e_next, &d_next)?;
        Ok(relative_residual(&basis, brackets.iter().map(|(_, v)| v)))
    }

    /// Cauchy characteristics `L(D^m)`: sections whose brackets with `D^m`
    /// stay in `D^m`, the kernel of the bracket pairing modulo `D^m`.
    pub fn cauchy_characteristic(&self, m: usize) -> Result<GeneratorSet> {
        let (ids, _) = level_fields(self.dims(), m);
        let gens = self.generators(&ids)?;
        let basis = gens.orthonormal_basis(self.opts.rank_tol);
        let dim = self.dims().manifold_dim();
        let p = ids.len();
        let mut pairing = DMatrix::zeros(p, dim * p);
        for (i, &x) in ids.iter().enumerate() {
            for (j, &y) in ids.iter().enumerate() {
                if i == j {
                    continue;
                }
                let r = orthogonal_component(&basis, &self.engine.field_bracket(x, y)?);
                pairing.view_mut((i, j * dim), (1, dim)).copy_from(&r.transpose());
            }
        }
        let svd = pairing.svd(true, false);
        let u = svd.u.expect("requested U");
        let smax = svd.singular_values.max();
        let cut = (self.opts.rank_tol * smax).max(PAIRING_FLOOR);
        // the pairing is p × (dim·p), so U is square and holds the whole left null space
        let kernel: Vec<DVector<f64>> = (0..u.ncols())
            .filter(|&c| svd.singular_values[c] <= cut)
            .map(|c| u.column(c).into_owned())
            .collect();
        let g = gens.matrix();
        let mut out = GeneratorSet::new();
        for (idx, a) in kernel.iter().enumerate() {
            out.push(format!("L{idx}"), &g * a);
        }
        Ok(out)
    }

    /// `(dim L(D^m), angle between L(D^m) and E^{m+1})`; the angle is `0`
    /// when both are trivial.
    pub fn cauchy_summary(&self, m: usize) -> Result<(usize, f64)> {
        let l = self.cauchy_characteristic(m)?;
        let dim_l = if l.is_empty() { 0 } else { l.rank(self.opts.rank_tol) };
        let target = if m <= self.dims().n {
            self.build_level(m + 1)?.1
        } else {
            GeneratorSet::new()
        };
        let angle = match (dim_l, target.is_empty()) {
            (0, true) => 0.0,
            (_, true) | (0, false) => std::f64::consts::FRAC_PI_2,
            _ => principal_angle(&l, &target, self.opts.rank_tol),
        };
        Ok((dim_l, angle))
    }

    /// Sandwich-position test at levels `j = 2..n+1`: whether `X^0_{j-1}`
    /// falls into `E^{j-1}`, detected as a rank drop of `E^{j-1} ∪ {X^0_{j-1}}`.
    pub fn sandwich(&self) -> Result<Vec<SandwichEntry>> {
        let dims = self.dims();
        let mut out = Vec::new();
        for j in 2..=dims.n + 1 {
            let (_, e) = self.build_level(j - 1)?;
            let x0 = self.engine.eval(&FieldId::XZero(j - 1).into())?;
            let basis = e.orthonormal_basis(self.opts.rank_tol);
            let residual = orthogonal_component(&basis, &x0).norm() / x0.norm().max(f64::MIN_POSITIVE);
            let mut aug = e.clone();
            aug.push("X0", x0);
            let drop = aug.rank(self.opts.rank_tol) <= e.rank(self.opts.rank_tol);
            out.push(SandwichEntry {
                index: j - 1,
                residual,
                singular: drop,
            });
        }
        Ok(out)
    }
}

fn relative_residual<'a>(basis: &DMatrix<f64>, brackets: impl Iterator<Item = &'a DVector<f64>>) -> f64 {
    brackets
        .filter(|b| b.norm() >= BRACKET_ZERO)
        .map(|b| orthogonal_component(basis, b).norm() / b.norm())
        .fold(0.0, f64::max)
}

/// `(D^m, E^m)` at `q`.
pub fn build_level(q: &AngularConfig, m: usize) -> Result<(GeneratorSet, GeneratorSet)> {
    FlagPoint::new(q, VerifyOptions::default())?.build_level(m)
}

pub fn derived_rank(q: &AngularConfig, m: usize, tol: f64) -> Result<usize> {
    let opts = VerifyOptions {
        rank_tol: tol,
        ..Default::default()
    };
    FlagPoint::new(q, opts)?.derived_rank(m)
}

pub fn involutivity_residual(q: &AngularConfig, ids: &[FieldId], tol: f64) -> Result<f64> {
    let opts = VerifyOptions {
        rank_tol: tol,
        ..Default::default()
    };
    FlagPoint::new(q, opts)?.involutivity_residual(ids)
}

pub fn cauchy_inclusion_residual(q: &AngularConfig, m: usize) -> Result<f64> {
    FlagPoint::new(q, VerifyOptions::default())?.cauchy_inclusion_residual(m)
}

/// `A_i`, `i = 1..n`, and the indices with `|A_i| < eps`.
pub fn singular_indices(q: &AngularConfig, eps: f64) -> (Vec<f64>, Vec<usize>) {
    let n = q.dims().n;
    let a: Vec<f64> = (1..=n).map(|i| a_coeff(q, i)).collect();
    let idx = (1..=n).filter(|&i| a[i - 1].abs() < eps).collect();
    (a, idx)
}

/// Regular/singular verdict from the `A_i` test.
pub fn classify_point(q: &AngularConfig, eps: f64) -> Verdict {
    let (_, idx) = singular_indices(q, eps);
    if idx.is_empty() {
        Verdict::Regular
    } else {
        Verdict::Singular { indices: idx }
    }
}

/// Verdict of the sandwich-position test alone.
pub fn classify_by_sandwich(q: &AngularConfig, opts: VerifyOptions) -> Result<Verdict> {
    let entries = FlagPoint::new(q, opts)?.sandwich()?;
    let idx: Vec<usize> = entries.iter().filter(|e| e.singular).map(|e| e.index).collect();
    Ok(if idx.is_empty() {
        Verdict::Regular
    } else {
        Verdict::Singular { indices: idx }
    })
}

/// Runs every check at `q` and collects the numbers into a report.
pub fn verify_flag(q: &AngularConfig, opts: VerifyOptions) -> Result<FlagReport> {
    let fp = FlagPoint::new(q, opts)?;
    let dims = q.dims();
    let n = dims.n;
    let (a, singular) = singular_indices(q, opts.singular_eps);
    let verdict = if singular.is_empty() {
        Verdict::Regular
    } else {
        Verdict::Singular {
            indices: singular.clone(),
        }
    };
    let sandwich = fp.sandwich()?;

    let mut levels = Vec::with_capacity(n + 2);
    levels.push(LevelReport::top(dims));
    for m in 1..=n + 1 {
        let (d, e) = fp.build_level(m)?;
        let (_, e_ids) = level_fields(dims, m);
        let derived = fp.derived_set(m)?;
        let (prev, _) = fp.build_level(m - 1)?;
        let (cauchy_dim, cauchy_angle) = fp.cauchy_summary(m)?;
        levels.push(LevelReport {
            m,
            rank_d: d.rank(opts.rank_tol),
            expected_d: expected_rank_d(dims, m),
            rank_e: Some(e.rank(opts.rank_tol)),
            expected_e: Some(expected_rank_e(dims, m)),
            derived_rank: Some(derived.rank(opts.rank_tol)),
            derived_angle: Some(principal_angle(&derived, &prev, opts.rank_tol)),
            involutivity_e: Some(fp.involutivity_residual(&e_ids)?),
            inclusion: if m >= 2 {
                Some(fp.cauchy_inclusion_residual(m - 1)?)
            } else {
                None
            },
            cauchy_dim: Some(cauchy_dim),
            expected_cauchy_dim: Some(if m <= n { expected_rank_e(dims, m + 1) } else { 0 }),
            cauchy_angle: Some(cauchy_angle),
        });
    }
    let (delta_ids, _) = level_fields(dims, n + 1);
    let delta_involutivity = fp.involutivity_residual(&delta_ids)?;
    let goursat = (dims.k == 1).then(|| GoursatReport::from_levels(dims, &levels));

    let mut report = FlagReport {
        k: dims.k,
        n,
        rank_tol: opts.rank_tol,
        residual_tol: opts.residual_tol,
        step: opts.step,
        point: q.clone(),
        a,
        verdict,
        sandwich,
        levels,
        delta_involutivity,
        goursat,
        checks: Vec::new(),
        pass: false,
    };
    report.evaluate();
    Ok(report)
}
