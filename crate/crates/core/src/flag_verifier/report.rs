//! Flag reports: recorded numbers, derived checks, text rendering.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::Verdict;
use crate::arm_model::{AngularConfig, ArmDims};

/// Lower bound on the involutivity residual of `Δ_n` (bracket generating).
pub const BRACKET_GENERATING_MIN: f64 = 1e-2;

/// Numbers recorded for `D^m`, `E^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub m: usize,
    pub rank_d: usize,
    pub expected_d: usize,
    pub rank_e: Option<usize>,
    pub expected_e: Option<usize>,
    /// `rank [D^m, D^m]`.
    pub derived_rank: Option<usize>,
    /// Principal angle between `[D^m, D^m]` and `D^{m-1}`.
    pub derived_angle: Option<f64>,
    pub involutivity_e: Option<f64>,
    /// `[E^m, D^m] ⊂ D^{m-1}` residual.
    pub inclusion: Option<f64>,
    /// `dim L(D^m)`.
    pub cauchy_dim: Option<usize>,
    pub expected_cauchy_dim: Option<usize>,
    /// Principal angle between `L(D^m)` and `E^{m+1}`.
    pub cauchy_angle: Option<f64>,
}

impl LevelReport {
    /// `D^0 = TM`.
    pub fn top(dims: ArmDims) -> Self {
        Self {
            m: 0,
            rank_d: dims.manifold_dim(),
            expected_d: dims.manifold_dim(),
            rank_e: None,
            expected_e: None,
            derived_rank: None,
            derived_angle: None,
            involutivity_e: None,
            inclusion: None,
            cauchy_dim: None,
            expected_cauchy_dim: None,
            cauchy_angle: None,
        }
    }
}

/// Width-one specialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoursatReport {
    /// Corank of `D^m` in `TM`, `m = 1..n+1`.
    pub coranks: Vec<usize>,
    /// `rank E^{m+1} = rank D^m − 2` for `m = 1..n`.
    pub sandwich_lemma: bool,
}

impl GoursatReport {
    pub fn from_levels(dims: ArmDims, levels: &[LevelReport]) -> Self {
        let dim = dims.manifold_dim();
        let coranks = levels[1..].iter().map(|l| dim - l.rank_d.min(dim)).collect();
        let sandwich_lemma = (1..=dims.n).all(|m| {
            let e_next = levels[m + 1].rank_e.unwrap_or(0);
            e_next + 2 == levels[m].rank_d
        });
        Self {
            coranks,
            sandwich_lemma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichEntry {
    /// Index `i` of the coefficient `A_i` this level tests.
    pub index: usize,
    /// Relative distance of `X^0_i` from `E^i`.
    pub residual: f64,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagReport {
    pub k: usize,
    pub n: usize,
    pub rank_tol: f64,
    pub residual_tol: f64,
    pub step: f64,
    pub point: AngularConfig,
    /// `A_1..A_n`.
    pub a: Vec<f64>,
    pub verdict: Verdict,
    pub sandwich: Vec<SandwichEntry>,
    /// Levels `m = 0..n+1`.
    pub levels: Vec<LevelReport>,
    pub delta_involutivity: f64,
    pub goursat: Option<GoursatReport>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl FlagReport {
    fn dims(&self) -> ArmDims {
        ArmDims {
            k: self.k,
            n: self.n,
        }
    }

    /// Derives the checks from the recorded numbers and sets `pass`.
    pub fn evaluate(&mut self) {
        let tol = self.residual_tol;
        let mut checks = Vec::new();
        let mut add = |name: String, passed: bool, detail: String| {
            checks.push(Check {
                name,
                passed,
                detail,
            })
        };
        for l in &self.levels[1..] {
            let m = l.m;
            add(
                format!("rank D^{m}"),
                l.rank_d == l.expected_d,
                format!("{} (expected {})", l.rank_d, l.expected_d),
            );
            if let (Some(r), Some(e)) = (l.rank_e, l.expected_e) {
                add(format!("rank E^{m}"), r == e, format!("{r} (expected {e})"));
            }
            if let (Some(r), Some(angle)) = (l.derived_rank, l.derived_angle) {
                let want = self.levels[m - 1].expected_d;
                add(
                    format!("[D^{m},D^{m}] = D^{}", m - 1),
                    r == want && angle < tol,
                    format!("rank {r} (expected {want}), angle {angle:.3e}"),
                );
            }
            if let Some(res) = l.involutivity_e {
                add(format!("E^{m} involutive"), res < tol, format!("residual {res:.3e}"));
            }
            if let Some(res) = l.inclusion {
                add(
                    format!("[E^{m},D^{m}] in D^{}", m - 1),
                    res < tol,
                    format!("residual {res:.3e}"),
                );
            }
            if let (Some(d), Some(e), Some(angle)) = (l.cauchy_dim, l.expected_cauchy_dim, l.cauchy_angle) {
                add(
                    format!("L(D^{m}) = E^{}", m + 1),
                    d == e && angle < tol,
                    format!("dim {d} (expected {e}), angle {angle:.3e}"),
                );
            }
        }
        if self.n >= 1 {
            add(
                "Delta_n bracket generating".into(),
                self.delta_involutivity > BRACKET_GENERATING_MIN,
                format!("residual {:.3e}", self.delta_involutivity),
            );
        }
        if let Some(g) = &self.goursat {
            let want: Vec<usize> = (1..=self.n + 1).collect();
            add(
                "Goursat coranks".into(),
                g.coranks == want,
                format!("{:?} (expected {:?})", g.coranks, want),
            );
            add(
                "sandwich lemma".into(),
                g.sandwich_lemma,
                "rank E^(m+1) = rank D^m - 2".into(),
            );
        }
        let sandwich: Vec<usize> = self.sandwich.iter().filter(|s| s.singular).map(|s| s.index).collect();
        let a_test = match &self.verdict {
            Verdict::Regular => Vec::new(),
            Verdict::Singular { indices } => indices.clone(),
        };
        add(
            "sandwich test agrees with A test".into(),
            sandwich == a_test,
            format!("sandwich {sandwich:?}, A {a_test:?}"),
        );
        self.pass = checks.iter().all(|c| c.passed);
        self.checks = checks;
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Sandwich diagram with ranks, then the per-level table and checks.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let verdict = match &self.verdict {
            Verdict::Regular => "regular".to_string(),
            Verdict::Singular { indices } => format!("singular at A_i = 0, i in {indices:?}"),
        };
        let _ = writeln!(
            s,
            "special {}-flag, n = {}, dim TM = {}, point {}",
            self.k,
            self.n,
            self.dims().manifold_dim(),
            verdict
        );
        let top: Vec<String> = self
            .levels
            .iter()
            .rev()
            .map(|l| format!("D^{}({})", l.m, l.rank_d))
            .collect();
        let cells: Vec<usize> = top.iter().map(|c| c.chars().count()).collect();
        let _ = writeln!(s, "  {}", top.join(" ⊂ "));
        let mut mid = String::new();
        let mut bottom = Vec::new();
        for (idx, l) in self.levels.iter().rev().enumerate() {
            if let Some(r) = l.rank_e {
                let cell = format!("E^{}({})", l.m, r);
                mid.push_str(&format!("{:<w$}", "∪", w = cells[idx] + 3));
                bottom.push(format!("{:<w$}", cell, w = cells[idx]));
            }
        }
        let _ = writeln!(s, "  {}", mid.trim_end());
        let _ = writeln!(s, "  {}", bottom.join(" ⊂ ").trim_end());
        let _ = writeln!(
            s,
            "{:>5} {:>6} {:>6} {:>7} {:>10} {:>10} {:>10} {:>6}",
            "level", "rank D", "rank E", "[D,D]", "angle", "inv(E)", "incl", "dim L"
        );
        for l in self.levels.iter().rev() {
            let opt_u = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
            let opt_f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2e}"));
            let _ = writeln!(
                s,
                "{:>5} {:>6} {:>6} {:>7} {:>10} {:>10} {:>10} {:>6}",
                format!("D^{}", l.m),
                l.rank_d,
                opt_u(l.rank_e),
                opt_u(l.derived_rank),
                opt_f(l.derived_angle),
                opt_f(l.involutivity_e),
                opt_f(l.inclusion),
                opt_u(l.cauchy_dim)
            );
        }
        if let Some(g) = &self.goursat {
            let _ = writeln!(s, "Goursat coranks {:?}", g.coranks);
        }
        for c in &self.checks {
            let _ = writeln!(
                s,
                "[{}] {}: {}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        let _ = write!(s, "{}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

impl fmt::Display for FlagReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
