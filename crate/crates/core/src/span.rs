//! Generator sets and SVD-based span computations.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold used for numerical ranks.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Ordered tangent vectors at one point, spanning a candidate distribution.
#[derive(Debug, Clone, Default)]
pub struct GeneratorSet {
    vectors: Vec<DVector<f64>>,
    labels: Vec<String>,
}

impl GeneratorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_vectors(vectors: Vec<DVector<f64>>) -> Self {
        let labels = (0..vectors.len()).map(|i| format!("v{i}")).collect();
        Self { vectors, labels }
    }

    pub fn push(&mut self, label: impl Into<String>, v: DVector<f64>) {
        if let Some(first) = self.vectors.first() {
            assert_eq!(first.len(), v.len(), "generators must share one ambient space");
        }
        self.labels.push(label.into());
        self.vectors.push(v);
    }

    pub fn extend(&mut self, other: &GeneratorSet) {
        for (l, v) in other.labels.iter().zip(&other.vectors) {
            self.push(l.clone(), v.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn ambient_dim(&self) -> Option<usize> {
        self.vectors.first().map(|v| v.len())
    }

    /// Generators as matrix columns.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.vectors)
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut s: Vec<f64> = self.matrix().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Number of singular values above `tol · σ_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let s = self.singular_values();
        match s.first() {
            Some(&max) if max > 0.0 => s.iter().filter(|&&x| x > tol * max).count(),
            _ => 0,
        }
    }

    /// Orthonormal basis (as columns) of the numerical span.
    pub fn orthonormal_basis(&self, tol: f64) -> DMatrix<f64> {
        let dim = self.ambient_dim().unwrap_or(0);
        if self.is_empty() {
            return DMatrix::zeros(dim, 0);
        }
        let svd = self.matrix().svd(true, false);
        let u = svd.u.expect("requested U");
        let max = svd.singular_values.max();
        if max <= 0.0 {
            return DMatrix::zeros(dim, 0);
        }
        let cols: Vec<DVector<f64>> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > tol * max)
            .map(|(i, _)| u.column(i).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(dim, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}

/// Component of `v` orthogonal to the column span of the orthonormal `basis`.
pub fn orthogonal_component(basis: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return v.clone();
    }
    v - basis * (basis.transpose() * v)
}

/// `rank_of` with the given relative tolerance.
pub fn rank_of(gs: &GeneratorSet, tol: f64) -> usize {
    gs.rank(tol)
}

/// Largest principal angle between two subspaces given by orthonormal bases,
/// measured in both directions. Different dimensions give `π/2`.
pub fn principal_angle_between(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let one_way = |x: &DMatrix<f64>, y: &DMatrix<f64>| {
        let residual = x - y * (y.transpose() * x);
        spectral_norm(&residual)
    };
    let s = one_way(a, b).max(one_way(b, a)).min(1.0);
    s.asin()
}

/// Largest principal angle between the numerical spans of two generator sets.
pub fn principal_angle(a: &GeneratorSet, b: &GeneratorSet, tol: f64) -> f64 {
    principal_angle_between(&a.orthonormal_basis(tol), &b.orthonormal_basis(tol))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}
