//! Resolvent approximation `(1 + ε) h_ε = M h_ε + g` of the Poisson equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::max_row_sum_error;

pub const SERIES_TOL: f64 = 1e-13;
pub const SERIES_CAP: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventReport {
    pub epsilon: f64,
    pub direct: Vec<f64>,
    pub series: Vec<f64>,
    /// `‖direct − series‖_∞`.
    pub agreement: f64,
    /// `‖(1 + ε) h − M h − g‖_∞` of the direct solution.
    pub identity_residual: f64,
    pub terms: usize,
    /// Bound on the omitted series tail.
    pub tail_bound: f64,
    pub converged: bool,
}

/// `Σ_{s > S} ε s ‖g‖ / (1 + ε)^{s+1}`, using `‖V_s g‖ ≤ s ‖g‖`.
fn tail_bound(eps: f64, terms: usize, g_norm: f64) -> f64 {
    let r = 1.0 / (1.0 + eps);
    let s = terms as f64;
    let sum = r.powf(s + 1.0) * ((s + 1.0) - s * r) / (1.0 - r).powi(2);
    eps * r * g_norm * sum
}

/// Solves for `h_ε` by a direct solve and by the series
/// `h_ε = ε Σ_{s ≥ 1} V_s g / (1 + ε)^{s+1}` with `V_s = Σ_{t<s} M^t`.
pub fn resolvent_solver(m: &DMatrix<f64>, g: &DVector<f64>, eps: f64) -> Result<ResolventReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("ε must be positive".into()));
    }
    let n = m.nrows();
    if m.ncols() != n || g.len() != n {
        return Err(Error::InvalidArgument("matrix and vector sizes differ".into()));
    }
    if m.iter().any(|x| *x < -1e-15) || max_row_sum_error(m) > 1e-10 {
        return Err(Error::InvalidArgument("matrix is not row-stochastic".into()));
    }
    let a = DMatrix::identity(n, n) * (1.0 + eps) - m;
    let direct = a.lu().solve(g).ok_or_else(|| Error::Singular("(1 + ε) I − M".into()))?;
    let identity_residual = (&direct * (1.0 + eps) - m * &direct - g).amax();

    let g_norm = g.amax();
    let mut series = DVector::zeros(n);
    let mut power = g.clone();
    let mut v_s = DVector::zeros(n);
    let mut scale = 1.0 / (1.0 + eps);
    let mut terms = 0;
    let mut bound = tail_bound(eps, 0, g_norm);
    while terms < SERIES_CAP && bound > SERIES_TOL * g_norm.max(1e-300) {
        terms += 1;
        v_s += &power;
        power = m * power;
        scale /= 1.0 + eps;
        series.axpy(eps * scale, &v_s, 1.0);
        bound = tail_bound(eps, terms, g_norm);
    }
    let converged = bound <= SERIES_TOL * g_norm.max(1e-300) || g_norm == 0.0;
    Ok(ResolventReport {
        epsilon: eps,
        agreement: (&direct - &series).amax(),
        direct: direct.as_slice().to_vec(),
        series: series.as_slice().to_vec(),
        identity_residual,
        terms,
        tail_bound: bound,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventStep {
    pub k: usize,
    pub epsilon: f64,
    /// `‖h_ε‖` in `L²(weights)`.
    pub norm: f64,
    pub weighted: f64,
    pub partial_sum: f64,
    /// `‖h_ε − h‖_∞` against a reference solution, when given.
    pub error: Option<f64>,
}

/// `√ε_k ‖h_{ε_k}‖` for `ε_k = 2^{-k} ε₀`, `k = 0..=k_max`, by direct solves.
pub fn resolvent_sequence(
    m: &DMatrix<f64>,
    g: &DVector<f64>,
    eps0: f64,
    k_max: usize,
    weights: &[f64],
    reference: Option<&DVector<f64>>,
) -> Result<Vec<ResolventStep>> {
    let n = m.nrows();
    if weights.len() != n {
        return Err(Error::InvalidArgument("weights must match the matrix size".into()));
    }
    let mut partial = 0.0;
    (0..=k_max)
        .map(|k| {
            let eps = eps0 / 2f64.powi(k as i32);
            let a = DMatrix::identity(n, n) * (1.0 + eps) - m;
            let h = a.lu().solve(g).ok_or_else(|| Error::Singular("(1 + ε) I − M".into()))?;
            let norm = h.iter().zip(weights).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
            let weighted = eps.sqrt() * norm;
            partial += weighted;
            Ok(ResolventStep { k, epsilon: eps, norm, weighted, partial_sum: partial, error: reference.map(|r| (&h - r).amax()) })
        })
        .collect()
}
