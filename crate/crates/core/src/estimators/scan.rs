//! Square-integrability scan of the quenched mean-field sums.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EnvStart, StateLaw};
use crate::rng::{Label, StreamKey};
use crate::stats::{self, LinearFit};
use crate::walker::Setting;

use super::quenched::mean_field_terms;

/// Initial law of the environment seen from the walker.
#[derive(Debug, Clone)]
pub enum ScanStart {
    /// Exact draws from `μ` (small volume).
    ExactMu(Arc<StateLaw>),
    /// Burned-in `μ_e` draws weighted by `dμ/dμ_e` of the drawn configuration.
    Reweighted { burn_in: usize, density: Arc<Vec<f64>> },
    /// Burned-in `μ_e` draws used as if they were `μ`.
    Approximate { burn_in: usize },
}

#[derive(Debug, Clone)]
pub struct MwScanConfig {
    pub n_grid: Vec<usize>,
    pub rho: f64,
    pub histories: usize,
    pub direction: Vec<f64>,
    pub start: ScanStart,
    pub bootstrap: usize,
}

impl MwScanConfig {
    pub fn new(n_grid: Vec<usize>, histories: usize, direction: Vec<f64>, start: ScanStart) -> Self {
        MwScanConfig { n_grid, rho: 1.5, histories, direction, start, bootstrap: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    pub a_n: f64,
    /// Estimate and standard error of `a_n²`.
    pub a_n_sq: f64,
    pub a_n_sq_se: f64,
    pub weight: f64,
    pub summand: f64,
    /// `Σ_{m ≤ n} m^{-3/2} (ln m)^ρ a_m` over every `m`, not just the grid.
    pub partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwScanReport {
    pub rho: f64,
    pub histories: usize,
    pub approximate_start: bool,
    pub rows: Vec<ScanRow>,
    /// Fit of `ln a_n` against `ln n` over the grid with a bootstrap interval
    /// across histories.
    pub growth: Option<LinearFit>,
    pub growth_ci: Option<(f64, f64)>,
    /// No growth trend at 95%: the interval for the exponent reaches 0.
    pub bounded: bool,
    /// Exponent below 1/2 at 95%, which makes the weighted series converge.
    pub summable: bool,
    pub flags: Vec<String>,
}

pub const SCAN_CSV_HEADER: &str = "n,a_n,weight,summand,partial_sum";

pub fn scan_weight(n: usize, rho: f64) -> f64 {
    let nf = n as f64;
    nf.powf(-1.5) * nf.ln().powf(rho)
}

/// Weighted mean and its delta-method standard error.
fn ratio_estimate(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let m = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / sw;
    let k = values.len() as f64;
    let wbar = sw / k;
    let var = values.iter().zip(weights).map(|(v, w)| (w * (v - m)).powi(2)).sum::<f64>() / (k * (k - 1.0)) / wbar.powi(2);
    (m, var.max(0.0).sqrt())
}

/// Per-history partial sums `S_n = Σ_{k<n} ⟨w, Π^k G⟩` for `n = 1..=max_n`
/// and the start weight of each history.
pub fn mean_field_sums(setting: &Setting, cfg: &MwScanConfig, v: &[f64], key: StreamKey) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let geom = *setting.geometry();
    let max_n = cfg.n_grid.iter().copied().max().unwrap_or(0);
    let start = match &cfg.start {
        ScanStart::ExactMu(law) => EnvStart::Law(law.clone()),
        ScanStart::Reweighted { burn_in, .. } | ScanStart::Approximate { burn_in } => EnvStart::Equilibrium { burn_in: *burn_in },
    };
    let m = setting.dynamics.kernel().symbols();
    let out: Vec<(Vec<f64>, f64)> = (0..cfg.histories)
        .into_par_iter()
        .map(|h| {
            let env_key = key.derive(Label::History, h as u64);
            let initial = start.initial(&setting.dynamics, env_key)?;
            let weight = match &cfg.start {
                ScanStart::Reweighted { density, .. } => density[initial.index(m)],
                _ => 1.0,
            };
            let history = setting.dynamics.history(initial, max_n, env_key)?;
            let terms = mean_field_terms(&history, &setting.model, &geom, max_n, v, &cfg.direction)?;
            let mut acc = 0.0;
            let sums = terms
                .iter()
                .map(|t| {
                    acc += t;
                    acc
                })
                .collect();
            Ok((sums, weight))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

fn growth_fit(grid: &[usize], a: &[f64]) -> Option<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .zip(a)
        .filter(|(n, a)| **n > 0 && **a > 0.0)
        .map(|(n, a)| ((*n as f64).ln(), a.ln()))
        .unzip();
    stats::ols(&xs, &ys, 0.95)
}

/// `a_n = ‖Σ_{k<n} ⟨w, Π^k G⟩‖` in `L²` of the start law, the weighted
/// summands `n^{-3/2} (ln n)^ρ a_n`, their partial sums and growth verdicts.
pub fn mw_condition_scan(setting: &Setting, cfg: &MwScanConfig, v: &[f64], key: StreamKey) -> Result<MwScanReport> {
    if cfg.rho <= 1.0 {
        return Err(Error::InvalidArgument(format!("ρ = {} must exceed 1", cfg.rho)));
    }
    let dim = setting.geometry().dim();
    if cfg.direction.len() != dim || v.len() != dim {
        return Err(Error::InvalidArgument("direction and drift must have the lattice dimension".into()));
    }
    let norm = cfg.direction.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("direction must be a unit vector (norm {norm})")));
    }
    if cfg.histories < 2 || cfg.n_grid.iter().any(|n| *n == 0) {
        return Err(Error::InvalidArgument("need two histories and positive horizons".into()));
    }
    let (sums, weights) = mean_field_sums(setting, cfg, v, key)?;
    let max_n = cfg.n_grid.iter().copied().max().unwrap();
    let a_sq_at = |n: usize, idx: &[usize]| -> (f64, f64) {
        let vals: Vec<f64> = idx.iter().map(|&h| sums[h][n - 1].powi(2)).collect();
        let ws: Vec<f64> = idx.iter().map(|&h| weights[h]).collect();
        ratio_estimate(&vals, &ws)
    };
    let all: Vec<usize> = (0..cfg.histories).collect();
    let mut partial = 0.0;
    let mut partial_at = vec![0.0; max_n + 1];
    for n in 1..=max_n {
        partial += scan_weight(n, cfg.rho) * a_sq_at(n, &all).0.max(0.0).sqrt();
        partial_at[n] = partial;
    }
    let rows: Vec<ScanRow> = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let (a2, se) = a_sq_at(n, &all);
            let a = a2.max(0.0).sqrt();
            let weight = scan_weight(n, cfg.rho);
            ScanRow { n, a_n: a, a_n_sq: a2, a_n_sq_se: se, weight, summand: weight * a, partial_sum: partial_at[n] }
        })
        .collect();
    let a: Vec<f64> = rows.iter().map(|r| r.a_n).collect();
    let growth = growth_fit(&cfg.n_grid, &a);
    let mut slopes = Vec::with_capacity(cfg.bootstrap);
    let mut rng = key.derive(Label::Bootstrap, 0).rng();
    for _ in 0..cfg.bootstrap {
        let idx: Vec<usize> = (0..cfg.histories).map(|_| rand::Rng::random_range(&mut rng, 0..cfg.histories)).collect();
        let a_b: Vec<f64> = cfg.n_grid.iter().map(|&n| a_sq_at(n, &idx).0.max(0.0).sqrt()).collect();
        if let Some(f) = growth_fit(&cfg.n_grid, &a_b) {
            slopes.push(f.slope);
        }
    }
    let growth_ci = (slopes.len() >= 20).then(|| (stats::quantile(&slopes, 0.025), stats::quantile(&slopes, 0.975)));
    let mut flags = Vec::new();
    let approximate_start = matches!(cfg.start, ScanStart::Approximate { .. });
    if approximate_start {
        flags.push("approximate start: burned-in environment law used in place of the seen-from-walker law".into());
    }
    if growth.is_none() {
        flags.push("growth fit needs three grid points with positive a_n".into());
    }
    let bounded = a.iter().all(|x| *x == 0.0) || growth_ci.is_some_and(|ci| ci.0 <= 0.0);
    let summable = a.iter().all(|x| *x == 0.0) || growth_ci.is_some_and(|ci| ci.1 < 0.5);
    Ok(MwScanReport { rho: cfg.rho, histories: cfg.histories, approximate_start, rows, growth, growth_ci, bounded, summable, flags })
}
