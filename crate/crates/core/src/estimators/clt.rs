//! Quenched and annealed central limit checks against a reference covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactModel;
use crate::geometry::{Point, ORIGIN};
use crate::rng::{Label, StreamKey};
use crate::stats::{self, KsResult};
use crate::walker::{endpoint_on_history, Setting};

pub const MIN_WALKS: usize = 100;
pub const QUENCHED_TOLERANCE: f64 = 0.15;
pub const ANNEALED_TOLERANCE: f64 = 0.10;
pub const KS_LEVEL: f64 = 0.01;
pub const DISPERSION_BOOTSTRAP: usize = 999;
pub const DISPERSION_LEVEL: f64 = 0.99;

/// Drift and limiting covariance used for centring and comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub v: Vec<f64>,
    pub v_std_err: Vec<f64>,
    pub sigma2: Option<Vec<Vec<f64>>>,
    pub exact: bool,
}

impl Reference {
    pub fn from_exact(model: &ExactModel) -> Self {
        let d = model.geom.dim();
        Reference {
            v: model.v.clone(),
            v_std_err: vec![0.0; d],
            sigma2: Some((0..d).map(|i| (0..d).map(|j| model.sigma2[(i, j)]).collect()).collect()),
            exact: true,
        }
    }

    /// Annealed drift from `walks` runs of length `10 n`.
    pub fn from_pre_run(setting: &Setting, n: usize, walks: usize, key: StreamKey) -> Result<Self> {
        let horizon = 10 * n.max(1);
        let d = setting.geometry().dim();
        let ends = annealed_endpoints(setting, horizon, walks, key)?;
        let per_coord: Vec<Vec<f64>> = (0..d).map(|c| ends.iter().map(|x| x[c] as f64 / horizon as f64).collect()).collect();
        Ok(Reference {
            v: per_coord.iter().map(|x| stats::mean(x)).collect(),
            v_std_err: per_coord.iter().map(|x| stats::std_err(x)).collect(),
            sigma2: None,
            exact: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub direction: Vec<f64>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub samples: usize,
    pub drift: Vec<f64>,
    /// Sample covariance of `(X_N − N v) / √N`.
    pub covariance: Vec<Vec<f64>>,
    pub min_eigenvalue: f64,
    /// `‖Ĉ − Σ²‖_F / ‖Σ²‖_F` when a reference covariance is known.
    pub relative_error: Option<f64>,
    pub projections: Vec<ProjectionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    /// Variance across groups of the trace estimate over its mean sampling variance.
    pub statistic: f64,
    pub null_quantile: f64,
    pub level: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub n: usize,
    pub reference: Reference,
    pub tolerance: f64,
    pub ks_level: f64,
    pub groups: Vec<SampleStats>,
    pub dispersion: Option<Dispersion>,
    pub covariance_passed: Option<bool>,
    pub ks_passes: usize,
    pub passed: bool,
}

fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescaled endpoints `(X_N + U − N v) / √N` with a uniform lattice jitter `U`
/// used only for the KS statistics.
fn sample_stats(ends: &[Point], n: usize, reference: &Reference, jitter: StreamKey, random_dir: &[f64]) -> SampleStats {
    let d = reference.v.len();
    let m = ends.len();
    let sn = (n as f64).sqrt();
    let y: Vec<Vec<f64>> = ends.iter().map(|x| (0..d).map(|c| (x[c] as f64 - n as f64 * reference.v[c]) / sn).collect()).collect();
    let mean: Vec<f64> = (0..d).map(|c| y.iter().map(|r| r[c]).sum::<f64>() / m as f64).collect();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        y.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (m as f64 - 1.0)
    });
    let min_eigenvalue = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    let relative_error = reference.sigma2.as_ref().map(|s| {
        let s = DMatrix::from_fn(d, d, |i, j| s[i][j]);
        frobenius(&(&cov - &s)) / frobenius(&s)
    });
    let mut dirs: Vec<Vec<f64>> = (0..d).map(|c| (0..d).map(|k| (k == c) as u8 as f64).collect()).collect();
    if d > 1 {
        dirs.push(random_dir.to_vec());
    }
    let projections = dirs
        .into_iter()
        .enumerate()
        .map(|(pi, w)| {
            let raw: Vec<f64> = y.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
            let jkey = jitter.derive(Label::Aux, pi as u64);
            let jittered: Vec<f64> = raw.iter().enumerate().map(|(j, v)| v + (jkey.uniform(j as u64) - 0.5) / sn).collect();
            let mu = stats::mean(&jittered);
            let sd = stats::std_dev(&jittered);
            let z: Vec<f64> = jittered.iter().map(|v| (v - mu) / sd).collect();
            ProjectionStats {
                skewness: stats::skewness(&raw),
                excess_kurtosis: stats::excess_kurtosis(&raw),
                ks: stats::ks_test(&z, stats::normal_cdf),
                direction: w,
            }
        })
        .collect();
    SampleStats {
        samples: m,
        drift: (0..d).map(|c| ends.iter().map(|x| x[c] as f64).sum::<f64>() / (m as f64 * n as f64)).collect(),
        covariance: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
        min_eigenvalue,
        relative_error,
        projections,
    }
}

/// Squared distances from the group mean; their mean is the trace estimate.
fn centred_norms(ends: &[Point], d: usize, n: usize) -> Vec<f64> {
    let m = ends.len() as f64;
    let mean: Vec<f64> = (0..d).map(|c| ends.iter().map(|x| x[c] as f64).sum::<f64>() / m).collect();
    ends.iter().map(|x| (0..d).map(|c| (x[c] as f64 - mean[c]).powi(2)).sum::<f64>() / n as f64).collect()
}

fn dispersion_statistic(groups: &[Vec<f64>]) -> f64 {
    let traces: Vec<f64> = groups.iter().map(|q| stats::mean(q)).collect();
    let noise: Vec<f64> = groups.iter().map(|q| stats::variance(q) / q.len() as f64).collect();
    stats::variance(&traces) / stats::mean(&noise)
}

/// Compares the spread of per-group trace estimates with resampling noise:
/// the null redraws groups of the same sizes from the pooled centred values.
pub fn dispersion_test(groups: &[Vec<f64>], reps: usize, level: f64, key: StreamKey) -> Dispersion {
    let statistic = dispersion_statistic(groups);
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let null: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let k = key.derive(Label::Bootstrap, b as u64);
            let mut counter = 0u64;
            let resampled: Vec<Vec<f64>> = groups
                .iter()
                .map(|g| {
                    (0..g.len())
                        .map(|_| {
                            counter += 1;
                            pooled[((k.uniform(counter) * pooled.len() as f64) as usize).min(pooled.len() - 1)]
                        })
                        .collect()
                })
                .collect();
            dispersion_statistic(&resampled)
        })
        .collect();
    let null_quantile = stats::quantile(&null, level);
    Dispersion { statistic, null_quantile, level, passed: statistic <= null_quantile }
}

fn random_direction(d: usize, key: StreamKey) -> Vec<f64> {
    let z: Vec<f64> = (0..d).map(|c| stats::normal_quantile(key.uniform(c as u64).clamp(1e-12, 1.0 - 1e-12))).collect();
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    z.iter().map(|x| x / norm).collect()
}

/// Endpoints of independent annealed runs (fresh environment per run).
pub fn annealed_endpoints(setting: &Setting, n: usize, replicas: usize, key: StreamKey) -> Result<Vec<Point>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let (ek, wk, _) = Setting::replica_keys(key, r as u64);
            let mut env = setting.driver(ek)?;
            let mut x = ORIGIN;
            for t in 0..n {
                let z = setting.draw(env.state(), &x, wk, t as u64);
                x = crate::geometry::add(&x, &setting.model.steps()[z]);
                env.advance();
            }
            Ok(x)
        })
        .collect()
}

/// Endpoints of `walks` walks on each of `histories` recorded histories.
pub fn quenched_endpoints(setting: &Setting, n: usize, walks: usize, histories: usize, key: StreamKey) -> Result<Vec<Vec<Point>>> {
    let geom = *setting.geometry();
    (0..histories)
        .map(|h| {
            let hkey = key.derive(Label::History, h as u64);
            let env_key = hkey.derive(Label::Env, 0);
            let initial = setting.start.initial(&setting.dynamics, env_key)?;
            let history = setting.dynamics.history(initial, n, env_key)?;
            Ok((0..walks)
                .into_par_iter()
                .map(|j| endpoint_on_history(&history, &setting.model, &geom, n, hkey.derive(Label::Walk, j as u64)))
                .collect())
        })
        .collect()
}

fn check_reference(setting: &Setting, reference: &Reference) -> Result<()> {
    let d = setting.geometry().dim();
    if reference.v.len() != d || reference.sigma2.as_ref().is_some_and(|s| s.len() != d) {
        return Err(Error::InvalidArgument("reference has the wrong dimension".into()));
    }
    Ok(())
}

/// Per-history covariance and normality of `(X_N − N v)/√N` over `walks`
/// walks on each of `histories` fixed histories, plus a dispersion test
/// across histories.
pub fn quenched_clt_test(
    setting: &Setting,
    n: usize,
    walks: usize,
    histories: usize,
    key: StreamKey,
    reference: &Reference,
) -> Result<CltReport> {
    if walks < MIN_WALKS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_WALKS} walks per history, got {walks}")));
    }
    if histories == 0 || n == 0 {
        return Err(Error::InvalidArgument("need a positive horizon and at least one history".into()));
    }
    check_reference(setting, reference)?;
    let d = setting.geometry().dim();
    let ends = quenched_endpoints(setting, n, walks, histories, key)?;
    let dir = random_direction(d, key.derive(Label::Aux, 0));
    let groups: Vec<SampleStats> = ends
        .iter()
        .enumerate()
        .map(|(h, e)| sample_stats(e, n, reference, key.derive(Label::Jitter, h as u64), &dir))
        .collect();
    let dispersion = (histories >= 2).then(|| {
        let norms: Vec<Vec<f64>> = ends.iter().map(|e| centred_norms(e, d, n)).collect();
        dispersion_test(&norms, DISPERSION_BOOTSTRAP, DISPERSION_LEVEL, key.derive(Label::Bootstrap, 0))
    });
    Ok(finish(n, reference, QUENCHED_TOLERANCE, groups, dispersion))
}

/// Covariance and normality of `(X_N − N v)/√N` with a fresh environment for
/// every replica.
pub fn annealed_clt_test(setting: &Setting, n: usize, replicas: usize, key: StreamKey, reference: &Reference) -> Result<CltReport> {
    if replicas < MIN_WALKS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_WALKS} replicas, got {replicas}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need a positive horizon".into()));
    }
    check_reference(setting, reference)?;
    let d = setting.geometry().dim();
    let ends = annealed_endpoints(setting, n, replicas, key)?;
    let dir = random_direction(d, key.derive(Label::Aux, 0));
    let groups = vec![sample_stats(&ends, n, reference, key.derive(Label::Jitter, 0), &dir)];
    Ok(finish(n, reference, ANNEALED_TOLERANCE, groups, None))
}

fn finish(n: usize, reference: &Reference, tolerance: f64, groups: Vec<SampleStats>, dispersion: Option<Dispersion>) -> CltReport {
    let covariance_passed = reference
        .sigma2
        .as_ref()
        .map(|_| groups.iter().all(|g| g.relative_error.is_some_and(|e| e <= tolerance)));
    let ks_passes = groups.iter().filter(|g| g.projections.iter().all(|p| p.ks.p_value > KS_LEVEL)).count();
    let needed = if groups.len() >= 5 { groups.len() - groups.len() / 5 } else { groups.len() };
    let passed = covariance_passed.unwrap_or(true)
        && ks_passes >= needed
        && dispersion.as_ref().is_none_or(|d| d.passed)
        && groups.iter().all(|g| g.min_eigenvalue >= -1e-12);
    CltReport { n, reference: reference.clone(), tolerance, ks_level: KS_LEVEL, groups, dispersion, covariance_passed, ks_passes, passed }
}
