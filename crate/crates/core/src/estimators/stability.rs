//! Scale stability of the rescaled walk and the martingale increment check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, ORIGIN};
use crate::rng::StreamKey;
use crate::stats::{self, Estimate, Proportion};
use crate::walker::Setting;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub gap: usize,
    pub ratio: f64,
    pub exceedance: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub epsilon: f64,
    pub points: Vec<StabilityPoint>,
    /// Exceedance strictly decreasing as `N / gap` grows.
    pub decreasing: bool,
}

/// Fraction of replicas with `|X̂_{N+L}/√(N+L) − X̂_N/√N| ≥ ε` for each gap
/// `L`, all gaps read off one run of length `N + max L` per replica.
pub fn scale_stability(setting: &Setting, n: usize, gaps: &[usize], epsilon: f64, v: &[f64], replicas: usize, key: StreamKey) -> Result<StabilityReport> {
    let d = setting.geometry().dim();
    if v.len() != d {
        return Err(Error::InvalidArgument("drift has the wrong dimension".into()));
    }
    if n == 0 || replicas == 0 || gaps.iter().any(|g| *g > n) {
        return Err(Error::InvalidArgument("need N > 0, replicas and gaps at most N".into()));
    }
    let max_gap = gaps.iter().copied().max().unwrap_or(0);
    let scaled = |x: &geometry::Point, t: usize| -> Vec<f64> {
        let s = (t as f64).sqrt();
        (0..d).map(|c| (x[c] as f64 - t as f64 * v[c]) / s).collect()
    };
    let hits: Vec<Vec<bool>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let (ek, wk, _) = Setting::replica_keys(key, r as u64);
            let mut env = setting.driver(ek)?;
            let mut x = ORIGIN;
            let mut at_n = Vec::new();
            let mut out = vec![false; gaps.len()];
            for t in 0..=n + max_gap {
                if t == n {
                    at_n = scaled(&x, n);
                }
                for (i, g) in gaps.iter().enumerate() {
                    if *g > 0 && t == n + g {
                        let later = scaled(&x, t);
                        let dist = later.iter().zip(&at_n).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        out[i] = dist >= epsilon;
                    }
                }
                if t == n + max_gap {
                    break;
                }
                let z = setting.draw(env.state(), &x, wk, t as u64);
                x = geometry::add(&x, &setting.model.steps()[z]);
                env.advance();
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let points: Vec<StabilityPoint> = gaps
        .iter()
        .enumerate()
        .map(|(i, &gap)| StabilityPoint {
            gap,
            ratio: if gap == 0 { f64::INFINITY } else { n as f64 / gap as f64 },
            exceedance: stats::wilson(hits.iter().filter(|h| h[i]).count(), replicas, 0.95),
        })
        .collect();
    let mut sorted: Vec<&StabilityPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let decreasing = sorted.windows(2).all(|w| w[1].exceedance.estimate < w[0].exceedance.estimate);
    Ok(StabilityReport { n, epsilon, points, decreasing })
}

/// Mean of `Δ_{t+1} − g(ω_t)` per coordinate over all steps of all replicas;
/// the summands are martingale differences, so the plain standard error applies.
pub fn martingale_check(setting: &Setting, n: usize, replicas: usize, key: StreamKey) -> Result<Vec<Estimate>> {
    let d = setting.geometry().dim();
    let drift = setting.model.drift_by_key();
    let geom = *setting.geometry();
    let per_replica: Vec<Vec<Vec<f64>>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let (ek, wk, _) = Setting::replica_keys(key, r as u64);
            let mut env = setting.driver(ek)?;
            let mut x = ORIGIN;
            let mut out = vec![Vec::with_capacity(n); d];
            for t in 0..n {
                let k = setting.model.key_at(env.state(), &geom, &x);
                let z = setting.model.steps()[setting.model.draw(k, wk.uniform(t as u64))];
                for c in 0..d {
                    out[c].push(z[c] as f64 - drift[k][c]);
                }
                x = geometry::add(&x, &z);
                env.advance();
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..d)
        .map(|c| {
            let all: Vec<f64> = per_replica.iter().flat_map(|r| r[c].iter().copied()).collect();
            Estimate::from_samples(&all)
        })
        .collect())
}
