//! Two walkers in one environment: encounters, excursions, survival and the
//! off-diagonal covariance sum.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point, ORIGIN};
use crate::rng::StreamKey;
use crate::stats::{self, Estimate, LinearFit, Proportion};
use crate::walker::{check_ellipticity, Setting, WalkModel};

#[derive(Debug, Clone, PartialEq)]
pub struct PairTrajectory {
    pub dim: usize,
    pub x: Vec<Point>,
    pub y: Vec<Point>,
    pub env_key: StreamKey,
    pub walk_keys: (StreamKey, StreamKey),
}

impl PairTrajectory {
    pub fn distance(&self, t: usize) -> i64 {
        geometry::sup_norm(&geometry::sub(&self.x[t], &self.y[t]), self.dim)
    }
}

/// Runs two walkers on one environment for up to `n` steps, calling
/// `visit(t, X_t, Y_t)` for `t = 0..=n` until it returns `false`.
pub fn run_pair<F>(
    setting: &Setting,
    n: usize,
    env_key: StreamKey,
    keys: (StreamKey, StreamKey),
    starts: (Point, Point),
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &Point, &Point) -> bool,
{
    let mut env = setting.driver(env_key)?;
    let (mut x, mut y) = starts;
    let steps = setting.model.steps();
    if !visit(0, &x, &y) {
        return Ok(());
    }
    for t in 0..n {
        let zx = setting.draw(env.state(), &x, keys.0, t as u64);
        let zy = setting.draw(env.state(), &y, keys.1, t as u64);
        x = geometry::add(&x, &steps[zx]);
        y = geometry::add(&y, &steps[zy]);
        env.advance();
        if !visit(t + 1, &x, &y) {
            break;
        }
    }
    Ok(())
}

pub fn simulate_pair(
    setting: &Setting,
    n: usize,
    env_key: StreamKey,
    keys: (StreamKey, StreamKey),
    starts: (Point, Point),
) -> Result<PairTrajectory> {
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    run_pair(setting, n, env_key, keys, starts, |_, x, y| {
        xs.push(*x);
        ys.push(*y);
        true
    })?;
    Ok(PairTrajectory { dim: setting.geometry().dim(), x: xs, y: ys, env_key, walk_keys: keys })
}

/// `#{0 ≤ t ≤ N : ‖X_t − Y_t‖ ≤ threshold}` on unwrapped positions.
pub fn close_encounters(pair: &PairTrajectory, threshold: i64) -> usize {
    (0..pair.x.len()).filter(|&t| pair.distance(t) <= threshold).count()
}

/// `L_N = ⌊A ln N⌋`.
pub fn encounter_radius(a: f64, n: usize) -> i64 {
    (a * (n as f64).ln()).floor().max(0.0) as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterPoint {
    pub n: usize,
    pub threshold: i64,
    pub mean: f64,
    pub std_err: f64,
    pub max_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterReport {
    pub a: f64,
    pub replicas: usize,
    pub points: Vec<EncounterPoint>,
    pub fit: Option<LinearFit>,
    /// `γ = c · min γ_z` of the walk, and the scale `4 A ln γ⁻¹` it implies.
    pub gamma: f64,
    pub gamma_constraint: f64,
    pub passed: bool,
    pub flags: Vec<String>,
}

/// Mean encounter counts at `L_N = A ln N` over a grid of horizons with a
/// log-log fit of mean count against `N`.
pub fn encounter_scaling(setting: &Setting, n_grid: &[usize], a: f64, replicas: usize, key: StreamKey) -> Result<EncounterReport> {
    let mut flags = Vec::new();
    if replicas < 30 {
        flags.push(format!("only {replicas} replicas per horizon (< 30)"));
    }
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    let max_n = n_grid.iter().copied().max().unwrap_or(0);
    let side = setting.geometry().side() as f64;
    if side < 4.0 * a * (max_n.max(1) as f64).ln() {
        flags.push(format!("torus side {side} below 4 A ln N = {:.1}", 4.0 * a * (max_n as f64).ln()));
    }
    let mut points = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let threshold = encounter_radius(a, n);
        let grid_key = key.derive(crate::rng::Label::Grid, gi as u64);
        let counts: Vec<usize> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let (ek, xk, yk) = Setting::replica_keys(grid_key, r as u64);
                let mut count = 0usize;
                run_pair(setting, n, ek, (xk, yk), (ORIGIN, ORIGIN), |_, x, y| {
                    count += (geometry::sup_norm(&geometry::sub(x, y), setting.geometry().dim()) <= threshold) as usize;
                    true
                })
                .map(|_| count)
            })
            .collect::<Result<_>>()?;
        let c: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
        points.push(EncounterPoint {
            n,
            threshold,
            mean: stats::mean(&c),
            std_err: stats::std_err(&c),
            max_count: counts.iter().copied().max().unwrap_or(0),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
    let fit = stats::ols(&xs, &ys, 0.95);
    if fit.is_none() {
        flags.push("regression needs at least three distinct horizons".into());
    }
    let ell = check_ellipticity(&setting.model);
    let gamma = ell.gamma_floor;
    Ok(EncounterReport {
        a,
        replicas,
        passed: fit.as_ref().is_some_and(|f| f.slope_ci.1 < 1.0) && replicas >= 30,
        points,
        fit,
        gamma,
        gamma_constraint: if gamma > 0.0 { 4.0 * a * (1.0 / gamma).ln() } else { f64::INFINITY },
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionReport {
    pub r: i64,
    pub epsilon: f64,
    pub inner: f64,
    pub outer: i64,
    pub estimate: Proportion,
    pub mean_exit_time: f64,
    /// Steps cut off by the safety cap (counted as not escaping).
    pub truncated: usize,
    pub overlap: bool,
    /// `R` may be below the scale where the escape bound applies.
    pub below_quarter: bool,
    pub flags: Vec<String>,
}

const EXCURSION_STEP_CAP: usize = 50_000_000;

/// Fraction of pairs started at distance `R` (along the first axis) that reach
/// distance `≥ 2R` before coming within `Rε/2`.
pub fn excursion_probability(setting: &Setting, r: i64, epsilon: f64, replicas: usize, key: StreamKey) -> Result<ExcursionReport> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1]".into()));
    }
    if r < 1 || replicas == 0 {
        return Err(Error::InvalidArgument("need R ≥ 1 and at least one replica".into()));
    }
    let inner = r as f64 * epsilon / 2.0;
    let outer = 2 * r;
    let mut flags = Vec::new();
    let overlap = inner < 1.0;
    if overlap {
        flags.push(format!("inner radius Rε/2 = {inner} is below one lattice step"));
    }
    let dim = setting.geometry().dim();
    let mut b = ORIGIN;
    b[0] = r;
    let results: Vec<(bool, usize, bool)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let (ek, xk, yk) = Setting::replica_keys(key, i as u64);
            let mut outcome = (false, 0usize, true);
            run_pair(setting, EXCURSION_STEP_CAP, ek, (xk, yk), (ORIGIN, b), |t, x, y| {
                let d = geometry::sup_norm(&geometry::sub(x, y), dim);
                if d as f64 <= inner || d >= outer {
                    outcome = (d >= outer, t, false);
                    return false;
                }
                true
            })
            .map(|_| outcome)
        })
        .collect::<Result<_>>()?;
    let escaped = results.iter().filter(|r| r.0).count();
    let truncated = results.iter().filter(|r| r.2).count();
    if truncated > 0 {
        flags.push(format!("{truncated} replicas hit the step cap"));
    }
    let estimate = stats::wilson(escaped, replicas, 0.95);
    let below_quarter = estimate.estimate < 0.25 - 3.0 * estimate.std_err;
    if below_quarter {
        flags.push(format!("escape probability below 1/4: R = {r} may be too small"));
    }
    Ok(ExcursionReport {
        r,
        epsilon,
        inner,
        outer,
        estimate,
        mean_exit_time: results.iter().map(|r| r.1 as f64).sum::<f64>() / replicas as f64,
        truncated,
        overlap,
        below_quarter,
        flags,
    })
}

/// Law of `Y₁ − X₁` for independent steps from `a`.
pub fn difference_law(model: &WalkModel) -> Vec<(Point, f64)> {
    let mut law: Vec<(Point, f64)> = Vec::new();
    for (zx, px) in model.steps().iter().zip(model.base()) {
        for (zy, py) in model.steps().iter().zip(model.base()) {
            let w = geometry::sub(zy, zx);
            let p = px * py;
            match law.iter_mut().find(|(q, _)| *q == w) {
                Some(e) => e.1 += p,
                None => law.push((w, p)),
            }
        }
    }
    law.retain(|(_, p)| *p > 0.0);
    law
}

/// Escape probability of the unperturbed difference walk from distance `R`,
/// solved exactly on the annulus by Gauss–Seidel sweeps.
pub fn difference_chain_absorption(model: &WalkModel, r: i64, epsilon: f64) -> Result<f64> {
    if model.delta() != 0.0 && model.perturbation_bound() != 0.0 {
        return Err(Error::InvalidArgument("exact absorption needs an environment-independent walk".into()));
    }
    let dim = model.dim();
    let inner = r as f64 * epsilon / 2.0;
    let outer = 2 * r;
    let law = difference_law(model);
    let box_pts = geometry::ball(dim, outer - 1);
    let side = (2 * outer - 1) as usize;
    let index = |p: &Point| -> usize {
        let mut i = 0usize;
        for axis in 0..dim {
            i = i * side + (p[axis] + outer - 1) as usize;
        }
        i
    };
    let mut h = vec![0.0f64; box_pts.len()];
    let interior: Vec<bool> = box_pts.iter().map(|p| geometry::sup_norm(p, dim) as f64 > inner).collect();
    let value = |h: &[f64], p: &Point| -> f64 {
        let d = geometry::sup_norm(p, dim);
        if d >= outer {
            1.0
        } else if d as f64 <= inner {
            0.0
        } else {
            h[index(p)]
        }
    };
    for sweep in 0..10_000_000usize {
        let mut change: f64 = 0.0;
        for (i, p) in box_pts.iter().enumerate() {
            if !interior[i] {
                continue;
            }
            let mut acc = 0.0;
            let mut stay = 0.0;
            for (w, pw) in &law {
                if w[..dim].iter().all(|c| *c == 0) {
                    stay += pw;
                } else {
                    acc += pw * value(&h, &geometry::add(p, w));
                }
            }
            let new = acc / (1.0 - stay);
            change = change.max((new - h[i]).abs());
            h[i] = new;
        }
        if change < 1e-15 {
            let mut start = ORIGIN;
            start[0] = r;
            return Ok(value(&h, &start));
        }
        if sweep == 9_999_999 {
            return Err(Error::NoConvergence { iterations: sweep + 1, residual: change });
        }
    }
    unreachable!()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalReport {
    pub threshold: i64,
    pub separation: i64,
    pub points: Vec<(usize, Proportion)>,
    /// Fit of `ln P(survive N)` against `ln N`; `β̂` is minus the slope.
    pub fit: Option<LinearFit>,
    pub beta: Option<f64>,
    pub all_positive: bool,
    pub flags: Vec<String>,
}

/// Probability that the walkers stay more than `threshold` apart for all
/// `j ≤ N`, for each `N` in the grid (one run per replica up to the largest).
pub fn separation_survival(
    setting: &Setting,
    n_grid: &[usize],
    threshold: i64,
    starts: (Point, Point),
    replicas: usize,
    key: StreamKey,
) -> Result<SurvivalReport> {
    let dim = setting.geometry().dim();
    let separation = geometry::sup_norm(&geometry::sub(&starts.0, &starts.1), dim);
    if separation <= threshold {
        return Err(Error::InvalidArgument(format!("initial separation {separation} must exceed {threshold}")));
    }
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    let max_n = n_grid.iter().copied().max().unwrap_or(0);
    let deaths: Vec<Option<usize>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let (ek, xk, yk) = Setting::replica_keys(key, i as u64);
            let mut death = None;
            run_pair(setting, max_n, ek, (xk, yk), starts, |t, x, y| {
                if geometry::sup_norm(&geometry::sub(x, y), dim) <= threshold {
                    death = Some(t);
                    return false;
                }
                true
            })
            .map(|_| death)
        })
        .collect::<Result<_>>()?;
    let points: Vec<(usize, Proportion)> = n_grid
        .iter()
        .map(|&n| {
            let alive = deaths.iter().filter(|d| d.is_none_or(|t| t > n)).count();
            (n, stats::wilson(alive, replicas, 0.95))
        })
        .collect();
    let all_positive = points.iter().all(|(_, p)| p.successes > 0);
    let usable: Vec<&(usize, Proportion)> = points.iter().filter(|(n, p)| *n > 0 && p.successes > 0).collect();
    let xs: Vec<f64> = usable.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|(_, p)| p.estimate.ln()).collect();
    let fit = stats::ols(&xs, &ys, 0.95);
    let mut flags = Vec::new();
    if !all_positive {
        flags.push("some survival estimates are zero".into());
    }
    Ok(SurvivalReport {
        threshold,
        separation,
        beta: fit.as_ref().map(|f| -f.slope),
        points,
        fit,
        all_positive,
        flags,
    })
}

/// Monte Carlo estimate of `E[⟨w, X_N − Nv⟩⟨w, Y_N − Nv⟩]`, which equals the
/// double sum of cross-covariances of centred increments.
pub fn offdiagonal_sum(setting: &Setting, n: usize, w: &[f64], v: &[f64], replicas: usize, key: StreamKey) -> Result<Estimate> {
    let dim = setting.geometry().dim();
    if w.len() != dim || v.len() != dim {
        return Err(Error::InvalidArgument("direction and drift must have the lattice dimension".into()));
    }
    let norm = w.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("direction must be a unit vector (norm {norm})")));
    }
    let wv = DVector::from_column_slice(w);
    let centred = |p: &Point| -> f64 { (0..dim).map(|c| wv[c] * (p[c] as f64 - n as f64 * v[c])).sum() };
    let products: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let (ek, xk, yk) = Setting::replica_keys(key, i as u64);
            let mut ends = (ORIGIN, ORIGIN);
            run_pair(setting, n, ek, (xk, yk), (ORIGIN, ORIGIN), |t, x, y| {
                if t == n {
                    ends = (*x, *y);
                }
                true
            })
            .map(|_| centred(&ends.0) * centred(&ends.1))
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&products))
}
