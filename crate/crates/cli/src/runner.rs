//! Experiment dispatch. Each experiment fills an [`ExperimentReport`] as it
//! goes, so an error part-way through still leaves the earlier results.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use dynwalk_core::estimators::clt::{KS_LEVEL, MIN_WALKS};
use dynwalk_core::estimators::resolvent::resolvent_sequence;
use dynwalk_core::estimators::scan::SCAN_CSV_HEADER;
use dynwalk_core::exact::{density_ratio, SPECTRUM_CAP};
use dynwalk_core::geometry::{self, Point};
use dynwalk_core::lattice::StateLaw;
use dynwalk_core::pair::run_pair;
use dynwalk_core::stats::Estimate;
use dynwalk_core::walker::RecordOptions;
use dynwalk_core::{
    annealed_clt_test, check_ellipticity, close_encounters, difference_chain_absorption, dobrushin_constants, encounter_scaling,
    excursion_probability, kernel_tv_sensitivity, mixing_report, mw_condition_scan, offdiagonal_sum, quenched_clt_test,
    resolvent_solver, separation_survival, simulate, simulate_pair, CltReport, EnvDynamics, EnvStart, Error, ExactModel, Label,
    MwScanConfig, Reference, ScanStart, Setting, StreamKey, ORIGIN,
};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{RunConfig, ScanStartMode, StartMode};
use crate::report::{Cell, ExperimentReport, Series};

/// Tolerance for identities that hold up to rounding.
const IDENTITY_TOL: f64 = 1e-10;

/// Runs `cfg.kind` under master seed `seed`. Errors end the run but are
/// recorded in the report rather than returned.
pub fn run_experiment(cfg: &RunConfig, seed: u64) -> ExperimentReport {
    let mut report = ExperimentReport::new(&cfg.kind);
    let key = StreamKey::from_seed(seed);
    let outcome = report
        .set("dobrushin", dobrushin_constants(&cfg.kernel, cfg.walk.as_ref()))
        .and_then(|_| dispatch(cfg, key, &mut report));
    if let Err(e) = outcome {
        report.fail(&e.context(format!("experiment `{}`", cfg.kind)));
    }
    report
}

fn dispatch(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    match cfg.kind.as_str() {
        "check" => check(cfg, r),
        "env-sim" => env_sim(cfg, key, r),
        "walk-sim" => walk_sim(cfg, key, r),
        "pair-sim" => pair_sim(cfg, key, r),
        "encounters" => encounters(cfg, key, r),
        "excursion" => excursion(cfg, key, r),
        "survival" => survival(cfg, key, r),
        "exact" => exact(cfg, r),
        "resolvent" => resolvent(cfg, r),
        "mw-scan" => mw_scan(cfg, key, r),
        "quenched-clt" => clt(cfg, key, r, true),
        "annealed-clt" => clt(cfg, key, r, false),
        other => bail!("unknown experiment kind `{other}`"),
    }
}

fn exact_model(cfg: &RunConfig) -> Result<ExactModel> {
    ExactModel::build(&cfg.kernel, cfg.walk()?, &cfg.geometry, cfg.raw.cap).context("building the exact model")
}

fn mu_law(cfg: &RunConfig, exact: &ExactModel) -> Result<Arc<StateLaw>> {
    Ok(Arc::new(StateLaw::new(&exact.mu, cfg.kernel.symbols(), cfg.geometry.num_sites())?))
}

/// Start law from `[env]`; the exact-μ start needs the exact model.
fn start_and_exact(cfg: &RunConfig) -> Result<(EnvStart, Option<ExactModel>)> {
    match cfg.start_mode() {
        StartMode::Equilibrium => Ok((cfg.env_start(), None)),
        StartMode::ExactMu => {
            let exact = exact_model(cfg)?;
            Ok((EnvStart::Law(mu_law(cfg, &exact)?), Some(exact)))
        }
    }
}

fn setting(cfg: &RunConfig, start: EnvStart) -> Result<Setting> {
    Ok(Setting::new(&cfg.kernel, cfg.walk()?, &cfg.geometry, start)?)
}

fn check(cfg: &RunConfig, r: &mut ExperimentReport) -> Result<()> {
    let walk = cfg.walk()?;
    let dob = dobrushin_constants(&cfg.kernel, Some(walk));
    let ell = check_ellipticity(walk);
    r.set("ellipticity", &ell)?;
    r.check("A5", ell.passed, format!("c = {}, gamma floor = {}, affine span {}", ell.c, ell.gamma_floor, ell.span));
    let mut sensitivities = Vec::new();
    for (q, d) in &dob.d {
        let s = kernel_tv_sensitivity(&cfg.kernel, q);
        let origin = *q == ORIGIN;
        let bound = if origin { 2.0 * d } else { *d };
        let offset = &q[..cfg.geometry.dim()];
        let name = if origin { "A6".to_string() } else { format!("A7{offset:?}") };
        r.check(&name, s <= bound + 1e-12, format!("offset {offset:?}: max L1 change {s} against bound {bound}"));
        sensitivities.push((*q, s, bound));
    }
    r.set("sensitivities", sensitivities)?;
    r.check(
        "A8",
        dob.decay_exponent_admissible,
        format!("finite influence set; decay exponent {} admissible {}", dob.decay_exponent, dob.decay_exponent_admissible),
    );
    r.check("A9a", dob.a9a, format!("eta0 = {} < 1", dob.eta0));
    let eta1 = dob.eta1.unwrap_or(f64::INFINITY);
    r.check("A9b", dob.a9b == Some(true), format!("eta1 = {eta1} < 1"));
    r.check(
        "A9c",
        dob.a9c == Some(true),
        format!("eta0 = {} against threshold {}", dob.eta0, dob.a9c_threshold.unwrap_or(0.0)),
    );
    Ok(())
}

fn env_sim(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    let sim = cfg.section("sim", &cfg.raw.sim)?;
    if sim.replicas == 0 {
        bail!("[sim] replicas must be positive");
    }
    let dynamics = EnvDynamics::new(&cfg.kernel, &cfg.geometry)?;
    let start = match cfg.start_mode() {
        StartMode::Equilibrium => cfg.env_start(),
        StartMode::ExactMu => {
            // Without a walk the natural exact start is the environment's own stationary law.
            let env = dynwalk_core::exact::build_env_operator(&cfg.kernel, &cfg.geometry, cfg.raw.cap)?;
            let mu_e = dynwalk_core::exact::stationary_distribution(&env, 1e-12, 1_000_000)?;
            EnvStart::Law(Arc::new(StateLaw::new(&mu_e, cfg.kernel.symbols(), cfg.geometry.num_sites())?))
        }
    };
    let m = cfg.kernel.symbols();
    let sites = cfg.geometry.num_sites() as f64;
    let counts: Vec<Vec<Vec<usize>>> = (0..sim.replicas)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Vec<usize>>> {
            let env_key = key.derive(Label::Replica, rep as u64).derive(Label::Env, 0);
            let initial = start.initial(&dynamics, env_key)?;
            let history = dynamics.history(initial, sim.steps, env_key)?;
            Ok((0..history.len())
                .map(|t| {
                    let mut c = vec![0; m];
                    history.state(t).iter().for_each(|s| c[*s as usize] += 1);
                    c
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..m).map(|s| format!("freq_{s}"))).collect();
    let mut freq = Series::new("env_frequencies", &header.join(","));
    for t in 0..=sim.steps {
        let mut row: Vec<Cell> = vec![t.into()];
        for s in 0..m {
            let total: usize = counts.iter().map(|c| c[t][s]).sum();
            row.push((total as f64 / (sites * sim.replicas as f64)).into());
        }
        freq.push(row);
    }
    let final_freq: Vec<f64> = (0..m)
        .map(|s| counts.iter().map(|c| c[sim.steps][s]).sum::<usize>() as f64 / (sites * sim.replicas as f64))
        .collect();
    r.set("final_frequencies", &final_freq)?;
    r.set("burn_in", cfg.burn_in)?;
    r.check("frequencies_normalized", (final_freq.iter().sum::<f64>() - 1.0).abs() < 1e-12, "symbol frequencies sum to one");
    r.series.push(freq);
    {
        let env_key = key.derive(Label::Replica, 0).derive(Label::Env, 0);
        let history = dynamics.history(start.initial(&dynamics, env_key)?, sim.steps, env_key)?;
        let mut table = Series::new("env_history", "t,site,value");
        for t in 0..history.len() {
            for (s, v) in history.state(t).iter().enumerate() {
                table.push(vec![t.into(), s.into(), (*v as usize).into()]);
            }
        }
        r.series.push(table);
    }
    Ok(())
}

fn coords_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}{i}")).collect()
}

fn walk_sim(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    let sim = cfg.section("sim", &cfg.raw.sim)?;
    if sim.replicas == 0 {
        bail!("[sim] replicas must be positive");
    }
    let walk = cfg.walk()?;
    let (start, _) = start_and_exact(cfg)?;
    let dynamics = EnvDynamics::new(&cfg.kernel, &cfg.geometry)?;
    let d = cfg.geometry.dim();
    let n = sim.steps;
    let trajectories = (0..sim.replicas)
        .into_par_iter()
        .map(|rep| {
            let (env_key, walk_key, _) = Setting::replica_keys(key, rep as u64);
            simulate(&dynamics, walk, &start, n, env_key, walk_key, RecordOptions::default())
        })
        .collect::<dynwalk_core::Result<Vec<_>>>()?;
    let within_range = trajectories
        .iter()
        .all(|t| t.increments().iter().all(|z| geometry::sup_norm(z, d) <= walk.range()));
    r.check("increments_in_range", within_range, format!("every increment has sup-norm at most {}", walk.range()));
    if n > 0 && !trajectories.is_empty() {
        let drift: Vec<Estimate> = (0..d)
            .map(|c| Estimate::from_samples(&trajectories.iter().map(|t| t.endpoint()[c] as f64 / n as f64).collect::<Vec<_>>()))
            .collect();
        r.set("drift", &drift)?;
    }
    if let Some(first) = trajectories.first() {
        let header = [vec!["t".to_string()], coords_header("x", d), coords_header("dx", d)].concat();
        let mut s = Series::new("trajectory", &header.join(","));
        for (t, x) in first.positions.iter().enumerate() {
            let dx = if t == 0 { ORIGIN } else { geometry::sub(x, &first.positions[t - 1]) };
            let row = std::iter::once(t.into()).chain(x[..d].iter().chain(&dx[..d]).map(|c| Cell::Int(*c))).collect();
            s.push(row);
        }
        r.series.push(s);
    }
    let header = [vec!["replica".to_string()], coords_header("x", d)].concat();
    let mut ends = Series::new("endpoints", &header.join(","));
    for (i, t) in trajectories.iter().enumerate() {
        ends.push(std::iter::once(i.into()).chain(t.endpoint()[..d].iter().map(|c| Cell::Int(*c))).collect());
    }
    r.series.push(ends);
    Ok(())
}

fn pair_sim(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    let p = cfg.section("pair", &cfg.raw.pair)?;
    let (start, _) = start_and_exact(cfg)?;
    let s = setting(cfg, start)?;
    let d = cfg.geometry.dim();
    let counts: Vec<usize> = (0..p.replicas)
        .into_par_iter()
        .map(|rep| {
            let (env_key, wx, wy) = Setting::replica_keys(key, rep as u64);
            let mut count = 0;
            run_pair(&s, p.steps, env_key, (wx, wy), (ORIGIN, ORIGIN), |_, x, y| {
                count += (geometry::sup_norm(&geometry::sub(x, y), d) <= p.threshold) as usize;
                true
            })?;
            Ok(count)
        })
        .collect::<Result<_>>()?;
    r.check(
        "counts_bounded",
        counts.iter().all(|c| *c <= p.steps + 1),
        format!("at most {} close times per pair", p.steps + 1),
    );
    if !counts.is_empty() {
        r.set("threshold", p.threshold)?;
        r.set("close_times", Estimate::from_samples(&counts.iter().map(|c| *c as f64).collect::<Vec<_>>()))?;
        let (env_key, wx, wy) = Setting::replica_keys(key, 0);
        let pair = simulate_pair(&s, p.steps, env_key, (wx, wy), (ORIGIN, ORIGIN))?;
        r.check(
            "replay_matches",
            close_encounters(&pair, p.threshold) == counts[0],
            "replica 0 replays to the same close-time count",
        );
        let header = [vec!["t".to_string()], coords_header("x", d), coords_header("y", d), vec!["distance".into()]].concat();
        let mut series = Series::new("pair_trajectory", &header.join(","));
        for t in 0..pair.x.len() {
            let row = std::iter::once(t.into())
                .chain(pair.x[t][..d].iter().chain(&pair.y[t][..d]).map(|c| Cell::Int(*c)))
                .chain(std::iter::once(Cell::Int(pair.distance(t))))
                .collect();
            series.push(row);
        }
        r.series.push(series);
    }
    let mut per = Series::new("close_times", "replica,count");
    counts.iter().enumerate().for_each(|(i, c)| per.push(vec![i.into(), (*c).into()]));
    r.series.push(per);
    Ok(())
}

fn encounters(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    let p = cfg.section("pair", &cfg.raw.pair)?;
    if p.n_grid.is_empty() {
        bail!("[pair] n_grid must not be empty for `encounters`");
    }
    let (start, _) = start_and_exact(cfg)?;
    let s = setting(cfg, start)?;
    let rep = encounter_scaling(&s, &p.n_grid, p.a, p.replicas, key)?;
    let mut series = Series::new("encounters", "n,threshold,mean,std_err,max_count");
    for pt in &rep.points {
        series.push(vec![pt.n.into(), Cell::Int(pt.threshold), pt.mean.into(), pt.std_err.into(), pt.max_count.into()]);
    }
    let detail = match &rep.fit {
        Some(f) => format!("exponent {} with 95% interval ({}, {}), below 1 required", f.slope, f.slope_ci.0, f.slope_ci.1),
        None => "no fit".to_string(),
    };
    r.check("sublinear_growth", rep.passed, detail);
    r.set("encounters", &rep)?;
    r.series.push(series);
    Ok(())
}

fn excursion(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    let p = cfg.section("pair", &cfg.raw.pair)?;
    let (start, _) = start_and_exact(cfg)?;
    let s = setting(cfg, start)?;
    let rep = excursion_probability(&s, p.r, p.epsilon, p.replicas, key)?;
    let e = &rep.estimate;
    r.check("escape_positive", e.ci.0 > 0.0, format!("escape {} with 95% interval ({}, {})", e.estimate, e.ci.0, e.ci.1));
    let mut series = Series::new("excursion", "r,epsilon,escape,std_err,ci_low,ci_high,mean_exit_time,truncated");
    series.push(vec![
        Cell::Int(rep.r),
        rep.epsilon.into(),
        e.estimate.into(),
        e.std_err.into(),
        e.ci.0.into(),
        e.ci.1.into(),
        rep.mean_exit_time.into(),
        rep.truncated.into(),
    ]);
    r.set("excursion", &rep)?;
    r.series.push(series);
    let walk = cfg.walk()?;
    if walk.delta() == 0.0 {
        let exact = difference_chain_absorption(walk, p.r, p.epsilon)?;
        let z = (e.estimate - exact).abs() / e.std_err.max(f64::MIN_POSITIVE);
        r.set("exact_escape", exact)?;
        r.check("matches_difference_chain", z <= 3.0, format!("exact {exact}, estimate {z:.3} standard errors away"));
    }
    Ok(())
}

fn survival(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    let p = cfg.section("pair", &cfg.raw.pair)?;
    if p.n_grid.is_empty() {
        bail!("[pair] n_grid must not be empty for `survival`");
    }
    let (start, _) = start_and_exact(cfg)?;
    let s = setting(cfg, start)?;
    let sep = p.separation.unwrap_or(2 * p.threshold);
    let mut far: Point = ORIGIN;
    far[0] = sep;
    let rep = separation_survival(&s, &p.n_grid, p.threshold, (ORIGIN, far), p.replicas, key)?;
    let mut series = Series::new("survival", "n,survival,std_err,ci_low,ci_high");
    for (n, q) in &rep.points {
        series.push(vec![(*n).into(), q.estimate.into(), q.std_err.into(), q.ci.0.into(), q.ci.1.into()]);
    }
    r.check(
        "survival_positive",
        rep.all_positive,
        format!("beta estimate {}", rep.beta.map_or("unavailable".to_string(), |b| b.to_string())),
    );
    r.set("survival", &rep)?;
    r.series.push(series);
    Ok(())
}

fn exact(cfg: &RunConfig, r: &mut ExperimentReport) -> Result<()> {
    let m = exact_model(cfg)?;
    let d = cfg.geometry.dim();
    r.set("states", m.n_states())?;
    r.set("v", &m.v)?;
    r.set("sigma2", (0..d).map(|i| (0..d).map(|j| m.sigma2[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())?;
    r.check("poisson_residual", m.poisson_residual <= IDENTITY_TOL, format!("{:e}", m.poisson_residual));
    let shift = m.shift_commutation_error();
    r.check("shift_commutation", shift <= IDENTITY_TOL, format!("{shift:e}"));
    let density = density_ratio(&m.mu, &m.mu_e)?;
    r.check("density_positive", density.passed, format!("dmu/dmu_e in [{}, {}]", density.min, density.max));
    let mut series = Series::new("stationary", &[vec!["state".into(), "mu_e".into(), "mu".into()], coords_header("h", d)].concat().join(","));
    for i in 0..m.n_states() {
        let row = [vec![i.into(), m.mu_e[i].into(), m.mu[i].into()], (0..d).map(|c| m.h[(i, c)].into()).collect()].concat();
        series.push(row);
    }
    r.series.push(series);
    if m.n_states() <= SPECTRUM_CAP {
        let mix = mixing_report(&m)?;
        r.check("env_gap", mix.env_within_eta0, format!("|lambda_2(K)| = {} against eta0 = {}", mix.env_second, mix.eta0));
        r.check("seen_gap", mix.seen_within_eta1, format!("|lambda_2(S)| = {} against eta1 = {}", mix.seen_second, mix.eta1));
        r.set("mixing", &mix)?;
    }
    Ok(())
}

fn resolvent(cfg: &RunConfig, r: &mut ExperimentReport) -> Result<()> {
    let section = cfg.section("resolvent", &cfg.raw.resolvent)?;
    if section.epsilon.is_empty() {
        bail!("[resolvent] epsilon must not be empty");
    }
    let m = exact_model(cfg)?;
    let g = DVector::from_column_slice(m.centred_drift().column(0).as_slice());
    let h = DVector::from_column_slice(m.h.column(0).as_slice());
    let mut series = Series::new("resolvent", "epsilon,agreement,identity_residual,terms,tail_bound");
    let mut reports = Vec::new();
    for &eps in &section.epsilon {
        let rep = resolvent_solver(&m.seen_matrix, &g, eps).with_context(|| format!("epsilon = {eps}"))?;
        r.check(
            &format!("resolvent_eps_{eps}"),
            rep.converged && rep.identity_residual <= IDENTITY_TOL && rep.agreement <= 1e-8,
            format!("residual {:e}, series/direct {:e}, {} terms", rep.identity_residual, rep.agreement, rep.terms),
        );
        series.push(vec![eps.into(), rep.agreement.into(), rep.identity_residual.into(), rep.terms.into(), rep.tail_bound.into()]);
        reports.push(rep);
    }
    r.set("solves", &reports)?;
    r.series.push(series);
    let eps0 = section.epsilon.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let steps = resolvent_sequence(&m.seen_matrix, &g, eps0, section.k_max, &m.mu, Some(&h))?;
    let mut seq = Series::new("resolvent_sequence", "k,epsilon,norm,weighted,partial_sum,error");
    for s in &steps {
        seq.push(vec![s.k.into(), s.epsilon.into(), s.norm.into(), s.weighted.into(), s.partial_sum.into(), s.error.unwrap_or(f64::NAN).into()]);
    }
    let (first, last) = (steps.first().and_then(|s| s.error), steps.last().and_then(|s| s.error));
    if let (Some(a), Some(b)) = (first, last) {
        r.check("approaches_poisson", b <= a, format!("sup error {a:e} at k = 0, {b:e} at k = {}", section.k_max));
    }
    r.set("sequence", &steps)?;
    r.series.push(seq);
    Ok(())
}

fn unit_direction(cfg: &RunConfig, given: Option<&Vec<f64>>) -> Result<Vec<f64>> {
    let d = cfg.geometry.dim();
    let w = match given {
        Some(w) => w.clone(),
        None => (0..d).map(|i| (i == 0) as u8 as f64).collect(),
    };
    if w.len() != d {
        bail!("[scan] direction has {} components, expected {d}", w.len());
    }
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        bail!("[scan] direction must be nonzero");
    }
    Ok(w.iter().map(|x| x / norm).collect())
}

fn mw_scan(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport) -> Result<()> {
    let sc = cfg.section("scan", &cfg.raw.scan)?;
    let w = unit_direction(cfg, sc.direction.as_ref())?;
    let (setting_start, scan_start, v) = match sc.start {
        ScanStartMode::ExactMu => {
            let m = exact_model(cfg)?;
            let law = mu_law(cfg, &m)?;
            (EnvStart::Law(law.clone()), ScanStart::ExactMu(law), m.v)
        }
        ScanStartMode::Reweighted => {
            let m = exact_model(cfg)?;
            let density = density_ratio(&m.mu, &m.mu_e)?.ratio;
            (cfg.env_start(), ScanStart::Reweighted { burn_in: cfg.burn_in, density: Arc::new(density) }, m.v)
        }
        ScanStartMode::Approximate => {
            let s = setting(cfg, cfg.env_start())?;
            let horizon = sc.n_grid.iter().copied().max().unwrap_or(1);
            let pre = Reference::from_pre_run(&s, horizon, 1000, key.derive(Label::Aux, 1))?;
            r.set("drift_pre_run", &pre)?;
            (cfg.env_start(), ScanStart::Approximate { burn_in: cfg.burn_in }, pre.v)
        }
    };
    let s = setting(cfg, setting_start)?;
    let mut scan_cfg = MwScanConfig::new(sc.n_grid.clone(), sc.histories, w.clone(), scan_start);
    scan_cfg.rho = sc.rho;
    let rep = mw_condition_scan(&s, &scan_cfg, &v, key)?;
    let mut series = Series::new("mw_scan", SCAN_CSV_HEADER);
    for row in &rep.rows {
        series.push(vec![row.n.into(), row.a_n.into(), row.weight.into(), row.summand.into(), row.partial_sum.into()]);
    }
    r.series.push(series);
    let ci = rep.growth_ci.map_or("unavailable".to_string(), |c| format!("({}, {})", c.0, c.1));
    r.check("summable", rep.summable, format!("growth exponent interval {ci}, below 1/2 required"));
    r.set("scan", &rep)?;
    r.set("bounded", rep.bounded)?;
    if sc.pair_replicas > 0 {
        if sc.start != ScanStartMode::ExactMu {
            r.set("pair_cross_check", "skipped: needs the exact-mu start so both routes share a start law")?;
            return Ok(());
        }
        for row in &rep.rows {
            let pair = offdiagonal_sum(&s, row.n, &w, &v, sc.pair_replicas, key.derive(Label::Grid, row.n as u64))?;
            let z = (row.a_n_sq - pair.mean).abs() / (row.a_n_sq_se.powi(2) + pair.std_err.powi(2)).sqrt();
            r.check(
                &format!("pair_identity_n{}", row.n),
                z <= 3.0,
                format!("mean-field {} against two-walker {}: {z:.3} combined standard errors", row.a_n_sq, pair.mean),
            );
        }
    }
    Ok(())
}

fn clt(cfg: &RunConfig, key: StreamKey, r: &mut ExperimentReport, quenched: bool) -> Result<()> {
    let c = cfg.section("clt", &cfg.raw.clt)?;
    let (start, exact) = start_and_exact(cfg)?;
    let exact = match exact {
        Some(m) => Some(m),
        None => match exact_model(cfg) {
            Ok(m) => Some(m),
            Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::StateCap { .. })) => None,
            Err(e) => return Err(e),
        },
    };
    let s = setting(cfg, start)?;
    let reference = match &exact {
        Some(m) => Reference::from_exact(m),
        None => Reference::from_pre_run(&s, c.n, c.walks.max(c.replicas).max(MIN_WALKS), key.derive(Label::Aux, 1))?,
    };
    let rep: CltReport = if quenched {
        quenched_clt_test(&s, c.n, c.walks, c.histories, key, &reference)?
    } else {
        annealed_clt_test(&s, c.n, c.replicas, key, &reference)?
    };
    let mut series = Series::new("clt_groups", "group,samples,relative_error,min_eigenvalue,ks_min_p_value");
    for (i, g) in rep.groups.iter().enumerate() {
        let p = g.projections.iter().map(|p| p.ks.p_value).fold(1.0, f64::min);
        series.push(vec![i.into(), g.samples.into(), g.relative_error.unwrap_or(f64::NAN).into(), g.min_eigenvalue.into(), p.into()]);
    }
    r.series.push(series);
    if let Some(ok) = rep.covariance_passed {
        r.check("covariance", ok, format!("relative Frobenius error within {}", rep.tolerance));
    }
    let needed = if rep.groups.len() >= 5 { rep.groups.len() - rep.groups.len() / 5 } else { rep.groups.len() };
    r.check(
        "normality",
        rep.ks_passes >= needed,
        format!("{} of {} groups with every KS p-value above {KS_LEVEL}", rep.ks_passes, rep.groups.len()),
    );
    if let Some(d) = &rep.dispersion {
        r.check("dispersion", d.passed, format!("statistic {} against null quantile {}", d.statistic, d.null_quantile));
    }
    r.check("clt", rep.passed, "all CLT conditions");
    r.set("clt", &rep)?;
    Ok(())
}

/// Prints the constants every run depends on; used by the binary after parsing.
pub fn constants_summary(cfg: &RunConfig) -> String {
    let dob = dobrushin_constants(&cfg.kernel, cfg.walk.as_ref());
    let mut s = format!("eta0 = {}", dob.eta0);
    if let (Some(d), Some(e1)) = (dob.walk_perturbation, dob.eta1) {
        s.push_str(&format!(", D = {d}, eta1 = {e1}"));
    }
    s.push_str(&format!(", A9(a) {}", dob.a9a));
    if let (Some(b), Some(c)) = (dob.a9b, dob.a9c) {
        s.push_str(&format!(", A9(b) {b}, A9(c) {c}"));
    }
    s
}
