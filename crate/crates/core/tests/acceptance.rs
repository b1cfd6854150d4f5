//! Acceptance run: one pass/fail line per criterion. Exits non-zero if any
//! criterion fails.

use std::sync::Arc;
use std::time::Instant;

use dynwalk_core::estimators::clt::annealed_endpoints;
use dynwalk_core::estimators::resolvent::resolvent_solver;
use dynwalk_core::exact::{mixing_report, ExactModel, DEFAULT_STATE_CAP};
use dynwalk_core::fixtures::{desk_kernel, desk_walk, desk_walk_with, random_valid_pair};
use dynwalk_core::lattice::{dobrushin_constants, product_chain_comparison, EnvKernel, StateLaw};
use dynwalk_core::lift::{lift_operators, verify_lift, DEFAULT_LIFT_CAP};
use dynwalk_core::pair::{difference_chain_absorption, encounter_scaling, excursion_probability, offdiagonal_sum, separation_survival};
use dynwalk_core::stats::Estimate;
use dynwalk_core::walker::{Perturbation, Setting, WalkModel};
use dynwalk_core::{
    annealed_clt_test, mw_condition_scan, quenched_clt_test, scale_stability, EnvStart, Geometry, MwScanConfig, Reference, ScanStart,
    StreamKey, ORIGIN,
};
use nalgebra::DVector;

type Outcome = (bool, String);

fn line(id: usize, name: &str, started: Instant, outcome: Outcome) -> bool {
    let (ok, detail) = outcome;
    println!(
        "criterion {id:>2} {:<4} {name} ({:.1} s): {detail}",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    ok
}

fn geom(l: usize) -> Geometry {
    Geometry::new(1, l).unwrap()
}

fn desk_setting(l: usize, walk: &WalkModel, burn_in: usize) -> Setting {
    Setting::new(&desk_kernel(), walk, &geom(l), EnvStart::Equilibrium { burn_in }).unwrap()
}

fn exact_identities() -> Outcome {
    let kernel = desk_kernel();
    let g = geom(3);
    let exact = ExactModel::build(&kernel, &desk_walk(), &g, DEFAULT_STATE_CAP).unwrap();
    let bundle = lift_operators(&kernel, &g, kernel.base(), DEFAULT_LIFT_CAP).unwrap();
    let lift = verify_lift(&bundle, &exact.mu_e, 100, 0, StreamKey::from_seed(11));
    let g0 = DVector::from_column_slice(exact.centred_drift().column(0).as_slice());
    let mut resid: f64 = 0.0;
    let mut agree: f64 = 0.0;
    for eps in [0.5, 1.0 / 32.0, 1.0 / 1024.0] {
        let r = resolvent_solver(&exact.seen_matrix, &g0, eps).unwrap();
        resid = resid.max(r.identity_residual);
        agree = agree.max(r.agreement);
    }
    let ok = lift.telescoping_error <= 1e-12
        && lift.projection_error <= 1e-12
        && exact.poisson_residual <= 1e-10
        && resid <= 1e-10
        && agree <= 1e-8;
    (
        ok,
        format!(
            "ΣJ_q f error {:.1e}, Pr∘Ψ error {:.1e}, Poisson residual {:.1e}, resolvent residual {:.1e}, series/direct {:.1e}",
            lift.telescoping_error, lift.projection_error, exact.poisson_residual, resid, agree
        ),
    )
}

fn lift_contraction() -> Outcome {
    let kernel = desk_kernel();
    let g = geom(3);
    let exact = ExactModel::build(&kernel, &desk_walk(), &g, DEFAULT_STATE_CAP).unwrap();
    let bundle = lift_operators(&kernel, &g, kernel.base(), DEFAULT_LIFT_CAP).unwrap();
    let r = verify_lift(&bundle, &exact.mu_e, 10, 1000, StreamKey::from_seed(12));
    let ok = r.probes == 1000 && r.max_probe_ratio <= 0.3 && r.fixed_point_error <= 1e-8;
    (ok, format!("max ‖Aμ‖/‖μ‖ = {:.4} over {} probes (bound 0.3), fixed-point error {:.1e}", r.max_probe_ratio, r.probes, r.fixed_point_error))
}

fn spectral_dobrushin() -> Outcome {
    let mut rng = StreamKey::from_seed(13).chacha();
    let g = geom(3);
    let mut worst_margin = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..100 {
        let (k, w) = random_valid_pair(&mut rng);
        let exact = ExactModel::build(&k, &w, &g, DEFAULT_STATE_CAP).unwrap();
        let m = mixing_report(&exact).unwrap();
        worst_margin = worst_margin.max(m.seen_second - m.eta1);
        failures += (m.seen_second > m.eta1 + 1e-9) as usize;
    }
    (failures == 0, format!("100 random pairs, largest (|λ₂(S)| − η₁) = {worst_margin:.4}, violations {failures}"))
}

fn degenerate_cases() -> Outcome {
    let a = [0.2, 0.5, 0.3];
    let walk = desk_walk_with(a.to_vec(), 0.0);
    let v = a[2] - a[0];
    let sigma2 = a[0] + a[2] - v * v;
    let exact = ExactModel::build(&desk_kernel(), &walk, &geom(4), DEFAULT_STATE_CAP).unwrap();
    let exact_ok = (exact.v[0] - v).abs() < 1e-12 && (exact.sigma2[(0, 0)] - sigma2).abs() < 1e-12;
    let n = 2000;
    let setting = desk_setting(4, &walk, 8);
    let ends = annealed_endpoints(&setting, n, 10_000, StreamKey::from_seed(14)).unwrap();
    let drift = Estimate::from_samples(&ends.iter().map(|x| x[0] as f64 / n as f64).collect::<Vec<_>>());
    let var = Estimate::from_samples(&ends.iter().map(|x| (x[0] as f64 - n as f64 * v).powi(2) / n as f64).collect::<Vec<_>>());
    let zd = (drift.mean - v).abs() / drift.std_err;
    let zv = (var.mean - sigma2).abs() / var.std_err;
    (
        exact_ok && zd <= 3.0 && zv <= 3.0,
        format!(
            "oracle v = {:.15}, Σ² = {:.15} (closed form {v}, {sigma2}); Monte Carlo drift {:.2} SE, variance {:.2} SE away",
            exact.v[0],
            exact.sigma2[(0, 0)],
            zd,
            zv
        ),
    )
}

fn desk_reference(l: usize) -> (ExactModel, Reference) {
    let exact = ExactModel::build(&desk_kernel(), &desk_walk(), &geom(l), DEFAULT_STATE_CAP).unwrap();
    let r = Reference::from_exact(&exact);
    (exact, r)
}

fn quenched_clt() -> Outcome {
    let (_, reference) = desk_reference(4);
    let setting = desk_setting(4, &desk_walk(), 24);
    let r = quenched_clt_test(&setting, 2000, 4000, 5, StreamKey::from_seed(15), &reference).unwrap();
    let errs: Vec<String> = r.groups.iter().map(|g| format!("{:.3}", g.relative_error.unwrap())).collect();
    let pvals: Vec<String> = r.groups.iter().map(|g| format!("{:.3}", g.projections[0].ks.p_value)).collect();
    let d = r.dispersion.as_ref().unwrap();
    (
        r.passed,
        format!(
            "Σ² = {:.5}; relative errors [{}] (tolerance 0.15); KS p [{}], {} of 5 above 0.01; dispersion {:.3} vs 99% null {:.3}",
            reference.sigma2.as_ref().unwrap()[0][0],
            errs.join(", "),
            pvals.join(", "),
            r.ks_passes,
            d.statistic,
            d.null_quantile
        ),
    )
}

fn annealed_clt() -> Outcome {
    let (_, reference) = desk_reference(4);
    let setting = desk_setting(4, &desk_walk(), 24);
    let r = annealed_clt_test(&setting, 2000, 10_000, StreamKey::from_seed(16), &reference).unwrap();
    let g = &r.groups[0];
    let err = g.relative_error.unwrap();
    (
        err <= 0.10,
        format!("covariance {:.5} vs Σ² {:.5}: relative error {:.4} (tolerance 0.10), KS p {:.3}", g.covariance[0][0], reference.sigma2.as_ref().unwrap()[0][0], err, g.projections[0].ks.p_value),
    )
}

fn identity_cross_check() -> Outcome {
    let l = 8;
    let (exact, _) = desk_reference(l);
    let law = Arc::new(StateLaw::new(&exact.mu, 2, l).unwrap());
    let setting = Setting::new(&desk_kernel(), &desk_walk(), &geom(l), EnvStart::Law(law.clone())).unwrap();
    let grid = vec![8, 16, 32];
    let cfg = MwScanConfig::new(grid.clone(), 40_000, vec![1.0], ScanStart::ExactMu(law));
    let scan = mw_condition_scan(&setting, &cfg, &exact.v, StreamKey::from_seed(17)).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (row, &n) in scan.rows.iter().zip(&grid) {
        let pair = offdiagonal_sum(&setting, n, &[1.0], &exact.v, 40_000, StreamKey::from_seed(100 + n as u64)).unwrap();
        let z = (row.a_n_sq - pair.mean).abs() / (row.a_n_sq_se.powi(2) + pair.std_err.powi(2)).sqrt();
        ok &= z <= 3.0;
        parts.push(format!("n={n}: a_n² {:.5}±{:.5}, pair {:.5}±{:.5} ({z:.2} SE)", row.a_n_sq, row.a_n_sq_se, pair.mean, pair.std_err));
    }
    (ok, parts.join("; "))
}

fn encounters() -> Outcome {
    let setting = desk_setting(64, &desk_walk(), 24);
    let grid: Vec<usize> = (10..=15).map(|k| 1usize << k).collect();
    let r = encounter_scaling(&setting, &grid, 1.0, 200, StreamKey::from_seed(18)).unwrap();
    let f = r.fit.as_ref().unwrap();
    let means: Vec<String> = r.points.iter().map(|p| format!("{:.1}", p.mean)).collect();
    (r.passed, format!("exponent {:.3}, 95% CI ({:.3}, {:.3}); mean counts [{}]", f.slope, f.slope_ci.0, f.slope_ci.1, means.join(", ")))
}

fn excursions() -> Outcome {
    let setting = desk_setting(128, &desk_walk(), 24);
    let r = excursion_probability(&setting, 32, 1.0, 10_000, StreamKey::from_seed(19)).unwrap();
    let free = desk_walk_with(vec![0.3, 0.4, 0.3], 0.0);
    let control_setting = desk_setting(128, &free, 1);
    let c = excursion_probability(&control_setting, 32, 1.0, 10_000, StreamKey::from_seed(20)).unwrap();
    let exact = difference_chain_absorption(&free, 32, 1.0).unwrap();
    let z = (c.estimate.estimate - exact).abs() / c.estimate.std_err;
    (
        r.estimate.ci.0 > 0.20 && z <= 3.0,
        format!(
            "escape {:.4}, CI ({:.4}, {:.4}); unperturbed control {:.4} vs exact {exact:.4} ({z:.2} SE)",
            r.estimate.estimate, r.estimate.ci.0, r.estimate.ci.1, c.estimate.estimate
        ),
    )
}

fn survival_and_stability() -> Outcome {
    let setting = desk_setting(128, &desk_walk(), 24);
    let grid: Vec<usize> = (8..=12).map(|k| 1usize << k).collect();
    let s = separation_survival(&setting, &grid, 8, (ORIGIN, [16, 0, 0]), 10_000, StreamKey::from_seed(21)).unwrap();
    let beta = s.beta.unwrap_or(f64::NAN);
    let free = desk_walk_with(vec![0.3, 0.4, 0.3], 0.0);
    let st = scale_stability(&desk_setting(8, &free, 1), 1024, &[256, 64, 16], 0.5, &[0.0], 10_000, StreamKey::from_seed(22)).unwrap();
    let ex: Vec<String> = st.points.iter().map(|p| format!("{}:{:.4}", p.ratio, p.exceedance.estimate)).collect();
    let surv: Vec<String> = s.points.iter().map(|(n, p)| format!("{n}:{:.4}", p.estimate)).collect();
    (
        s.all_positive && beta.is_finite() && st.decreasing,
        format!("survival [{}], β̂ = {beta:.3}; exceedance by N/L [{}]", surv.join(", "), ex.join(", ")),
    )
}

fn product_chain_algebra() -> Outcome {
    let mut mismatches = 0;
    let mut checked = 0;
    // (1 + 3D) η₀ < 1 implies η₀ + D < 1 only when D ≤ 2/3.
    let mut weaker_violations = 0;
    let mut weaker_outside_boundary = 0;
    for i in 1..100 {
        for j in 0..100 {
            let kappa = i as f64 / 100.0;
            let eps = j as f64 / 100.0;
            let c = product_chain_comparison(kappa, eps, 1);
            checked += 1;
            let product = (1.0 + 3.0 * (1.0 - eps)) * (1.0 - kappa);
            mismatches += ((c.site_only_product - product).abs() > 1e-15) as usize;
            mismatches += ((c.eta1_general - c.eta1_site_only).abs() > 1e-15) as usize;
            mismatches += (c.site_only_holds != (product < 1.0)) as usize;
            mismatches += (c.site_only_holds != c.rewritten_holds && (product - 1.0).abs() > 1e-12) as usize;
            if eps <= 0.75 && c.quadratic_condition {
                mismatches += !c.site_only_holds as usize;
            }
            if c.site_only_holds && !c.sum_condition {
                weaker_violations += 1;
                weaker_outside_boundary += (1.0 - eps <= 2.0 / 3.0) as usize;
            }
            let cubic = product_chain_comparison(1.0 - eps.powi(3), eps, 1);
            mismatches += (eps < 1.0 && !cubic.site_only_holds) as usize;
        }
    }
    // A kernel with no off-site coupling and a walk reading only its site.
    let kappa = 0.8;
    let eps = 0.7;
    let kernel = EnvKernel::new(1, vec![0.5, 0.5], vec![(ORIGIN, 1.0 - kappa)], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 9.0).unwrap();
    // |π̂_z| = (1 − ε) a_z for every z.
    let walk = WalkModel::new(
        1,
        2,
        1,
        vec![0.25, 0.5, 0.25],
        1.0 - eps,
        Perturbation::Center(vec![vec![-0.25, 0.25], vec![0.5, -0.5], vec![-0.25, 0.25]]),
    )
    .unwrap();
    let report = dobrushin_constants(&kernel, Some(&walk));
    let c = product_chain_comparison(kappa, eps, 1);
    let report_ok = (report.eta0 - c.eta0).abs() < 1e-12 && (report.walk_perturbation.unwrap() - c.perturbation).abs() < 1e-12;
    (
        mismatches == 0 && weaker_outside_boundary == 0 && report_ok,
        format!(
            "{checked} (κ, ε) pairs, {mismatches} mismatches; κ + ε > 1 fails under the product condition at {weaker_violations} pairs, all with ε < 1/3; checker on κ = {kappa}, ε = {eps}: η₀ = {:.3}, D = {:.3}, (1 + 3(1 − ε))(1 − κ) = {:.3}",
            report.eta0,
            report.walk_perturbation.unwrap(),
            c.site_only_product
        ),
    )
}

fn main() {
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "exact identities", exact_identities),
        (2, "lift contraction", lift_contraction),
        (3, "spectral Dobrushin bound", spectral_dobrushin),
        (4, "degenerate closed forms", degenerate_cases),
        (5, "quenched CLT", quenched_clt),
        (6, "annealed CLT", annealed_clt),
        (7, "mean-field / pair identity", identity_cross_check),
        (8, "encounter scaling", encounters),
        (9, "excursion probability", excursions),
        (10, "separation survival and scale stability", survival_and_stability),
        (11, "product-chain condition algebra", product_chain_algebra),
    ];
    let mut all = true;
    for (id, name, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let t = Instant::now();
        all &= line(id, name, t, run());
    }
    if !all {
        std::process::exit(1);
    }
}
