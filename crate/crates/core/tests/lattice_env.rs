use dynwalk_core::exact::{build_env_operator, stationary_distribution, POWER_MAX_ITER, POWER_TOL};
use dynwalk_core::fixtures::{desk_kernel, desk_walk, random_kernel};
use dynwalk_core::lattice::{default_burn_in, EnvDynamics, EnvHistory};
use dynwalk_core::{
    dobrushin_constants, env_step, kernel_tv_sensitivity, sample_equilibrium, spatial_correlation, EnvState, Error, Geometry,
    LocalObservable, StreamKey, ORIGIN,
};
use proptest::prelude::*;

/// Site law written out from the kernel definition for the desk instance.
fn desk_site_law(centre: f64, right: f64, left: f64) -> f64 {
    let copy = |s: f64| if s > 0.0 { 0.9 } else { 0.1 };
    0.8 * 0.5 + 0.1 * copy(centre) + 0.05 * copy(right) + 0.05 * copy(left)
}

#[test]
fn desk_site_laws_match_the_definition() {
    let k = desk_kernel();
    let spin = [1.0, -1.0];
    for key in 0..8u8 {
        let local = [key & 1, (key >> 1) & 1, (key >> 2) & 1];
        let p = k.site_law(&local);
        let expected = desk_site_law(spin[local[0] as usize], spin[local[1] as usize], spin[local[2] as usize]);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
    }
    assert!((k.site_law(&[0, 0, 0])[0] - 0.58).abs() < 1e-15);
}

#[test]
fn desk_dobrushin_constants() {
    let r = dobrushin_constants(&desk_kernel(), Some(&desk_walk()));
    assert!((r.eta0 - 0.3).abs() < 1e-15);
    assert!((r.walk_perturbation.unwrap() - 0.1).abs() < 1e-15);
    assert!((r.eta1.unwrap() - 0.51).abs() < 1e-12);
    let threshold = 0.9f64.powf(2.25);
    assert!((r.a9c_threshold.unwrap() - threshold).abs() < 1e-12);
    assert_eq!((r.a9a, r.a9b, r.a9c), (true, Some(true), Some(true)));
}

#[test]
fn desk_sensitivities() {
    let k = desk_kernel();
    assert!((kernel_tv_sensitivity(&k, &ORIGIN) - 0.16).abs() < 1e-15);
    assert!((kernel_tv_sensitivity(&k, &[1, 0, 0]) - 0.08).abs() < 1e-15);
    assert_eq!(kernel_tv_sensitivity(&k, &[2, 0, 0]), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_variation_sensitivity_is_bounded_by_d(seed in any::<u64>(), m in 2usize..=4) {
        let mut rng = StreamKey::from_seed(seed).chacha();
        let k = random_kernel(&mut rng, m, 0.9);
        for (q, d) in k.sensitivities() {
            prop_assert!(kernel_tv_sensitivity(&k, &q) / 2.0 <= d + 1e-12);
        }
        prop_assert!((k.eta0() - dobrushin_constants(&k, None).eta0).abs() < 1e-15);
    }

    #[test]
    fn env_step_preserves_alphabet_and_is_deterministic(seed in any::<u64>(), t in 0u64..1000) {
        let k = desk_kernel();
        let g = Geometry::new(1, 7).unwrap();
        let s = EnvState::new((0..7).map(|i| ((seed >> i) & 1) as u8).collect());
        let a = env_step(&s, &k, &g, StreamKey::from_seed(seed), t).unwrap();
        let b = env_step(&s, &k, &g, StreamKey::from_seed(seed), t).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.sites.iter().all(|v| *v < 2));
    }
}

#[test]
fn env_step_rejects_mismatched_state() {
    let k = desk_kernel();
    let g = Geometry::new(1, 5).unwrap();
    let s = EnvState::new(vec![0; 4]);
    assert!(matches!(env_step(&s, &k, &g, StreamKey::from_seed(1), 0), Err(Error::GeometryMismatch { .. })));
    let bad = EnvState::new(vec![0, 0, 2, 0, 0]);
    assert!(env_step(&bad, &k, &g, StreamKey::from_seed(1), 0).is_err());
}

#[test]
fn uncoupled_step_is_iid_base() {
    let k = dynwalk_core::EnvKernel::new(1, vec![0.25, 0.75], vec![(ORIGIN, 0.0)], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 9.0).unwrap();
    let g = Geometry::new(1, 64).unwrap();
    let dynamics = EnvDynamics::new(&k, &g).unwrap();
    let start = EnvState::uniform_symbol(64, 1);
    let mut zeros = 0usize;
    let steps = 400;
    let h = dynamics.history(start, steps, StreamKey::from_seed(5)).unwrap();
    for t in 1..=steps {
        zeros += h.state(t).iter().filter(|v| **v == 0).count();
    }
    let n = (steps * 64) as f64;
    let p = zeros as f64 / n;
    assert!((p - 0.25).abs() < 4.0 * (0.25 * 0.75 / n).sqrt(), "{p}");
}

#[test]
fn history_table_round_trip() {
    let k = desk_kernel();
    let g = Geometry::new(1, 5).unwrap();
    let dynamics = EnvDynamics::new(&k, &g).unwrap();
    let key = StreamKey::from_seed(9);
    let h = dynamics.history(dynamics.iid_base(key), 20, key).unwrap();
    assert_eq!(h.len(), 21);
    let mut buf = Vec::new();
    h.write_table(&mut buf).unwrap();
    let back = EnvHistory::read_table(buf.as_slice(), 5, key).unwrap();
    assert_eq!(back, h);
    let text = String::from_utf8(buf).unwrap();
    let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
    assert!(EnvHistory::read_table(truncated.as_bytes(), 5, key).is_err());
}

/// Burned-in samples reproduce the one-site marginal of the exact stationary law.
#[test]
fn equilibrium_marginal_matches_exact_law() {
    let k = desk_kernel();
    let g = Geometry::new(1, 6).unwrap();
    let env = build_env_operator(&k, &g, 64).unwrap();
    let mu_e = stationary_distribution(&env, POWER_TOL, POWER_MAX_ITER).unwrap();
    let exact_pp: f64 = (0..64).filter(|i| i & 0b11 == 0).map(|i| mu_e[i]).sum();
    let dynamics = EnvDynamics::new(&k, &g).unwrap();
    let burn = default_burn_in(k.eta0());
    let n = 20_000;
    let hits = (0..n)
        .filter(|&i| {
            let s = sample_equilibrium(&dynamics, burn, StreamKey::from_seed(3).derive(dynwalk_core::Label::Replica, i));
            s.sites[0] == 0 && s.sites[1] == 0
        })
        .count();
    let p = hits as f64 / n as f64;
    let se = (exact_pp * (1.0 - exact_pp) / n as f64).sqrt();
    assert!((p - exact_pp).abs() < 4.0 * se, "{p} vs {exact_pp}");
}

#[test]
fn nearest_neighbour_correlation_matches_exact_law() {
    let k = desk_kernel();
    let g = Geometry::new(1, 6).unwrap();
    let env = build_env_operator(&k, &g, 64).unwrap();
    let mu_e = stationary_distribution(&env, POWER_TOL, POWER_MAX_ITER).unwrap();
    let spin = |i: usize, s: usize| if (i >> s) & 1 == 0 { 1.0 } else { -1.0 };
    let m0: f64 = (0..64).map(|i| mu_e[i] * spin(i, 0)).sum();
    let exact: f64 = (0..64).map(|i| mu_e[i] * spin(i, 0) * spin(i, 1)).sum::<f64>() - m0 * m0;
    assert!(exact > 0.0);
    let dynamics = EnvDynamics::new(&k, &g).unwrap();
    let obs = LocalObservable::single_site(vec![1.0, -1.0]);
    let est = spatial_correlation(&dynamics, &obs, &obs, 1, 20_000, 30, StreamKey::from_seed(2)).unwrap();
    assert!((est.covariance - exact).abs() < 4.0 * est.covariance_se, "{est:?} vs {exact}");
    assert!(spatial_correlation(&dynamics, &obs, &obs, 3, 10, 5, StreamKey::from_seed(2)).is_err());
}
