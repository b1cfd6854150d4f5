use dynwalk_core::fixtures::{desk_kernel, desk_walk, random_walk};
use dynwalk_core::lattice::EnvDynamics;
use dynwalk_core::walker::{endpoint_on_history, walk_on_history, RecordOptions};
use dynwalk_core::{check_ellipticity, simulate, step_probabilities, EnvStart, Geometry, Perturbation, StreamKey, WalkModel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_laws_are_normalised_and_elliptic(seed in any::<u64>(), m in 2usize..=3, window in any::<bool>()) {
        let mut rng = StreamKey::from_seed(seed).chacha();
        let w = random_walk(&mut rng, m, window);
        let e = check_ellipticity(&w);
        for key in 0..w.num_keys() {
            let p = w.probs_for_key(key);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (z, pz) in p.iter().enumerate() {
                prop_assert!(*pz >= e.c * e.gamma[z] - 1e-12);
            }
        }
        let window_syms: Vec<u8> = (0..3).map(|i| ((seed >> i) % m as u64) as u8).collect();
        let p = step_probabilities(&window_syms, &w).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn desk_ellipticity() {
    let e = check_ellipticity(&desk_walk());
    assert!((e.c - 0.9).abs() < 1e-12);
    assert!(e.passed && e.span);
    // Support on a single point spans no affine line.
    let lazy = WalkModel::unperturbed(1, 2, 1, vec![0.0, 1.0, 0.0]).unwrap();
    assert!(!check_ellipticity(&lazy).passed);
}

#[test]
fn invalid_walks_are_rejected() {
    assert!(WalkModel::unperturbed(1, 2, 1, vec![0.5, 0.5]).is_err());
    assert!(WalkModel::unperturbed(1, 2, 1, vec![0.5, 0.6, -0.1]).is_err());
    let t = Perturbation::Center(vec![vec![1.0, -1.0], vec![0.0, 0.0], vec![-1.0, 1.0]]);
    assert!(WalkModel::new(1, 2, 1, vec![0.3, 0.4, 0.3], 0.5, t).is_err());
    let unbalanced = Perturbation::Center(vec![vec![0.1, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
    assert!(WalkModel::new(1, 2, 1, vec![0.3, 0.4, 0.3], 0.1, unbalanced).is_err());
}

#[test]
fn recorded_history_replays_the_walk() {
    let k = desk_kernel();
    let g = Geometry::new(1, 9).unwrap();
    let dynamics = EnvDynamics::new(&k, &g).unwrap();
    let w = desk_walk();
    let start = EnvStart::Equilibrium { burn_in: 10 };
    let (ek, wk) = (StreamKey::from_seed(1), StreamKey::from_seed(2));
    let tr = simulate(&dynamics, &w, &start, 300, ek, wk, RecordOptions { environment: true, window_radius: Some(1) }).unwrap();
    let again = simulate(&dynamics, &w, &start, 300, ek, wk, RecordOptions::default()).unwrap();
    assert_eq!(tr.positions, again.positions);
    let h = tr.history.as_ref().unwrap();
    assert_eq!(h.len(), 301);
    assert_eq!(walk_on_history(h, &w, &g, 300, wk).unwrap(), tr.positions);
    assert_eq!(endpoint_on_history(h, &w, &g, 300, wk), tr.endpoint());
    assert!(walk_on_history(h, &w, &g, 301, wk).is_err());
    assert_eq!(tr.windows.as_ref().unwrap().len(), 301);
    let mut csv = Vec::new();
    tr.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("t,x0,dx0\n"));
}

#[test]
fn unperturbed_walk_has_binomial_drift() {
    let a = vec![0.1, 0.3, 0.6];
    let w = WalkModel::unperturbed(1, 2, 1, a.clone()).unwrap();
    let k = desk_kernel();
    let g = Geometry::new(1, 5).unwrap();
    let dynamics = EnvDynamics::new(&k, &g).unwrap();
    let n = 200;
    let reps = 2000;
    let ends: Vec<f64> = (0..reps)
        .map(|r| {
            let tr = simulate(&dynamics, &w, &EnvStart::Equilibrium { burn_in: 1 }, n, StreamKey::from_seed(r), StreamKey::from_seed(r + 1_000_000), RecordOptions::default()).unwrap();
            tr.endpoint()[0] as f64
        })
        .collect();
    let v = a[2] - a[0];
    let var = a[0] + a[2] - v * v;
    let mean = ends.iter().sum::<f64>() / reps as f64;
    let se = (var * n as f64 / reps as f64).sqrt();
    assert!((mean - v * n as f64).abs() < 4.0 * se, "{mean}");
}
