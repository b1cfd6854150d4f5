//! Reference instances: the one-dimensional two-symbol desk model and random
//! valid kernel/walk pairs.

use rand::Rng;

use crate::geometry::{Point, ORIGIN};
use crate::lattice::{dobrushin_constants, EnvKernel};
use crate::walker::{Perturbation, WalkModel};

/// Symbol 0 is `+1`, symbol 1 is `−1`.
pub const SPIN: [f64; 2] = [1.0, -1.0];

const LEFT: Point = [-1, 0, 0];
const RIGHT: Point = [1, 0, 0];

/// Two-symbol kernel on `Z`: `ν` uniform, `ε₀ = 0.1`, `ε_{±1} = 0.05`, copy rows
/// `(0.9, 0.1)` and `(0.1, 0.9)`. Offsets are stored as `[0, +1, −1]`.
pub fn desk_kernel() -> EnvKernel {
    EnvKernel::new(
        1,
        vec![0.5, 0.5],
        vec![(ORIGIN, 0.1), (RIGHT, 0.05), (LEFT, 0.05)],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        9.0,
    )
    .expect("desk kernel is valid")
}

/// Nearest-neighbour walk `a = (0.3, 0.4, 0.3)`, `b_{±1} = ±θ⁰/2`, `δ = 0.1`.
pub fn desk_walk() -> WalkModel {
    desk_walk_with(vec![0.3, 0.4, 0.3], 0.1)
}

pub fn desk_walk_with(base: Vec<f64>, delta: f64) -> WalkModel {
    let centre = vec![
        SPIN.iter().map(|s| -s / 2.0).collect(),
        vec![0.0, 0.0],
        SPIN.iter().map(|s| s / 2.0).collect(),
    ];
    WalkModel::new(1, 2, 1, base, delta, Perturbation::Center(centre)).expect("desk walk is valid")
}

fn simplex<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Random one-dimensional nearest-neighbour kernel with `m` symbols and total
/// coupling weight at most `max_coupling`.
pub fn random_kernel<R: Rng>(rng: &mut R, m: usize, max_coupling: f64) -> EnvKernel {
    let base = simplex(rng, m, 0.1);
    let total = max_coupling * rng.random::<f64>();
    let split = simplex(rng, 3, 0.0);
    let rows = (0..m).map(|_| simplex(rng, m, 0.0)).collect();
    EnvKernel::new(
        1,
        base,
        vec![(ORIGIN, total * split[0]), (RIGHT, total * split[1]), (LEFT, total * split[2])],
        rows,
        9.0,
    )
    .expect("random kernel is valid")
}

/// Random nearest-neighbour walk reading the full window when `window` is set.
pub fn random_walk<R: Rng>(rng: &mut R, m: usize, window: bool) -> WalkModel {
    let base = simplex(rng, 3, 0.2);
    let keys = if window { m.pow(3) } else { m };
    let mut table = vec![vec![0.0; keys]; 3];
    for key in 0..keys {
        let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
        let mean = raw.iter().sum::<f64>() / 3.0;
        for z in 0..3 {
            table[z][key] = raw[z] - mean;
        }
    }
    // Largest δ keeping every π_z inside [0, 1], then a random fraction of it.
    let mut cap = f64::INFINITY;
    for (z, row) in table.iter().enumerate() {
        for &b in row {
            if b < 0.0 {
                cap = cap.min(base[z] / -b);
            } else if b > 0.0 {
                cap = cap.min((1.0 - base[z]) / b);
            }
        }
    }
    let delta = cap * rng.random::<f64>();
    let perturbation = if window { Perturbation::Window(table) } else { Perturbation::Center(table) };
    WalkModel::new(1, m, 1, base, delta, perturbation).expect("random walk is valid")
}

/// Random kernel/walk pair satisfying `η₁ < 1`.
pub fn random_valid_pair<R: Rng>(rng: &mut R) -> (EnvKernel, WalkModel) {
    loop {
        let m = rng.random_range(2..=3);
        let kernel = random_kernel(rng, m, 0.6);
        let window = rng.random::<bool>();
        let walk = random_walk(rng, m, window);
        let report = dobrushin_constants(&kernel, Some(&walk));
        if report.a9b == Some(true) {
            return (kernel, walk);
        }
    }
}
