//! Exact position law of the walk over walk randomness, given one history.

use crate::error::{Error, Result};
use crate::geometry::{self, Geometry, Point, ORIGIN};
use crate::lattice::EnvHistory;
use crate::walker::WalkModel;

/// Largest number of stored probabilities (all times together).
pub const DEFAULT_QUENCHED_CAP: usize = 1 << 26;

/// Dense box of radius `range · n` around the origin with incremental
/// forward steps.
struct PositionBox {
    dim: usize,
    radius: i64,
    side: usize,
    points: Vec<Point>,
    /// Flat index shift of each step in `model.steps()`.
    shifts: Vec<isize>,
}

impl PositionBox {
    fn new(model: &WalkModel, n: usize, cap: usize) -> Result<Self> {
        let dim = model.dim();
        let radius = model.range() * n as i64;
        let side = (2 * radius + 1) as usize;
        let size = (side as u128).pow(dim as u32);
        if size > cap as u128 {
            return Err(Error::StateCap { states: size, cap });
        }
        let points = geometry::ball(dim, radius);
        let stride = |axis: usize| side.pow((dim - 1 - axis) as u32) as isize;
        let shifts = model.steps().iter().map(|z| (0..dim).map(|a| z[a] as isize * stride(a)).sum()).collect();
        Ok(PositionBox { dim, radius, side, points, shifts })
    }

    fn origin(&self) -> usize {
        self.index(&ORIGIN)
    }

    fn index(&self, p: &Point) -> usize {
        (0..self.dim).fold(0usize, |acc, a| acc * self.side + (p[a] + self.radius) as usize)
    }
}

/// Forward recursion `p_{t+1}(x + z) = Σ p_t(x) π_z(θ_t around x)`; calls
/// `visit(t, p_t, points)` for `t = 0..=n`.
fn evolve<F>(history: &EnvHistory, model: &WalkModel, geom: &Geometry, n: usize, cap: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &[f64], &[Point]),
{
    if n >= history.len() {
        return Err(Error::InvalidArgument(format!("horizon {n} exceeds history of {} states", history.len())));
    }
    if history.n_sites() != geom.num_sites() {
        return Err(Error::GeometryMismatch { expected: geom.num_sites(), got: history.n_sites() });
    }
    let b = PositionBox::new(model, n, cap)?;
    let mut p = vec![0.0; b.points.len()];
    let mut next = vec![0.0; b.points.len()];
    p[b.origin()] = 1.0;
    visit(0, &p, &b.points);
    for t in 0..n {
        next.iter_mut().for_each(|v| *v = 0.0);
        let state = history.state(t);
        for (i, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let probs = model.probs_for_key(model.key_at(state, geom, &b.points[i]));
            for (shift, pz) in b.shifts.iter().zip(probs) {
                next[(i as isize + shift) as usize] += mass * pz;
            }
        }
        std::mem::swap(&mut p, &mut next);
        visit(t + 1, &p, &b.points);
    }
    Ok(())
}

/// Position laws `p_0, …, p_n` on the box `[−range·n, range·n]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuenchedDistribution {
    pub dim: usize,
    pub radius: i64,
    pub points: Vec<Point>,
    pub laws: Vec<Vec<f64>>,
}

impl QuenchedDistribution {
    pub fn horizon(&self) -> usize {
        self.laws.len() - 1
    }

    pub fn prob(&self, t: usize, x: &Point) -> f64 {
        if geometry::sup_norm(x, self.dim) > self.radius {
            return 0.0;
        }
        let side = (2 * self.radius + 1) as usize;
        let i = (0..self.dim).fold(0usize, |acc, a| acc * side + (x[a] + self.radius) as usize);
        self.laws[t][i]
    }

    pub fn mass(&self, t: usize) -> f64 {
        self.laws[t].iter().sum()
    }

    /// Largest sup-norm with positive probability at time `t`.
    pub fn support_radius(&self, t: usize) -> i64 {
        self.points
            .iter()
            .zip(&self.laws[t])
            .filter(|(_, p)| **p > 0.0)
            .map(|(x, _)| geometry::sup_norm(x, self.dim))
            .max()
            .unwrap_or(0)
    }

    /// `E[X_t | history]`.
    pub fn mean(&self, t: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|a| self.points.iter().zip(&self.laws[t]).map(|(x, p)| x[a] as f64 * p).sum())
            .collect()
    }
}

pub fn quenched_walk_distribution(history: &EnvHistory, model: &WalkModel, geom: &Geometry, n: usize) -> Result<QuenchedDistribution> {
    quenched_walk_distribution_capped(history, model, geom, n, DEFAULT_QUENCHED_CAP)
}

pub fn quenched_walk_distribution_capped(
    history: &EnvHistory,
    model: &WalkModel,
    geom: &Geometry,
    n: usize,
    cap: usize,
) -> Result<QuenchedDistribution> {
    let side = (2 * model.range() * n as i64 + 1) as u128;
    let stored = side.pow(model.dim() as u32) * (n as u128 + 1);
    if stored > cap as u128 {
        return Err(Error::StateCap { states: stored, cap });
    }
    let mut laws = Vec::with_capacity(n + 1);
    let mut pts = Vec::new();
    evolve(history, model, geom, n, cap, |t, p, points| {
        if t == 0 {
            pts = points.to_vec();
        }
        laws.push(p.to_vec());
    })?;
    Ok(QuenchedDistribution { dim: model.dim(), radius: model.range() * n as i64, points: pts, laws })
}

/// `⟨w, E[Δ_{k+1} | history] − v⟩` for `k = 0..n`, i.e. the mean-field terms
/// `⟨w, Π^k G⟩` realised on one history, without storing the laws.
pub fn mean_field_terms(history: &EnvHistory, model: &WalkModel, geom: &Geometry, n: usize, v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let drift = model.drift_by_key();
    let dim = model.dim();
    let centred: Vec<f64> = drift
        .iter()
        .map(|g| (0..dim).map(|a| w[a] * (g[a] - v[a])).sum())
        .collect();
    let mut terms = Vec::with_capacity(n);
    if n == 0 {
        return Ok(terms);
    }
    evolve(history, model, geom, n - 1, DEFAULT_QUENCHED_CAP, |t, p, points| {
        let state = history.state(t);
        let mut acc = 0.0;
        for (x, mass) in points.iter().zip(p) {
            if *mass != 0.0 {
                acc += mass * centred[model.key_at(state, geom, x)];
            }
        }
        terms.push(acc);
    })?;
    Ok(terms)
}
