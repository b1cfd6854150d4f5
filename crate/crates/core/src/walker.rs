//! Walk law `π_z = a_z + δ b_z(window)`, ellipticity and trajectory simulation.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Geometry, Point, ORIGIN};
use crate::lattice::{cumulative, EnvDynamics, EnvHistory, EnvStart, EnvState};
use crate::rng::{sample_cdf, Label, StreamKey};

const PROB_TOL: f64 = 1e-12;
/// Largest number of windows enumerated for a full perturbation table.
pub const WINDOW_CAP: usize = 1_000_000;

/// Environment dependence of the step law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    /// `b_z` reads only the current site: `center[z][symbol]`.
    Center(Vec<Vec<f64>>),
    /// `b_z` reads the whole window over `Λ`: `table[z][window index]`, where
    /// the window index is `Σ_j θ(x + λ_j) m^j` over the steps in ball order.
    Window(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkModel {
    dim: usize,
    symbols: usize,
    range: i64,
    steps: Vec<Point>,
    base: Vec<f64>,
    delta: f64,
    perturbation: Perturbation,
    /// Step laws per key, `keys × |Λ|`.
    probs: Vec<f64>,
    cdfs: Vec<f64>,
    bound: f64,
}

impl WalkModel {
    pub fn new(
        dim: usize,
        symbols: usize,
        range: i64,
        base: Vec<f64>,
        delta: f64,
        perturbation: Perturbation,
    ) -> Result<Self> {
        if dim == 0 || dim > geometry::MAX_DIM {
            return Err(Error::Walk(format!("unsupported dimension {dim}")));
        }
        if range < 1 {
            return Err(Error::Walk("range must be at least 1".into()));
        }
        if symbols < 2 {
            return Err(Error::Walk("alphabet needs at least two symbols".into()));
        }
        let steps = geometry::ball(dim, range);
        let k = steps.len();
        if base.len() != k {
            return Err(Error::Walk(format!("expected {k} base probabilities, got {}", base.len())));
        }
        if base.iter().any(|p| !p.is_finite() || *p < 0.0) || (base.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(Error::Walk("base probabilities must be nonnegative and sum to 1".into()));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Walk("delta must be nonnegative".into()));
        }
        let keys = match &perturbation {
            Perturbation::Center(t) => {
                check_table(t, k, symbols)?;
                symbols
            }
            Perturbation::Window(t) => {
                let windows = (symbols as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
                if windows > WINDOW_CAP as u128 {
                    return Err(Error::Walk(format!("{windows} windows exceed the enumeration cap")));
                }
                check_table(t, k, windows as usize)?;
                windows as usize
            }
        };
        let table = match &perturbation {
            Perturbation::Center(t) | Perturbation::Window(t) => t,
        };
        let mut probs = Vec::with_capacity(keys * k);
        let mut cdfs = Vec::with_capacity(keys * k);
        for key in 0..keys {
            let p: Vec<f64> = (0..k).map(|z| base[z] + delta * table[z][key]).collect();
            if let Some(z) = p.iter().position(|&x| !(-PROB_TOL..=1.0 + PROB_TOL).contains(&x)) {
                return Err(Error::Walk(format!("π for step {:?} leaves [0,1] at window {key}", steps[z])));
            }
            let p: Vec<f64> = p.into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
            cdfs.extend(cumulative(&p));
            probs.extend(p);
        }
        let bound = delta * table.iter().map(|row| row.iter().fold(0.0f64, |m, b| m.max(b.abs()))).sum::<f64>();
        Ok(WalkModel { dim, symbols, range, steps, base, delta, perturbation, probs, cdfs, bound })
    }

    /// Environment-independent walk with step law `base`.
    pub fn unperturbed(dim: usize, symbols: usize, range: i64, base: Vec<f64>) -> Result<Self> {
        let k = geometry::ball(dim, range).len();
        WalkModel::new(dim, symbols, range, base, 0.0, Perturbation::Center(vec![vec![0.0; symbols]; k]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn range(&self) -> i64 {
        self.range
    }

    /// `Λ` in ball order; step probability vectors use this order.
    pub fn steps(&self) -> &[Point] {
        &self.steps
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn perturbation(&self) -> &Perturbation {
        &self.perturbation
    }

    /// `D = δ Σ_z max_σ |b_z(σ)|`.
    pub fn perturbation_bound(&self) -> f64 {
        self.bound
    }

    /// Radius of the environment read by one step.
    pub fn window_radius(&self) -> i64 {
        match self.perturbation {
            Perturbation::Center(_) => 0,
            Perturbation::Window(_) => self.range,
        }
    }

    pub fn num_keys(&self) -> usize {
        self.probs.len() / self.steps.len()
    }

    /// Table key of the environment read at `x` (reduced modulo the torus).
    #[inline]
    pub fn key_at(&self, state: &[u8], geom: &Geometry, x: &Point) -> usize {
        match self.perturbation {
            Perturbation::Center(_) => state[geom.site_index(x)] as usize,
            Perturbation::Window(_) => self.steps.iter().rev().fold(0usize, |acc, l| {
                acc * self.symbols + state[geom.site_index(&geometry::add(x, l))] as usize
            }),
        }
    }

    /// Key of a window given as symbols at `steps()` in order.
    pub fn key_of_window(&self, window: &[u8]) -> usize {
        match self.perturbation {
            Perturbation::Center(_) => {
                let centre = self.steps.iter().position(|s| *s == ORIGIN).unwrap();
                window[centre] as usize
            }
            Perturbation::Window(_) => {
                window.iter().rev().fold(0usize, |acc, &s| acc * self.symbols + s as usize)
            }
        }
    }

    #[inline]
    pub fn probs_for_key(&self, key: usize) -> &[f64] {
        let k = self.steps.len();
        &self.probs[key * k..(key + 1) * k]
    }

    /// Index into `steps()` of the increment drawn with uniform `u`.
    #[inline]
    pub fn draw(&self, key: usize, u: f64) -> usize {
        let k = self.steps.len();
        sample_cdf(&self.cdfs[key * k..(key + 1) * k], u)
    }

    /// Local drift `Σ_z z π_z` for each key.
    pub fn drift_by_key(&self) -> Vec<[f64; geometry::MAX_DIM]> {
        (0..self.num_keys())
            .map(|key| {
                let mut g = [0.0; geometry::MAX_DIM];
                for (z, p) in self.steps.iter().zip(self.probs_for_key(key)) {
                    for (gi, zi) in g.iter_mut().zip(z) {
                        *gi += *zi as f64 * p;
                    }
                }
                g
            })
            .collect()
    }
}

fn check_table(table: &[Vec<f64>], steps: usize, keys: usize) -> Result<()> {
    if table.len() != steps || table.iter().any(|r| r.len() != keys) {
        return Err(Error::Walk(format!("perturbation table must be {steps} × {keys}")));
    }
    for key in 0..keys {
        let s: f64 = table.iter().map(|r| r[key]).sum();
        if !s.is_finite() || s.abs() > PROB_TOL {
            return Err(Error::Walk(format!("perturbations sum to {s} at window {key}, not 0")));
        }
    }
    Ok(())
}

/// Step law for a window listing the symbols at `model.steps()`.
pub fn step_probabilities(window: &[u8], model: &WalkModel) -> Result<Vec<f64>> {
    if window.len() != model.steps().len() {
        return Err(Error::InvalidArgument(format!(
            "window has {} entries, expected {}",
            window.len(),
            model.steps().len()
        )));
    }
    if window.iter().any(|&s| s as usize >= model.symbols()) {
        return Err(Error::InvalidArgument("window symbol outside the alphabet".into()));
    }
    Ok(model.probs_for_key(model.key_of_window(window)).to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub c: f64,
    pub min_probabilities: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `c · min{γ_z : γ_z > 0}`.
    pub gamma_floor: f64,
    pub span: bool,
    pub passed: bool,
}

pub fn check_ellipticity(model: &WalkModel) -> EllipticityReport {
    let k = model.steps().len();
    let mins: Vec<f64> = (0..k)
        .map(|z| (0..model.num_keys()).map(|key| model.probs_for_key(key)[z]).fold(f64::INFINITY, f64::min))
        .collect();
    let c: f64 = mins.iter().sum();
    let gamma: Vec<f64> = if c > 0.0 { mins.iter().map(|m| m / c).collect() } else { vec![0.0; k] };
    let support: Vec<&Point> = model.steps().iter().zip(&gamma).filter(|(_, g)| **g > 0.0).map(|(z, _)| z).collect();
    let d = model.dim();
    let span = if support.len() >= d + 1 {
        let m = DMatrix::from_fn(support.len(), d + 1, |i, j| if j == 0 { 1.0 } else { support[i][j - 1] as f64 });
        m.rank(1e-9) == d + 1
    } else {
        false
    };
    let gamma_floor = c * gamma.iter().filter(|g| **g > 0.0).fold(f64::INFINITY, |a, &b| a.min(b));
    EllipticityReport {
        c,
        min_probabilities: mins,
        gamma,
        gamma_floor: if gamma_floor.is_finite() { gamma_floor } else { 0.0 },
        span,
        passed: c > 0.0 && span,
    }
}

/// One increment from the environment read at `x`, using `key.uniform(t)`.
pub fn walk_step(x: &Point, env: &EnvState, model: &WalkModel, geom: &Geometry, key: StreamKey, t: u64) -> Point {
    let z = model.draw(model.key_at(&env.sites, geom, x), key.uniform(t));
    geometry::add(x, &model.steps()[z])
}

/// Environment advanced in place along a key's time stream.
#[derive(Debug, Clone)]
pub struct EnvDriver<'a> {
    dynamics: &'a EnvDynamics,
    cur: Vec<u8>,
    next: Vec<u8>,
    key: StreamKey,
    t: u64,
}

impl<'a> EnvDriver<'a> {
    pub fn new(dynamics: &'a EnvDynamics, start: EnvState, key: StreamKey) -> Self {
        let n = start.sites.len();
        EnvDriver { dynamics, cur: start.sites, next: vec![0; n], key, t: 0 }
    }

    /// Initial state from `start` and the environment key.
    pub fn from_start(dynamics: &'a EnvDynamics, start: &EnvStart, key: StreamKey) -> Result<Self> {
        Ok(EnvDriver::new(dynamics, start.initial(dynamics, key)?, key))
    }

    #[inline]
    pub fn state(&self) -> &[u8] {
        &self.cur
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn advance(&mut self) {
        self.dynamics.step_into(&self.cur, &mut self.next, self.key.derive(Label::Time, self.t));
        std::mem::swap(&mut self.cur, &mut self.next);
        self.t += 1;
    }
}

/// What `simulate` keeps besides positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordOptions {
    pub environment: bool,
    /// Record `ω_t` restricted to the ball of this radius around `X_t`.
    pub window_radius: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    /// `X_0, …, X_N`.
    pub positions: Vec<Point>,
    pub history: Option<EnvHistory>,
    /// Symbols of `ω_t` at `geometry::ball(dim, r)`, for `t = 0..=N`.
    pub windows: Option<Vec<Vec<u8>>>,
    pub env_key: StreamKey,
    pub walk_key: StreamKey,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.positions.len() <= 1
    }

    pub fn increments(&self) -> Vec<Point> {
        self.positions.windows(2).map(|w| geometry::sub(&w[1], &w[0])).collect()
    }

    pub fn endpoint(&self) -> Point {
        *self.positions.last().unwrap()
    }

    /// CSV with columns `t`, `x0..`, `dx0..` (the increment into `X_t`; zero at `t = 0`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim;
        let head: Vec<String> = (0..d).map(|i| format!("x{i}")).chain((0..d).map(|i| format!("dx{i}"))).collect();
        writeln!(w, "t,{}", head.join(","))?;
        for (t, x) in self.positions.iter().enumerate() {
            let dx = if t == 0 { ORIGIN } else { geometry::sub(x, &self.positions[t - 1]) };
            let cols: Vec<String> = x[..d].iter().chain(&dx[..d]).map(|c| c.to_string()).collect();
            writeln!(w, "{t},{}", cols.join(","))?;
        }
        Ok(())
    }
}

fn check_compatible(dynamics: &EnvDynamics, model: &WalkModel) -> Result<()> {
    let geom = dynamics.geometry();
    if model.dim() != geom.dim() {
        return Err(Error::Walk(format!(
            "walk dimension {} does not match geometry dimension {}",
            model.dim(),
            geom.dim()
        )));
    }
    if model.symbols() != dynamics.kernel().symbols() {
        return Err(Error::Walk("walk and kernel alphabets differ".into()));
    }
    geom.check_radius(model.window_radius())
}

/// Environment dynamics, walk and initial law bundled for experiments.
#[derive(Debug, Clone)]
pub struct Setting {
    pub dynamics: EnvDynamics,
    pub model: WalkModel,
    pub start: EnvStart,
}

impl Setting {
    pub fn new(kernel: &crate::lattice::EnvKernel, model: &WalkModel, geom: &Geometry, start: EnvStart) -> Result<Self> {
        let dynamics = EnvDynamics::new(kernel, geom)?;
        check_compatible(&dynamics, model)?;
        Ok(Setting { dynamics, model: model.clone(), start })
    }

    pub fn geometry(&self) -> &Geometry {
        self.dynamics.geometry()
    }

    /// Environment and walk keys of replica `r` under a master key.
    pub fn replica_keys(key: StreamKey, r: u64) -> (StreamKey, StreamKey, StreamKey) {
        let base = key.derive(Label::Replica, r);
        (base.derive(Label::Env, 0), base.derive(Label::WalkX, 0), base.derive(Label::WalkY, 0))
    }

    pub fn driver(&self, env_key: StreamKey) -> Result<EnvDriver<'_>> {
        EnvDriver::from_start(&self.dynamics, &self.start, env_key)
    }

    /// Index into `steps()` of the increment at time `t` for a walker at `x`.
    #[inline]
    pub fn draw(&self, state: &[u8], x: &Point, walk_key: StreamKey, t: u64) -> usize {
        self.model.draw(self.model.key_at(state, self.dynamics.geometry(), x), walk_key.uniform(t))
    }
}

pub(crate) fn window_symbols(state: &[u8], geom: &Geometry, x: &Point, ball: &[Point]) -> Vec<u8> {
    ball.iter().map(|q| state[geom.site_index(&geometry::add(x, q))]).collect()
}

/// Runs the joint process for `n` steps: at each time the increment is read
/// from `θ_t` at `X_t`, then the environment is advanced. The walk uses
/// counter `t` of `walk_key`, so a fixed `env_key` replays the same history
/// under any walk key.
pub fn simulate(
    dynamics: &EnvDynamics,
    model: &WalkModel,
    start: &EnvStart,
    n: usize,
    env_key: StreamKey,
    walk_key: StreamKey,
    record: RecordOptions,
) -> Result<Trajectory> {
    check_compatible(dynamics, model)?;
    let geom = *dynamics.geometry();
    let ball = match record.window_radius {
        Some(r) => {
            geom.check_radius(r)?;
            Some(geometry::ball(geom.dim(), r))
        }
        None => None,
    };
    let mut env = EnvDriver::from_start(dynamics, start, env_key)?;
    let mut history = record.environment.then(|| EnvHistory::new(EnvState::new(env.state().to_vec()), env_key));
    let mut windows = ball.as_ref().map(|_| Vec::with_capacity(n + 1));
    let mut positions = Vec::with_capacity(n + 1);
    let mut x = ORIGIN;
    positions.push(x);
    if let (Some(ws), Some(b)) = (windows.as_mut(), ball.as_ref()) {
        ws.push(window_symbols(env.state(), &geom, &x, b));
    }
    for t in 0..n {
        let z = model.draw(model.key_at(env.state(), &geom, &x), walk_key.uniform(t as u64));
        x = geometry::add(&x, &model.steps()[z]);
        positions.push(x);
        env.advance();
        if let Some(h) = history.as_mut() {
            h.push(env.state());
        }
        if let (Some(ws), Some(b)) = (windows.as_mut(), ball.as_ref()) {
            ws.push(window_symbols(env.state(), &geom, &x, b));
        }
    }
    Ok(Trajectory { dim: geom.dim(), positions, history, windows, env_key, walk_key })
}

/// Positions of a walk driven by a stored history, `n ≤ history.len() − 1`.
pub fn walk_on_history(
    history: &EnvHistory,
    model: &WalkModel,
    geom: &Geometry,
    n: usize,
    walk_key: StreamKey,
) -> Result<Vec<Point>> {
    if n >= history.len() {
        return Err(Error::InvalidArgument(format!("horizon {n} exceeds history of {} states", history.len())));
    }
    if history.n_sites() != geom.num_sites() {
        return Err(Error::GeometryMismatch { expected: geom.num_sites(), got: history.n_sites() });
    }
    let mut x = ORIGIN;
    let mut out = Vec::with_capacity(n + 1);
    out.push(x);
    for t in 0..n {
        let z = model.draw(model.key_at(history.state(t), geom, &x), walk_key.uniform(t as u64));
        x = geometry::add(&x, &model.steps()[z]);
        out.push(x);
    }
    Ok(out)
}

/// Endpoint `X_n` of a walk on a stored history.
pub fn endpoint_on_history(history: &EnvHistory, model: &WalkModel, geom: &Geometry, n: usize, walk_key: StreamKey) -> Point {
    let mut x = ORIGIN;
    for t in 0..n {
        let z = model.draw(model.key_at(history.state(t), geom, &x), walk_key.uniform(t as u64));
        x = geometry::add(&x, &model.steps()[z]);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn desk_step_probabilities() {
        let w = fixtures::desk_walk();
        let p = step_probabilities(&[0, 0, 0], &w).unwrap();
        for (a, b) in p.iter().zip([0.25, 0.40, 0.35]) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = step_probabilities(&[1, 1, 1], &w).unwrap();
        for (a, b) in p.iter().zip([0.35, 0.40, 0.25]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(step_probabilities(&[0, 0], &w).is_err());
    }

    #[test]
    fn unperturbed_law_is_base() {
        let w = WalkModel::unperturbed(1, 2, 1, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(step_probabilities(&[1, 0, 1], &w).unwrap(), vec![0.2, 0.5, 0.3]);
        assert_eq!(w.perturbation_bound(), 0.0);
    }

    #[test]
    fn construction_rejects_bad_models() {
        assert!(WalkModel::unperturbed(1, 2, 1, vec![0.2, 0.5, 0.2]).is_err());
        let bad_sum = Perturbation::Center(vec![vec![0.1, 0.1], vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(WalkModel::new(1, 2, 1, vec![0.3, 0.4, 0.3], 0.1, bad_sum).is_err());
        let too_big = Perturbation::Center(vec![vec![-1.0, 1.0], vec![0.0, 0.0], vec![1.0, -1.0]]);
        assert!(WalkModel::new(1, 2, 1, vec![0.3, 0.4, 0.3], 0.5, too_big).is_err());
    }

    #[test]
    fn ellipticity_desk_and_span() {
        let r = check_ellipticity(&fixtures::desk_walk());
        assert!((r.c - 0.9).abs() < 1e-12);
        for (g, e) in r.gamma.iter().zip([0.25 / 0.9, 0.4 / 0.9, 0.25 / 0.9]) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(r.span && r.passed);
        let ends = WalkModel::unperturbed(1, 2, 1, vec![0.5, 0.0, 0.5]).unwrap();
        assert!(check_ellipticity(&ends).span);
        let lazy = WalkModel::unperturbed(1, 2, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let r = check_ellipticity(&lazy);
        assert!(!r.span && !r.passed);
        // Collinear support in two dimensions.
        let mut base = vec![0.0; 9];
        base[1] = 0.5;
        base[7] = 0.5;
        let line = WalkModel::unperturbed(2, 2, 1, base).unwrap();
        assert!(!check_ellipticity(&line).span);
    }

    #[test]
    fn window_perturbation_reads_neighbours() {
        // b_{+1} = (θ^{+1} − θ^{−1})/4 in ±1 encoding; symbol 0 is +1.
        let spin = |s: usize| if s == 0 { 1.0 } else { -1.0 };
        let mut table = vec![vec![0.0; 8]; 3];
        for key in 0..8 {
            let (left, right) = (spin(key % 2), spin(key / 4));
            table[2][key] = (right - left) / 4.0;
            table[0][key] = -(right - left) / 4.0;
        }
        let w = WalkModel::new(1, 2, 1, vec![0.3, 0.4, 0.3], 0.2, Perturbation::Window(table)).unwrap();
        let p = step_probabilities(&[1, 0, 0], &w).unwrap();
        assert!((p[2] - 0.4).abs() < 1e-12 && (p[0] - 0.2).abs() < 1e-12);
        assert!((w.perturbation_bound() - 0.2).abs() < 1e-12);
        assert_eq!(w.window_radius(), 1);
        let g = Geometry::new(1, 5).unwrap();
        let state = [0u8, 0, 0, 0, 1];
        assert_eq!(w.key_at(&state, &g, &[0, 0, 0]), w.key_of_window(&[1, 0, 0]));
    }

    #[test]
    fn frozen_environment_frequencies() {
        let w = fixtures::desk_walk();
        let g = Geometry::new(1, 5).unwrap();
        let env = EnvState::uniform_symbol(5, 0);
        let n = 100_000;
        let key = StreamKey::from_seed(3);
        let mut counts = [0usize; 3];
        for t in 0..n {
            let x = walk_step(&ORIGIN, &env, &w, &g, key, t);
            counts[(x[0] + 1) as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.25, 0.40, 0.35]) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * se, "{counts:?}");
        }
        assert_eq!(walk_step(&ORIGIN, &env, &w, &g, key, 17), walk_step(&ORIGIN, &env, &w, &g, key, 17));
    }

    #[test]
    fn simulate_records_and_replays() {
        let g = Geometry::new(1, 16).unwrap();
        let dynamics = EnvDynamics::new(&fixtures::desk_kernel(), &g).unwrap();
        let w = fixtures::desk_walk();
        let start = EnvStart::Equilibrium { burn_in: 10 };
        let env_key = StreamKey::from_seed(1);
        let rec = RecordOptions { environment: true, window_radius: Some(2) };
        let a = simulate(&dynamics, &w, &start, 200, env_key, StreamKey::from_seed(2), rec).unwrap();
        let b = simulate(&dynamics, &w, &start, 200, env_key, StreamKey::from_seed(3), rec).unwrap();
        assert_eq!(a.history, b.history);
        assert_ne!(a.positions, b.positions);
        assert!(a.increments().iter().all(|d| geometry::sup_norm(d, 1) <= 1));
        let replay = walk_on_history(a.history.as_ref().unwrap(), &w, &g, 200, StreamKey::from_seed(2)).unwrap();
        assert_eq!(replay, a.positions);
        assert_eq!(a.windows.as_ref().unwrap().len(), 201);
        let bad = RecordOptions { environment: false, window_radius: Some(8) };
        assert!(simulate(&dynamics, &w, &start, 5, env_key, env_key, bad).is_err());
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("t,x0,dx0\n0,0,0\n"));
    }

    #[test]
    fn unperturbed_symmetric_walk_has_no_drift() {
        let g = Geometry::new(1, 8).unwrap();
        let dynamics = EnvDynamics::new(&fixtures::desk_kernel(), &g).unwrap();
        let w = WalkModel::unperturbed(1, 2, 1, vec![0.3, 0.4, 0.3]).unwrap();
        let n = 100_000;
        let t = simulate(
            &dynamics,
            &w,
            &EnvStart::Equilibrium { burn_in: 1 },
            n,
            StreamKey::from_seed(4),
            StreamKey::from_seed(5),
            RecordOptions::default(),
        )
        .unwrap();
        let se = (0.6f64 / n as f64).sqrt();
        assert!((t.endpoint()[0] as f64 / n as f64).abs() < 3.0 * se);
    }
}
