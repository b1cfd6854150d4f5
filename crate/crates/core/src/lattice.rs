//! Weakly coupled environment on a torus.
//!
//! Each site is resampled synchronously from the mixture
//! `(1 - Σ ε_r) ν + Σ_{r ∈ S} ε_r h(θ^{q+r}, ·)` given the current
//! configuration. Sensitivity constants are `d_0 = ε_0` and `d_r = 2 ε_r`
//! for `r ≠ 0`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Geometry, Point, ORIGIN};
use crate::rng::{sample_cdf, Label, StreamKey};
use crate::stats;
use crate::walker::WalkModel;

const PROB_TOL: f64 = 1e-12;
/// Local-configuration tables larger than this are evaluated on the fly.
const TABLE_CAP: usize = 1 << 20;

pub(crate) fn check_probability_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Kernel(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::Kernel(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Coupled single-site update law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvKernel {
    dim: usize,
    base: Vec<f64>,
    offsets: Vec<Point>,
    weights: Vec<f64>,
    rows: Vec<Vec<f64>>,
    decay_exponent: f64,
}

impl EnvKernel {
    /// `influence` lists `(offset, ε)` pairs and must contain the origin.
    pub fn new(
        dim: usize,
        base: Vec<f64>,
        influence: Vec<(Point, f64)>,
        rows: Vec<Vec<f64>>,
        decay_exponent: f64,
    ) -> Result<Self> {
        let m = base.len();
        if m < 2 {
            return Err(Error::Kernel("alphabet needs at least two symbols".into()));
        }
        if m > 256 {
            return Err(Error::Kernel("alphabet larger than 256 symbols".into()));
        }
        check_probability_vector(&base, "base law")?;
        if base.iter().any(|&p| p <= 0.0) {
            return Err(Error::Kernel("base law must be strictly positive".into()));
        }
        if rows.len() != m {
            return Err(Error::Kernel(format!("expected {m} influence rows, got {}", rows.len())));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Kernel(format!("influence row {i} has wrong length")));
            }
            check_probability_vector(row, &format!("influence row {i}"))?;
        }
        let mut offsets = Vec::with_capacity(influence.len());
        let mut weights = Vec::with_capacity(influence.len());
        for (q, eps) in influence {
            if q[dim..].iter().any(|&c| c != 0) {
                return Err(Error::Kernel(format!("offset {q:?} has coordinates beyond dimension {dim}")));
            }
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(Error::Kernel(format!("weight for offset {q:?} must be nonnegative")));
            }
            if offsets.contains(&q) {
                return Err(Error::Kernel(format!("duplicate offset {q:?}")));
            }
            offsets.push(q);
            weights.push(eps);
        }
        if !offsets.contains(&ORIGIN) {
            return Err(Error::Kernel("influence set must contain the origin".into()));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + PROB_TOL {
            return Err(Error::Kernel(format!("influence weights sum to {total} > 1")));
        }
        if dim == 0 || dim > geometry::MAX_DIM {
            return Err(Error::Kernel(format!("unsupported dimension {dim}")));
        }
        Ok(EnvKernel { dim, base, offsets, weights, rows, decay_exponent })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn symbols(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn decay_exponent(&self) -> f64 {
        self.decay_exponent
    }

    pub fn radius(&self) -> i64 {
        self.offsets.iter().map(|q| geometry::sup_norm(q, self.dim)).max().unwrap_or(0)
    }

    /// Weight of the base law in the mixture.
    pub fn base_mass(&self) -> f64 {
        (1.0 - self.weights.iter().sum::<f64>()).max(0.0)
    }

    /// Update law of one site given the symbols at `offsets()` (same order).
    pub fn site_law(&self, local: &[u8]) -> Vec<f64> {
        let mut p: Vec<f64> = self.base.iter().map(|b| b * self.base_mass()).collect();
        for (j, &eps) in self.weights.iter().enumerate() {
            if eps == 0.0 {
                continue;
            }
            for (py, hy) in p.iter_mut().zip(&self.rows[local[j] as usize]) {
                *py += eps * hy;
            }
        }
        p
    }

    /// `d_q` for each offset: `ε_0` at the origin, `2 ε_q` elsewhere.
    pub fn sensitivities(&self) -> Vec<(Point, f64)> {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(q, &e)| (*q, if *q == ORIGIN { e } else { 2.0 * e }))
            .collect()
    }

    pub fn eta0(&self) -> f64 {
        self.sensitivities().iter().map(|(_, d)| d).sum()
    }
}

/// Configuration of the torus: one symbol index per site.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub sites: Vec<u8>,
}

impl EnvState {
    pub fn new(sites: Vec<u8>) -> Self {
        EnvState { sites }
    }

    pub fn uniform_symbol(n_sites: usize, symbol: u8) -> Self {
        EnvState { sites: vec![symbol; n_sites] }
    }

    /// Decodes an enumeration index (base-`m` digits, site 0 least significant).
    pub fn from_index(mut index: usize, symbols: usize, n_sites: usize) -> Self {
        let mut sites = vec![0u8; n_sites];
        for s in sites.iter_mut() {
            *s = (index % symbols) as u8;
            index /= symbols;
        }
        EnvState { sites }
    }

    pub fn index(&self, symbols: usize) -> usize {
        self.sites.iter().rev().fold(0usize, |acc, &s| acc * symbols + s as usize)
    }

    pub fn check(&self, geom: &Geometry) -> Result<()> {
        if self.sites.len() != geom.num_sites() {
            return Err(Error::GeometryMismatch { expected: geom.num_sites(), got: self.sites.len() });
        }
        Ok(())
    }
}

/// Time-indexed environment configurations, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvHistory {
    n_sites: usize,
    data: Vec<u8>,
    /// Key of the stream that produced the transitions.
    pub key: StreamKey,
}

impl EnvHistory {
    pub fn new(start: EnvState, key: StreamKey) -> Self {
        EnvHistory { n_sites: start.sites.len(), data: start.sites, key }
    }

    /// Number of stored states (`steps + 1`).
    pub fn len(&self) -> usize {
        self.data.len() / self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn state(&self, t: usize) -> &[u8] {
        &self.data[t * self.n_sites..(t + 1) * self.n_sites]
    }

    pub fn last(&self) -> &[u8] {
        self.state(self.len() - 1)
    }

    pub fn push(&mut self, state: &[u8]) {
        assert_eq!(state.len(), self.n_sites);
        self.data.extend_from_slice(state);
    }

    /// Writes `t,site,value` rows with a header.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,site,value")?;
        for t in 0..self.len() {
            for (s, v) in self.state(t).iter().enumerate() {
                writeln!(w, "{t},{s},{v}")?;
            }
        }
        Ok(())
    }

    pub fn read_table<R: BufRead>(r: R, n_sites: usize, key: StreamKey) -> Result<Self> {
        let mut data = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "t,site,value" {
                    return Err(Error::InvalidArgument("history table header mismatch".into()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad history row {}: {line}", lineno + 1)))
            };
            if fields.len() != 3 {
                return Err(Error::InvalidArgument(format!("bad history row {}: {line}", lineno + 1)));
            }
            let (t, s, v) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
            if t * n_sites + s != data.len() || v > u8::MAX as usize {
                return Err(Error::InvalidArgument(format!("history row {} out of order", lineno + 1)));
            }
            data.push(v as u8);
        }
        if data.is_empty() || data.len() % n_sites != 0 {
            return Err(Error::InvalidArgument("history table is truncated".into()));
        }
        Ok(EnvHistory { n_sites, data, key })
    }
}

/// Kernel compiled against a geometry for fast synchronous updates.
#[derive(Debug, Clone)]
pub struct EnvDynamics {
    kernel: EnvKernel,
    geom: Geometry,
    /// `neighbors[site * |S| + j]` is the site at offset `S[j]` from `site`.
    neighbors: Vec<usize>,
    /// Cumulative site laws per local-configuration key, when small enough.
    cdf_table: Option<Vec<f64>>,
    base_cdf: Vec<f64>,
}

impl EnvDynamics {
    pub fn new(kernel: &EnvKernel, geom: &Geometry) -> Result<Self> {
        if kernel.dim() != geom.dim() {
            return Err(Error::Kernel(format!(
                "kernel dimension {} does not match geometry dimension {}",
                kernel.dim(),
                geom.dim()
            )));
        }
        geom.check_radius(kernel.radius())?;
        let n = geom.num_sites();
        let k = kernel.offsets().len();
        let mut neighbors = vec![0usize; n * k];
        for (j, q) in kernel.offsets().iter().enumerate() {
            let table = geom.shift_table(q);
            for s in 0..n {
                neighbors[s * k + j] = table[s];
            }
        }
        let m = kernel.symbols();
        let configs = (m as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
        let cdf_table = if configs as usize <= TABLE_CAP / m.max(1) {
            let configs = configs as usize;
            let mut table = Vec::with_capacity(configs * m);
            let mut local = vec![0u8; k];
            for key in 0..configs {
                let mut x = key;
                for l in local.iter_mut() {
                    *l = (x % m) as u8;
                    x /= m;
                }
                table.extend(cumulative(&kernel.site_law(&local)));
            }
            Some(table)
        } else {
            None
        };
        let base_cdf = cumulative(kernel.base());
        Ok(EnvDynamics { kernel: kernel.clone(), geom: *geom, neighbors, cdf_table, base_cdf })
    }

    pub fn kernel(&self) -> &EnvKernel {
        &self.kernel
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    /// Synchronous update of every site; site `s` uses `stream.uniform(s)`.
    pub fn step_into(&self, from: &[u8], to: &mut [u8], stream: StreamKey) {
        let m = self.kernel.symbols();
        let k = self.kernel.offsets().len();
        match &self.cdf_table {
            Some(table) => {
                for (s, out) in to.iter_mut().enumerate() {
                    let nb = &self.neighbors[s * k..(s + 1) * k];
                    let mut key = 0usize;
                    for &site in nb.iter().rev() {
                        key = key * m + from[site] as usize;
                    }
                    let cdf = &table[key * m..(key + 1) * m];
                    *out = sample_cdf(cdf, stream.uniform(s as u64)) as u8;
                }
            }
            None => {
                let mut local = vec![0u8; k];
                for (s, out) in to.iter_mut().enumerate() {
                    for (j, l) in local.iter_mut().enumerate() {
                        *l = from[self.neighbors[s * k + j]];
                    }
                    let cdf = cumulative(&self.kernel.site_law(&local));
                    *out = sample_cdf(&cdf, stream.uniform(s as u64)) as u8;
                }
            }
        }
    }

    /// Checks the site count and that every symbol is in the alphabet.
    pub fn validate(&self, state: &EnvState) -> Result<()> {
        state.check(&self.geom)?;
        if let Some(s) = state.sites.iter().position(|&v| v as usize >= self.kernel.symbols()) {
            return Err(Error::InvalidArgument(format!("symbol {} at site {s} outside the alphabet", state.sites[s])));
        }
        Ok(())
    }

    /// Advances `state` by one step at time index `t` of the stream `key`.
    pub fn step(&self, state: &EnvState, key: StreamKey, t: u64) -> Result<EnvState> {
        self.validate(state)?;
        let mut out = vec![0u8; state.sites.len()];
        self.step_into(&state.sites, &mut out, key.derive(Label::Time, t));
        Ok(EnvState { sites: out })
    }

    /// I.i.d. draw from the base law at every site.
    pub fn iid_base(&self, key: StreamKey) -> EnvState {
        let sites = (0..self.geom.num_sites())
            .map(|s| sample_cdf(&self.base_cdf, key.uniform(s as u64)) as u8)
            .collect();
        EnvState { sites }
    }

    /// Runs `steps` transitions from `start`, recording every state.
    pub fn history(&self, start: EnvState, steps: usize, key: StreamKey) -> Result<EnvHistory> {
        self.validate(&start)?;
        let n = start.sites.len();
        let mut hist = EnvHistory::new(start, key);
        hist.data.reserve(steps * n);
        let mut buf = vec![0u8; n];
        for t in 0..steps {
            buf.copy_from_slice(hist.last());
            let from = buf.clone();
            self.step_into(&from, &mut buf, key.derive(Label::Time, t as u64));
            hist.push(&buf);
        }
        Ok(hist)
    }
}

pub(crate) fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

/// One synchronous step of the environment.
pub fn env_step(state: &EnvState, kernel: &EnvKernel, geom: &Geometry, key: StreamKey, t: u64) -> Result<EnvState> {
    EnvDynamics::new(kernel, geom)?.step(state, key, t)
}

/// State after `burn_in` steps from an i.i.d.-`ν` start. The bias of local
/// observables decays like `η₀^burn_in`.
pub fn sample_equilibrium(dynamics: &EnvDynamics, burn_in: usize, key: StreamKey) -> EnvState {
    let n = dynamics.geometry().num_sites();
    let mut cur = dynamics.iid_base(key.derive(Label::Start, 0)).sites;
    let mut next = vec![0u8; n];
    for t in 0..burn_in {
        dynamics.step_into(&cur, &mut next, key.derive(Label::BurnIn, t as u64));
        std::mem::swap(&mut cur, &mut next);
    }
    EnvState { sites: cur }
}

/// Burn-in making `η₀^steps` at most `1e-12` (at least one step).
pub fn default_burn_in(eta0: f64) -> usize {
    if eta0 <= 0.0 {
        1
    } else if eta0 >= 1.0 {
        1000
    } else {
        ((1e-12f64.ln() / eta0.ln()).ceil() as usize).max(1)
    }
}

/// Law on enumerated torus configurations, stored as a CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLaw {
    cdf: Vec<f64>,
    symbols: usize,
    n_sites: usize,
}

impl StateLaw {
    pub fn new(weights: &[f64], symbols: usize, n_sites: usize) -> Result<Self> {
        let expected = (symbols as u128).pow(n_sites as u32);
        if weights.len() as u128 != expected {
            return Err(Error::InvalidArgument(format!(
                "law has {} entries, expected {expected}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| *w < -1e-12) {
            return Err(Error::InvalidArgument("negative weight in state law".into()));
        }
        let total: f64 = weights.iter().sum();
        let normalized: Vec<f64> = weights.iter().map(|w| w.max(0.0) / total).collect();
        Ok(StateLaw { cdf: cumulative(&normalized), symbols, n_sites })
    }

    pub fn sample(&self, u: f64) -> EnvState {
        EnvState::from_index(sample_cdf(&self.cdf, u), self.symbols, self.n_sites)
    }
}

/// How the environment is initialised at time zero.
#[derive(Debug, Clone)]
pub enum EnvStart {
    /// I.i.d.-`ν` start followed by `burn_in` steps.
    Equilibrium { burn_in: usize },
    Fixed(EnvState),
    /// Exact draw from a law over enumerated configurations.
    Law(Arc<StateLaw>),
}

impl EnvStart {
    pub fn initial(&self, dynamics: &EnvDynamics, key: StreamKey) -> Result<EnvState> {
        match self {
            EnvStart::Equilibrium { burn_in } => Ok(sample_equilibrium(dynamics, *burn_in, key)),
            EnvStart::Fixed(s) => {
                dynamics.validate(s)?;
                Ok(s.clone())
            }
            EnvStart::Law(law) => {
                if law.n_sites != dynamics.geometry().num_sites() {
                    return Err(Error::GeometryMismatch {
                        expected: dynamics.geometry().num_sites(),
                        got: law.n_sites,
                    });
                }
                Ok(law.sample(key.derive(Label::Start, 1).uniform(0)))
            }
        }
    }
}

/// Dobrushin-type constants of a kernel, optionally paired with a walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DobrushinReport {
    pub d: Vec<(Point, f64)>,
    pub eta0: f64,
    pub walk_perturbation: Option<f64>,
    pub step_set_size: Option<usize>,
    pub eta1: Option<f64>,
    pub a9a: bool,
    pub a9b: Option<bool>,
    pub a9c: Option<bool>,
    pub a9c_threshold: Option<f64>,
    pub decay_exponent: f64,
    pub decay_exponent_admissible: bool,
    /// `(ℓ, Σ_{‖q‖ ≥ ℓ} d_q)` for ℓ up to one past the influence radius.
    pub tail_sums: Vec<(i64, f64)>,
}

/// `η₁ = (1 + (1 + 2|Λ|) D) η₀`.
pub fn eta1(eta0: f64, perturbation: f64, step_set_size: usize) -> f64 {
    (1.0 + (1.0 + 2.0 * step_set_size as f64) * perturbation) * eta0
}

pub fn dobrushin_constants(kernel: &EnvKernel, walk: Option<&WalkModel>) -> DobrushinReport {
    let d = kernel.sensitivities();
    let eta0: f64 = d.iter().map(|(_, x)| x).sum();
    let dim = kernel.dim();
    let xi = kernel.decay_exponent();
    let tail_sums = (1..=kernel.radius() + 1)
        .map(|l| {
            let s: f64 = d.iter().filter(|(q, _)| geometry::sup_norm(q, dim) >= l).map(|(_, x)| x).sum();
            (l, s)
        })
        .collect();
    let mut report = DobrushinReport {
        d,
        eta0,
        walk_perturbation: None,
        step_set_size: None,
        eta1: None,
        a9a: eta0 < 1.0,
        a9b: None,
        a9c: None,
        a9c_threshold: None,
        decay_exponent: xi,
        decay_exponent_admissible: xi > (4.0 + dim as f64).max(2.0 * dim as f64),
        tail_sums,
    };
    if let Some(w) = walk {
        let big_d = w.perturbation_bound();
        let lam = w.steps().len();
        let e1 = eta1(eta0, big_d, lam);
        let threshold = if xi > dim as f64 {
            (1.0 - big_d).max(0.0).powf(xi * (1.0 + dim as f64) / (xi - dim as f64))
        } else {
            0.0
        };
        report.walk_perturbation = Some(big_d);
        report.step_set_size = Some(lam);
        report.eta1 = Some(e1);
        report.a9b = Some(e1 < 1.0);
        report.a9c_threshold = Some(threshold);
        report.a9c = Some(e1 < 1.0 && big_d < 1.0 && eta0 < threshold);
    }
    report
}

/// The product-chain comparison: independent sites (`η₀ = 1 − κ`), a walk
/// with `|π̂_z| ≤ (1 − ε) a_z` (`D = 1 − ε`) reading only its current site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductChainComparison {
    pub kappa: f64,
    pub epsilon: f64,
    pub eta0: f64,
    pub perturbation: f64,
    /// `η₁` with the general constant `1 + 2|Λ|`.
    pub eta1_general: f64,
    pub general_constant: f64,
    /// `η₁` with the constant 3 valid for walks reading only `θ⁰`.
    pub eta1_site_only: f64,
    /// `(1 + 3(1 − ε))(1 − κ)`.
    pub site_only_product: f64,
    pub site_only_holds: bool,
    /// `κ + (4 − 3ε)^{-1} > 1`, the rewritten form of the same condition.
    pub rewritten_holds: bool,
    /// `κ + ε² > 1`.
    pub quadratic_condition: bool,
    /// `η₀ + D < 1`, i.e. `κ + ε > 1`.
    pub sum_condition: bool,
}

pub fn product_chain_comparison(kappa: f64, epsilon: f64, step_set_size: usize) -> ProductChainComparison {
    let eta0 = 1.0 - kappa;
    let big_d = 1.0 - epsilon;
    let general_constant = 1.0 + 2.0 * step_set_size as f64;
    let eta1_site_only = (1.0 + 3.0 * big_d) * eta0;
    ProductChainComparison {
        kappa,
        epsilon,
        eta0,
        perturbation: big_d,
        eta1_general: eta1(eta0, big_d, step_set_size),
        general_constant,
        eta1_site_only,
        site_only_product: (1.0 + 3.0 * (1.0 - epsilon)) * (1.0 - kappa),
        site_only_holds: eta1_site_only < 1.0,
        rewritten_holds: kappa + 1.0 / (4.0 - 3.0 * epsilon) > 1.0,
        quadratic_condition: kappa + epsilon * epsilon > 1.0,
        sum_condition: eta0 + big_d < 1.0,
    }
}

/// Largest `Σ_y |K(θ, y) − K(θ̃, y)|` over local configurations differing only
/// at offset `q`; zero when `q` is outside the influence set.
pub fn kernel_tv_sensitivity(kernel: &EnvKernel, q: &Point) -> f64 {
    let Some(jq) = kernel.offsets().iter().position(|o| o == q) else {
        return 0.0;
    };
    let m = kernel.symbols();
    let k = kernel.offsets().len();
    let configs = m.pow(k as u32);
    let mut local = vec![0u8; k];
    let mut worst: f64 = 0.0;
    for key in 0..configs {
        let mut x = key;
        for l in local.iter_mut() {
            *l = (x % m) as u8;
            x /= m;
        }
        let base = kernel.site_law(&local);
        let orig = local[jq];
        for alt in 0..m as u8 {
            if alt == orig {
                continue;
            }
            local[jq] = alt;
            let other = kernel.site_law(&local);
            let tv: f64 = base.iter().zip(&other).map(|(a, b)| (a - b).abs()).sum();
            worst = worst.max(tv);
        }
        local[jq] = orig;
    }
    worst
}

/// Function of the symbols on a finite support, tabulated by window index
/// (base-`m` digits over `support`, first offset least significant).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservable {
    pub support: Vec<Point>,
    pub table: Vec<f64>,
}

impl LocalObservable {
    pub fn single_site(values: Vec<f64>) -> Self {
        LocalObservable { support: vec![ORIGIN], table: values }
    }

    fn radius(&self, dim: usize) -> i64 {
        self.support.iter().map(|p| geometry::sup_norm(p, dim)).max().unwrap_or(0)
    }

    fn eval(&self, state: &[u8], geom: &Geometry, at: &Point, m: usize) -> f64 {
        let mut key = 0usize;
        for q in self.support.iter().rev() {
            key = key * m + state[geom.site_index(&geometry::add(at, q))] as usize;
        }
        self.table[key]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub separation: i64,
    pub covariance: f64,
    pub covariance_se: f64,
    pub covariance_ci: (f64, f64),
    pub correlation: f64,
    pub correlation_ci: (f64, f64),
    pub samples: usize,
}

/// Covariance of `obs_a` at `x` and `obs_b` at `x + r e₁` under approximate
/// equilibrium, averaged over translations; bootstrap 95% intervals.
pub fn spatial_correlation(
    dynamics: &EnvDynamics,
    obs_a: &LocalObservable,
    obs_b: &LocalObservable,
    separation: i64,
    samples: usize,
    burn_in: usize,
    key: StreamKey,
) -> Result<CorrelationEstimate> {
    let geom = *dynamics.geometry();
    let dim = geom.dim();
    let m = dynamics.kernel().symbols();
    if separation < 0 {
        return Err(Error::InvalidArgument("separation must be nonnegative".into()));
    }
    if 2 * (separation + obs_a.radius(dim) + obs_b.radius(dim)) >= geom.side() as i64 {
        return Err(Error::WrapAmbiguity {
            radius: separation + obs_a.radius(dim) + obs_b.radius(dim),
            side: geom.side(),
        });
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let mut shift = ORIGIN;
    shift[0] = separation;
    let n = geom.num_sites();
    use rayon::prelude::*;
    let per_sample: Vec<[f64; 5]> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let state = sample_equilibrium(dynamics, burn_in, key.derive(Label::Replica, i as u64));
            let mut acc = [0.0f64; 5];
            for s in 0..n {
                let x = geom.site_point(s);
                let a = obs_a.eval(&state.sites, &geom, &x, m);
                let b = obs_b.eval(&state.sites, &geom, &geometry::add(&x, &shift), m);
                acc[0] += a * b;
                acc[1] += a;
                acc[2] += b;
                acc[3] += a * a;
                acc[4] += b * b;
            }
            acc.map(|v| v / n as f64)
        })
        .collect();
    let stat = |idx: &[usize]| -> (f64, f64) {
        let k = idx.len() as f64;
        let mut m = [0.0f64; 5];
        for &i in idx {
            for (mj, v) in m.iter_mut().zip(per_sample[i]) {
                *mj += v;
            }
        }
        let m = m.map(|v| v / k);
        let cov = m[0] - m[1] * m[2];
        let va = m[3] - m[1] * m[1];
        let vb = m[4] - m[2] * m[2];
        let corr = if va > 0.0 && vb > 0.0 { cov / (va * vb).sqrt() } else { 0.0 };
        (cov, corr)
    };
    let all: Vec<usize> = (0..samples).collect();
    let (cov, corr) = stat(&all);
    let mut rng = key.derive(Label::Bootstrap, 0).chacha();
    let reps = 400;
    let mut covs = Vec::with_capacity(reps);
    let mut corrs = Vec::with_capacity(reps);
    let mut idx = vec![0usize; samples];
    for _ in 0..reps {
        for v in idx.iter_mut() {
            *v = rand::Rng::random_range(&mut rng, 0..samples);
        }
        let (c, r) = stat(&idx);
        covs.push(c);
        corrs.push(r);
    }
    let se = stats::std_dev(&covs);
    Ok(CorrelationEstimate {
        separation,
        covariance: cov,
        covariance_se: se,
        covariance_ci: (stats::quantile(&covs, 0.025), stats::quantile(&covs, 0.975)),
        correlation: corr,
        correlation_ci: (stats::quantile(&corrs, 0.025), stats::quantile(&corrs, 0.975)),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn uncoupled(base: Vec<f64>) -> EnvKernel {
        let m = base.len();
        let rows = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        EnvKernel::new(1, base, vec![(ORIGIN, 0.0)], rows, 9.0).unwrap()
    }

    #[test]
    fn kernel_validation() {
        let rows = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert!(EnvKernel::new(1, vec![1.0, 0.0], vec![(ORIGIN, 0.1)], rows.clone(), 9.0).is_err());
        assert!(EnvKernel::new(1, vec![0.5, 0.5], vec![([1, 0, 0], 0.1)], rows.clone(), 9.0).is_err());
        assert!(EnvKernel::new(1, vec![0.5, 0.5], vec![(ORIGIN, 0.6), ([1, 0, 0], 0.6)], rows.clone(), 9.0).is_err());
        assert!(EnvKernel::new(1, vec![0.5, 0.6], vec![(ORIGIN, 0.1)], rows.clone(), 9.0).is_err());
        assert!(EnvKernel::new(1, vec![0.5, 0.5], vec![(ORIGIN, 0.1), (ORIGIN, 0.1)], rows.clone(), 9.0).is_err());
        assert!(EnvKernel::new(1, vec![0.5, 0.5], vec![(ORIGIN, 0.1), ([0, 1, 0], 0.1)], rows, 9.0).is_err());
    }

    #[test]
    fn degenerate_point_mass_base() {
        // ν ≈ point mass; ν must stay positive, so use a vanishing second entry.
        let k = uncoupled(vec![1.0 - 1e-13, 1e-13]);
        let g = Geometry::new(1, 8).unwrap();
        let dynamics = EnvDynamics::new(&k, &g).unwrap();
        let s = EnvState::uniform_symbol(8, 1);
        let next = dynamics.step(&s, StreamKey::from_seed(1), 0).unwrap();
        assert!(next.sites.iter().all(|&v| v == 0));
    }

    #[test]
    fn uncoupled_uniform_step_gives_uniform_marginals() {
        let k = uncoupled(vec![0.25; 4]);
        let g = Geometry::new(1, 10).unwrap();
        let dynamics = EnvDynamics::new(&k, &g).unwrap();
        let s = EnvState::uniform_symbol(10, 2);
        let mut counts = [0usize; 4];
        for t in 0..1000 {
            let next = dynamics.step(&s, StreamKey::from_seed(5), t).unwrap();
            for v in next.sites {
                counts[v as usize] += 1;
            }
        }
        let n = 10_000.0;
        let se = (0.25f64 * 0.75 / n).sqrt();
        for c in counts {
            assert!((c as f64 / n - 0.25).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn desk_mixture_probability() {
        let k = fixtures::desk_kernel();
        // offsets are [0, +1, -1]; symbol 0 is +1.
        let law = k.site_law(&[0, 0, 0]);
        assert!((law[0] - 0.58).abs() < 1e-12);
        assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn desk_empirical_next_site() {
        let k = fixtures::desk_kernel();
        let g = Geometry::new(1, 5).unwrap();
        let dynamics = EnvDynamics::new(&k, &g).unwrap();
        let s = EnvState::uniform_symbol(5, 0);
        let trials = 20_000;
        let mut plus = 0;
        for t in 0..trials {
            let next = dynamics.step(&s, StreamKey::from_seed(11), t).unwrap();
            plus += (next.sites[2] == 0) as usize;
        }
        let p = plus as f64 / trials as f64;
        let se = (0.58f64 * 0.42 / trials as f64).sqrt();
        assert!((p - 0.58).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn step_rejects_mismatch_and_wrap() {
        let k = fixtures::desk_kernel();
        let g = Geometry::new(1, 5).unwrap();
        let bad = EnvState::uniform_symbol(4, 0);
        assert!(matches!(
            env_step(&bad, &k, &g, StreamKey::from_seed(0), 0),
            Err(Error::GeometryMismatch { .. })
        ));
        let rows = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let wide = EnvKernel::new(1, vec![0.5, 0.5], vec![(ORIGIN, 0.1), ([2, 0, 0], 0.1)], rows, 9.0).unwrap();
        assert!(matches!(EnvDynamics::new(&wide, &Geometry::new(1, 4).unwrap()), Err(Error::WrapAmbiguity { .. })));
    }

    #[test]
    fn dobrushin_uncoupled_and_product() {
        let r = dobrushin_constants(&uncoupled(vec![0.5, 0.5]), Some(&fixtures::desk_walk()));
        assert_eq!(r.eta0, 0.0);
        assert!(r.a9a && r.a9b.unwrap() && r.a9c.unwrap());

        let rows = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        let product = EnvKernel::new(1, vec![0.5, 0.5], vec![(ORIGIN, 0.3), ([1, 0, 0], 0.0)], rows, 9.0).unwrap();
        let r = dobrushin_constants(&product, None);
        assert_eq!(r.eta0, 0.3);
    }

    #[test]
    fn dobrushin_desk_values() {
        let r = dobrushin_constants(&fixtures::desk_kernel(), Some(&fixtures::desk_walk()));
        assert!((r.eta0 - 0.3).abs() < 1e-15);
        assert!((r.walk_perturbation.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(r.step_set_size, Some(3));
        assert!((r.eta1.unwrap() - 0.51).abs() < 1e-12);
        assert!((r.a9c_threshold.unwrap() - 0.9f64.powf(2.25)).abs() < 1e-12);
        assert!((r.a9c_threshold.unwrap() - 0.789).abs() < 1e-3);
        assert!(r.a9a && r.a9b.unwrap() && r.a9c.unwrap());
        assert_eq!(r.tail_sums, vec![(1, 0.2), (2, 0.0)]);
    }

    #[test]
    fn sensitivity_examples() {
        let desk = fixtures::desk_kernel();
        assert!((kernel_tv_sensitivity(&desk, &[1, 0, 0]) - 0.08).abs() < 1e-12);
        assert!((kernel_tv_sensitivity(&desk, &[0, 0, 0]) - 0.16).abs() < 1e-12);
        assert_eq!(kernel_tv_sensitivity(&desk, &[5, 0, 0]), 0.0);
        assert_eq!(kernel_tv_sensitivity(&uncoupled(vec![0.5, 0.5]), &ORIGIN), 0.0);
        let same_rows = EnvKernel::new(
            1,
            vec![0.5, 0.5],
            vec![(ORIGIN, 0.2), ([1, 0, 0], 0.2)],
            vec![vec![0.3, 0.7], vec![0.3, 0.7]],
            9.0,
        )
        .unwrap();
        assert_eq!(kernel_tv_sensitivity(&same_rows, &[1, 0, 0]), 0.0);
    }

    #[test]
    fn history_is_reproducible_and_persists() {
        let k = fixtures::desk_kernel();
        let g = Geometry::new(1, 6).unwrap();
        let dynamics = EnvDynamics::new(&k, &g).unwrap();
        let key = StreamKey::from_seed(42);
        let start = sample_equilibrium(&dynamics, 10, key);
        let a = dynamics.history(start.clone(), 20, key).unwrap();
        let b = dynamics.history(start, 20, key).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 21);
        let mut buf = Vec::new();
        a.write_table(&mut buf).unwrap();
        let back = EnvHistory::read_table(std::io::Cursor::new(buf), 6, key).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn equilibrium_uncoupled_one_step_and_flip_symmetry() {
        let g = Geometry::new(1, 8).unwrap();
        let desk = EnvDynamics::new(&fixtures::desk_kernel(), &g).unwrap();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|i| {
                let s = sample_equilibrium(&desk, 20, StreamKey::from_seed(9).derive(Label::Replica, i));
                if s.sites[0] == 0 { 1.0 } else { -1.0 }
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn spatial_correlation_cases() {
        let g = Geometry::new(1, 16).unwrap();
        let spin = LocalObservable::single_site(vec![1.0, -1.0]);
        let product = EnvDynamics::new(&uncoupled(vec![0.5, 0.5]), &g).unwrap();
        let c = spatial_correlation(&product, &spin, &spin, 3, 2000, 1, StreamKey::from_seed(2)).unwrap();
        assert!(c.covariance.abs() < 3.0 * c.covariance_se, "{c:?}");
        let v = spatial_correlation(&product, &spin, &spin, 0, 200, 1, StreamKey::from_seed(2)).unwrap();
        assert!(v.covariance >= 0.0 && (v.covariance - 1.0).abs() < 0.05);
        assert!(spatial_correlation(&product, &spin, &spin, 8, 10, 1, StreamKey::from_seed(2)).is_err());
    }

    #[test]
    fn product_chain_comparison_terms() {
        let c = product_chain_comparison(0.8, 0.9, 3);
        assert!((c.eta1_site_only - (1.0 + 3.0 * 0.1) * 0.2).abs() < 1e-15);
        assert_eq!(c.eta1_site_only, c.site_only_product);
        assert!((c.eta1_general - (1.0 + 7.0 * 0.1) * 0.2).abs() < 1e-15);
        assert_eq!(c.site_only_holds, c.rewritten_holds);
    }
}
