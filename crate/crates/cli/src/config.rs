//! Run configuration: a TOML file with one table per concern.
//!
//! Offset-indexed maps use the offset as the key, written as comma-separated
//! coordinates (`"0"`, `"-1"`, `"1,0"`).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dynwalk_core::exact::DEFAULT_STATE_CAP;
use dynwalk_core::geometry::MAX_DIM;
use dynwalk_core::lattice::default_burn_in;
use dynwalk_core::{EnvKernel, EnvStart, Geometry, Perturbation, Point, WalkModel, ORIGIN};
use serde::{Deserialize, Serialize};

/// Experiment kinds accepted on the command line.
pub const KINDS: [&str; 12] = [
    "check",
    "env-sim",
    "walk-sim",
    "pair-sim",
    "encounters",
    "excursion",
    "survival",
    "exact",
    "resolvent",
    "mw-scan",
    "quenched-clt",
    "annealed-clt",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub dim: usize,
    pub side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub base: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub influence: BTreeMap<String, f64>,
    #[serde(default = "default_decay")]
    pub decay_exponent: f64,
}

fn default_decay() -> f64 {
    9.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    Center,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSection {
    #[serde(default = "one")]
    pub range: i64,
    pub base: Vec<f64>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "center")]
    pub mode: PerturbationMode,
    /// Step offset → perturbation per read key.
    #[serde(default)]
    pub perturbation: BTreeMap<String, Vec<f64>>,
}

fn one() -> i64 {
    1
}

fn center() -> PerturbationMode {
    PerturbationMode::Center
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMode {
    Equilibrium,
    ExactMu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    #[serde(default = "equilibrium")]
    pub start: StartMode,
    pub burn_in: Option<usize>,
}

fn equilibrium() -> StartMode {
    StartMode::Equilibrium
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { start: StartMode::Equilibrium, burn_in: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub replicas: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSection {
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "unit")]
    pub a: f64,
    #[serde(default = "unit")]
    pub epsilon: f64,
    #[serde(default = "default_r")]
    pub r: i64,
    #[serde(default = "default_threshold")]
    pub threshold: i64,
    /// Initial separation along the first axis for survival runs.
    pub separation: Option<i64>,
    /// Horizon for `pair-sim`.
    #[serde(default = "default_pair_steps")]
    pub steps: usize,
    pub replicas: usize,
}

fn unit() -> f64 {
    1.0
}

fn default_r() -> i64 {
    32
}

fn default_threshold() -> i64 {
    8
}

fn default_pair_steps() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltSection {
    pub n: usize,
    #[serde(default)]
    pub walks: usize,
    #[serde(default)]
    pub histories: usize,
    #[serde(default)]
    pub replicas: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanStartMode {
    ExactMu,
    Reweighted,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub n_grid: Vec<usize>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub histories: usize,
    #[serde(default = "exact_mu")]
    pub start: ScanStartMode,
    pub direction: Option<Vec<f64>>,
    /// Replicas of the two-walker cross-check; 0 skips it.
    #[serde(default)]
    pub pair_replicas: usize,
}

fn default_rho() -> f64 {
    1.5
}

fn exact_mu() -> ScanStartMode {
    ScanStartMode::ExactMu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventSection {
    pub epsilon: Vec<f64>,
    #[serde(default = "default_kmax")]
    pub k_max: usize,
}

fn default_kmax() -> usize {
    30
}

/// Parsed file, before any model objects are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub cap: usize,
    pub geometry: Option<GeometrySection>,
    pub kernel: Option<KernelSection>,
    pub walk: Option<WalkSection>,
    pub env: Option<EnvSection>,
    pub sim: Option<SimSection>,
    pub pair: Option<PairSection>,
    pub clt: Option<CltSection>,
    pub scan: Option<ScanSection>,
    pub resolvent: Option<ResolventSection>,
}

fn default_cap() -> usize {
    DEFAULT_STATE_CAP
}

/// Validated configuration with model objects built.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: String,
    pub raw: RawConfig,
    pub source: String,
    pub geometry: Geometry,
    pub kernel: EnvKernel,
    pub walk: Option<WalkModel>,
    pub burn_in: usize,
}

impl RunConfig {
    pub fn section<'a, T>(&self, name: &str, value: &'a Option<T>) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| anyhow!("missing [{name}] section required by `{}`", self.kind))
    }

    pub fn walk(&self) -> Result<&WalkModel> {
        self.walk.as_ref().ok_or_else(|| anyhow!("missing [walk] section required by `{}`", self.kind))
    }

    /// Default environment start from the `[env]` section.
    pub fn env_start(&self) -> EnvStart {
        EnvStart::Equilibrium { burn_in: self.burn_in }
    }

    pub fn start_mode(&self) -> StartMode {
        self.raw.env.clone().unwrap_or_default().start
    }
}

fn required_sections(kind: &str) -> &'static [&'static str] {
    match kind {
        "check" | "exact" => &["walk"],
        "env-sim" => &["sim"],
        "walk-sim" => &["walk", "sim"],
        "pair-sim" | "encounters" | "excursion" | "survival" => &["walk", "pair"],
        "resolvent" => &["walk", "resolvent"],
        "mw-scan" => &["walk", "scan"],
        "quenched-clt" | "annealed-clt" => &["walk", "clt"],
        _ => &[],
    }
}

fn present(raw: &RawConfig, section: &str) -> bool {
    match section {
        "walk" => raw.walk.is_some(),
        "sim" => raw.sim.is_some(),
        "pair" => raw.pair.is_some(),
        "clt" => raw.clt.is_some(),
        "scan" => raw.scan.is_some(),
        "resolvent" => raw.resolvent.is_some(),
        _ => true,
    }
}

/// Parses `"1,-2"` into a point of dimension `dim`.
pub fn parse_offset(key: &str, dim: usize) -> Result<Point> {
    let coords: Vec<i64> = key
        .split(',')
        .map(|c| c.trim().parse::<i64>().map_err(|_| anyhow!("offset `{key}` is not a list of integers")))
        .collect::<Result<_>>()?;
    if coords.len() != dim {
        bail!("offset `{key}` has {} coordinates, expected {dim}", coords.len());
    }
    let mut p = ORIGIN;
    p[..dim].copy_from_slice(&coords);
    Ok(p)
}

fn build_kernel(k: &KernelSection, dim: usize) -> Result<EnvKernel> {
    let influence = k
        .influence
        .iter()
        .map(|(key, w)| Ok((parse_offset(key, dim).context("in [kernel.influence]")?, *w)))
        .collect::<Result<Vec<_>>>()?;
    EnvKernel::new(dim, k.base.clone(), influence, k.rows.clone(), k.decay_exponent).map_err(|e| anyhow!("[kernel]: {e}"))
}

fn build_walk(w: &WalkSection, dim: usize, symbols: usize) -> Result<WalkModel> {
    let steps = dynwalk_core::geometry::ball(dim, w.range);
    let keys = match w.mode {
        PerturbationMode::Center => symbols,
        PerturbationMode::Window => symbols.pow(steps.len() as u32),
    };
    let mut table = vec![vec![0.0; keys]; steps.len()];
    for (key, values) in &w.perturbation {
        let z = parse_offset(key, dim).context("in [walk.perturbation]")?;
        let i = steps
            .iter()
            .position(|s| *s == z)
            .ok_or_else(|| anyhow!("[walk.perturbation]: offset `{key}` is not a step of range {}", w.range))?;
        if values.len() != keys {
            bail!("[walk.perturbation]: offset `{key}` has {} values, expected {keys}", values.len());
        }
        table[i] = values.clone();
    }
    let p = match w.mode {
        PerturbationMode::Center => Perturbation::Center(table),
        PerturbationMode::Window => Perturbation::Window(table),
    };
    WalkModel::new(dim, symbols, w.range, w.base.clone(), w.delta, p).map_err(|e| anyhow!("[walk]: {e}"))
}

/// Parses TOML text for experiment `kind` and validates it.
pub fn parse_config_str(text: &str, kind: &str) -> Result<RunConfig> {
    if !KINDS.contains(&kind) {
        bail!("unknown experiment kind `{kind}`; expected one of {}", KINDS.join(", "));
    }
    let raw: RawConfig = toml::from_str(text).map_err(|e| anyhow!("config parse error: {e}"))?;
    let geom_section = raw.geometry.as_ref().ok_or_else(|| anyhow!("missing [geometry] section"))?;
    let kernel_section = raw.kernel.as_ref().ok_or_else(|| anyhow!("missing [kernel] section"))?;
    for section in required_sections(kind) {
        if !present(&raw, section) {
            bail!("missing [{section}] section required by `{kind}`");
        }
    }
    if raw.cap == 0 {
        bail!("`cap` must be positive");
    }
    if geom_section.dim == 0 || geom_section.dim > MAX_DIM {
        bail!("[geometry] dim must lie in 1..={MAX_DIM}");
    }
    let geometry = Geometry::new(geom_section.dim, geom_section.side).map_err(|e| anyhow!("[geometry]: {e}"))?;
    let kernel = build_kernel(kernel_section, geometry.dim())?;
    geometry.check_radius(kernel.radius()).map_err(|e| anyhow!("[kernel] influence vs [geometry] side: {e}"))?;
    let walk = match &raw.walk {
        Some(w) => {
            let model = build_walk(w, geometry.dim(), kernel.symbols())?;
            geometry.check_radius(model.window_radius()).map_err(|e| anyhow!("[walk] range vs [geometry] side: {e}"))?;
            Some(model)
        }
        None => None,
    };
    let burn_in = raw.env.as_ref().and_then(|e| e.burn_in).unwrap_or_else(|| default_burn_in(kernel.eta0()));
    Ok(RunConfig { kind: kind.to_string(), source: text.to_string(), raw, geometry, kernel, walk, burn_in })
}

pub fn parse_config(path: &Path, kind: &str) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config_str(&text, kind).with_context(|| format!("in config {}", path.display()))
}

