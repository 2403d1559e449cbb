//! Config-driven experiment runner: full-order model, basis, reduced model,
//! synthetic observations, eddy-viscosity estimation and error metrics, with
//! content-hashed caching of the expensive stages.
//!
//! Configs are TOML files (flat keys under `[fom]`, `[rom]`, `[obs]`, `[fsm]`
//! and `[output]` headers). Unknown keys, and keys that do not apply to the
//! chosen problem, are rejected.
//!
//! # Seeds
//!
//! A single top-level `seed` drives all randomness. The 2D initial phases use
//! `fom.seed` if given, otherwise `derive_seed(seed, "fom")`; the observation
//! noise uses `obs.seed` if given, otherwise `derive_seed(seed, "obs")`.

mod metrics;
mod pipeline;

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::burgers::{BoundaryClosure, BurgersConfig, Grid1D};
use crate::container::sha256_hex;
use crate::fsm::ViscosityMode;
use crate::observations::SensorLayout;
use crate::pod::{PodOptions, SvdMethod};
use crate::vorticity::{ArakawaOrder, Grid2D, LaplacianKind, VorticityConfig};
use crate::{Error, Result};

pub use metrics::{compute_rmse, Method, MetricsReport, RmseSeries};
pub use pipeline::{run_experiment, run_pipeline, PipelineOutcome, Stage, StageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Burgers1d,
    Turbulence2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    /// 2D runs on 128² instead of 512²; 1D is unchanged.
    #[default]
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Project full-field measurements onto the basis; observe coefficients.
    FullProjection,
    /// Least-squares coefficients from sparse sensors; observe coefficients.
    SparsePinv,
    /// Observe sensor values through `ū_s + C a`.
    SparseReconstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutName {
    #[default]
    Full,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Global,
    PerMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodMethodName {
    Direct,
    Snapshots,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FomSection {
    /// 1D node count.
    pub n: Option<usize>,
    /// 1D domain length.
    pub length: Option<f64>,
    /// 2D grid size (square unless `ny` is given).
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub re: Option<f64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub snapshot_stride: Option<usize>,
    pub closure: Option<BoundaryClosure>,
    pub advective_weight: Option<f64>,
    pub kp: Option<f64>,
    pub seed: Option<u64>,
    pub arakawa: Option<ArakawaOrder>,
    pub laplacian: Option<LaplacianKind>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomSection {
    pub r: usize,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub pod_method: Option<PodMethodName>,
    pub pod_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsSection {
    #[serde(default)]
    pub layout: LayoutName,
    /// 1D sparse layouts: number of equally spaced sensors.
    pub sensors: Option<usize>,
    /// 2D sparse layouts: lattice spacing in nodes.
    pub spacing: Option<usize>,
    /// Explicit sensor node indices; overrides `sensors` / `spacing`.
    pub indices: Option<Vec<usize>>,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
}

fn default_sigma() -> f64 {
    0.1
}

impl Default for ObsSection {
    fn default() -> Self {
        Self {
            layout: LayoutName::Full,
            sensors: None,
            spacing: None,
            indices: None,
            times: Vec::new(),
            sigma: default_sigma(),
            seed: None,
            strategy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsmSection {
    #[serde(default)]
    pub mode: ModeName,
    pub window: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub nu0: f64,
    #[serde(default)]
    pub include_initial_condition: bool,
}

fn default_max_iter() -> usize {
    30
}

fn default_tol() -> f64 {
    1e-6
}

impl Default for FsmSection {
    fn default() -> Self {
        Self { mode: ModeName::Global, window: None, max_iter: 30, tol: 1e-6, nu0: 0.0, include_initial_condition: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Times at which reconstructed fields are written (default: the ROM end).
    pub field_times: Option<Vec<f64>>,
    /// Also export the full snapshot matrix as CSV.
    #[serde(default)]
    pub snapshots_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Where cached snapshots and bases live (default `<output_dir>/cache`).
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub fom: FomSection,
    pub rom: RomSection,
    #[serde(default)]
    pub obs: ObsSection,
    #[serde(default)]
    pub fsm: FsmSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        resolve(self)
    }
}

/// First eight bytes of `SHA-256("<label>:<seed>")`, little-endian.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let hex = sha256_hex(format!("{label}:{seed}").as_bytes());
    let bytes = hex::decode(&hex[..16]).expect("hex digest");
    u64::from_le_bytes(bytes.try_into().expect("eight bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FomSetup {
    Burgers { grid: Grid1D, cfg: BurgersConfig },
    Vorticity { grid: Grid2D, cfg: VorticityConfig },
}

impl FomSetup {
    pub fn n_nodes(&self) -> usize {
        match self {
            FomSetup::Burgers { grid, .. } => grid.n,
            FomSetup::Vorticity { grid, .. } => grid.len(),
        }
    }

    pub fn t_final(&self) -> f64 {
        match self {
            FomSetup::Burgers { cfg, .. } => cfg.t_final,
            FomSetup::Vorticity { cfg, .. } => cfg.t_final,
        }
    }

    fn snapshot_interval(&self) -> f64 {
        match self {
            FomSetup::Burgers { cfg, .. } => cfg.dt * cfg.snapshot_stride as f64,
            FomSetup::Vorticity { cfg, .. } => cfg.dt * cfg.snapshot_stride as f64,
        }
    }

    fn snapshot_count(&self) -> Result<usize> {
        Ok(match self {
            FomSetup::Burgers { cfg, .. } => cfg.steps()? / cfg.snapshot_stride,
            FomSetup::Vorticity { cfg, grid } => cfg.steps(grid)? / cfg.snapshot_stride,
        })
    }

    /// Cache key: everything that influences the snapshot data.
    pub fn hash(&self) -> String {
        sha256_hex(format!("fom-v1 {self:?}").as_bytes())
    }
}

/// A validated config with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub problem: Problem,
    pub fom: FomSetup,
    pub r: usize,
    pub rom_dt: f64,
    pub rom_steps: usize,
    pub pod: PodOptions,
    pub layout: SensorLayout,
    pub obs_times: Vec<f64>,
    pub sigma: f64,
    pub obs_seed: u64,
    pub strategy: Strategy,
    pub mode: ViscosityMode,
    pub window: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub nu0: f64,
    pub include_initial_condition: bool,
    pub field_times: Vec<f64>,
    pub snapshots_csv: bool,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Resolved {
    pub fn rom_t_final(&self) -> f64 {
        self.rom_steps as f64 * self.rom_dt
    }

    pub fn pod_hash(&self) -> String {
        sha256_hex(format!("pod-v2 {} r={} {:?}", self.fom.hash(), self.r, self.pod).as_bytes())
    }
}

fn reject(present: bool, key: &str, problem: &str) -> Result<()> {
    if present {
        return Err(Error::Config(format!("fom.{key} does not apply to {problem}")));
    }
    Ok(())
}

/// Whole number of `dt` steps in `t`, if any.
fn steps_of(t: f64, dt: f64) -> Option<usize> {
    let s = t / dt;
    ((s - s.round()).abs() <= 1e-6 && s.round() >= 0.0).then(|| s.round() as usize)
}

fn resolve_fom(cfg: &ExperimentConfig) -> Result<FomSetup> {
    let f = &cfg.fom;
    match cfg.problem {
        Problem::Burgers1d => {
            let name = "burgers1d";
            reject(f.nx.is_some(), "nx", name)?;
            reject(f.ny.is_some(), "ny", name)?;
            reject(f.kp.is_some(), "kp", name)?;
            reject(f.seed.is_some(), "seed", name)?;
            reject(f.arakawa.is_some(), "arakawa", name)?;
            reject(f.laplacian.is_some(), "laplacian", name)?;
            let grid = Grid1D::new(f.n.unwrap_or(4096), f.length.unwrap_or(1.0))?;
            let p = BurgersConfig::paper();
            let bc = BurgersConfig {
                re: f.re.unwrap_or(p.re),
                dt: f.dt.unwrap_or(p.dt),
                t_final: f.t_final.unwrap_or(p.t_final),
                snapshot_stride: f.snapshot_stride.unwrap_or(p.snapshot_stride),
                closure: f.closure.unwrap_or(p.closure),
                advective_weight: f.advective_weight.unwrap_or(p.advective_weight),
            };
            bc.steps()?;
            if !(0.0..=1.0).contains(&bc.advective_weight) {
                return Err(Error::Config(format!("advective_weight {} outside [0, 1]", bc.advective_weight)));
            }
            Ok(FomSetup::Burgers { grid, cfg: bc })
        }
        Problem::Turbulence2d => {
            let name = "turbulence2d";
            reject(f.n.is_some(), "n", name)?;
            reject(f.length.is_some(), "length", name)?;
            reject(f.closure.is_some(), "closure", name)?;
            reject(f.advective_weight.is_some(), "advective_weight", name)?;
            let base = match cfg.scale {
                Scale::Paper => 512,
                Scale::Desk => 128,
            };
            let swap = |n: usize| if cfg.scale == Scale::Desk && n == 512 { 128 } else { n };
            let nx = swap(f.nx.unwrap_or(base));
            let ny = swap(f.ny.unwrap_or(nx));
            let two_pi = 2.0 * std::f64::consts::PI;
            let grid = Grid2D::new(nx, ny, two_pi, two_pi)?;
            let p = VorticityConfig::paper(f.seed.unwrap_or_else(|| derive_seed(cfg.seed, "fom")));
            let vc = VorticityConfig {
                re: f.re.unwrap_or(p.re),
                dt: f.dt.unwrap_or(p.dt),
                t_final: f.t_final.unwrap_or(p.t_final),
                snapshot_stride: f.snapshot_stride.unwrap_or(p.snapshot_stride),
                kp: f.kp.unwrap_or(p.kp),
                seed: p.seed,
                arakawa: f.arakawa.unwrap_or(p.arakawa),
                laplacian: f.laplacian.unwrap_or(p.laplacian),
            };
            vc.steps(&grid)?;
            Ok(FomSetup::Vorticity { grid, cfg: vc })
        }
    }
}

fn resolve_layout(cfg: &ExperimentConfig, fom: &FomSetup) -> Result<SensorLayout> {
    let o = &cfg.obs;
    let n = fom.n_nodes();
    match o.layout {
        LayoutName::Full => {
            if o.sensors.is_some() || o.spacing.is_some() || o.indices.is_some() {
                return Err(Error::Config("obs.sensors, obs.spacing and obs.indices need layout = \"sparse\"".into()));
            }
            Ok(SensorLayout::full(n))
        }
        LayoutName::Sparse => {
            if let Some(idx) = &o.indices {
                return SensorLayout::sparse(idx.clone(), n);
            }
            match fom {
                FomSetup::Burgers { grid, .. } => {
                    if o.spacing.is_some() {
                        return Err(Error::Config("obs.spacing applies to 2D lattices; use obs.sensors".into()));
                    }
                    let count = o.sensors.unwrap_or(8);
                    if count == 0 || count >= grid.n {
                        return Err(Error::Config(format!("obs.sensors must lie in 1..{}", grid.n)));
                    }
                    SensorLayout::uniform_1d(grid, count)
                }
                FomSetup::Vorticity { grid, .. } => {
                    if o.sensors.is_some() {
                        return Err(Error::Config("obs.sensors applies to 1D layouts; use obs.spacing".into()));
                    }
                    SensorLayout::lattice_2d(grid, o.spacing.unwrap_or(32))
                }
            }
        }
    }
}

fn resolve(cfg: &ExperimentConfig) -> Result<Resolved> {
    let fom = resolve_fom(cfg)?;
    let n_snap = fom.snapshot_count()?;
    let rom = &cfg.rom;
    if rom.r == 0 {
        return Err(Error::Config("rom.r must be at least 1".into()));
    }
    if rom.r > n_snap {
        return Err(Error::TooManyModes { requested: rom.r, available: n_snap });
    }
    let rom_dt = rom.dt.unwrap_or(match fom {
        FomSetup::Burgers { .. } => 0.01,
        FomSetup::Vorticity { cfg, .. } => cfg.dt,
    });
    if !(rom_dt > 0.0) {
        return Err(Error::Config(format!("rom.dt must be positive, got {rom_dt}")));
    }
    let rom_t = rom.t_final.unwrap_or(fom.t_final());
    if !(rom_t > 0.0) || rom_t > fom.t_final() * (1.0 + 1e-12) {
        return Err(Error::Config(format!("rom.t_final {rom_t} must lie in (0, {}]", fom.t_final())));
    }
    let rom_steps = steps_of(rom_t, rom_dt)
        .ok_or_else(|| Error::Config(format!("rom.t_final {rom_t} is not a multiple of rom.dt {rom_dt}")))?;
    let mut pod = PodOptions::default();
    if let Some(b) = rom.pod_budget {
        pod.direct_budget = b;
    }
    pod.method = rom.pod_method.map(|m| match m {
        PodMethodName::Direct => SvdMethod::Direct,
        PodMethodName::Snapshots => SvdMethod::Snapshots,
    });

    let layout = resolve_layout(cfg, &fom)?;
    let o = &cfg.obs;
    let strategy = o.strategy.unwrap_or(match o.layout {
        LayoutName::Full => Strategy::FullProjection,
        LayoutName::Sparse => Strategy::SparseReconstruction,
    });
    match (strategy, o.layout) {
        (Strategy::FullProjection, LayoutName::Sparse) => {
            return Err(Error::Config("strategy full_projection needs layout = \"full\"".into()))
        }
        (Strategy::SparsePinv | Strategy::SparseReconstruction, LayoutName::Full) => {
            return Err(Error::Config("sparse strategies need layout = \"sparse\"".into()))
        }
        _ => {}
    }
    if !(o.sigma >= 0.0) {
        return Err(Error::Config(format!("obs.sigma must be non-negative, got {}", o.sigma)));
    }
    let fom_interval = fom.snapshot_interval();
    let on_fom_grid = |t: f64| t.abs() <= 1e-12 || steps_of(t, fom_interval).is_some_and(|k| k >= 1 && k <= n_snap);
    let mut times = o.times.clone();
    times.sort_by(f64::total_cmp);
    if times.windows(2).any(|w| w[1] - w[0] <= 1e-12) {
        return Err(Error::Config("obs.times must be distinct".into()));
    }
    for &t in &times {
        if t < 0.0 || t > rom_t * (1.0 + 1e-12) {
            return Err(Error::Config(format!("observation time {t} outside [0, {rom_t}]")));
        }
        if steps_of(t, rom_dt).is_none() {
            return Err(Error::Config(format!("rom.dt {rom_dt} does not divide observation time {t}")));
        }
        if !on_fom_grid(t) {
            return Err(Error::Config(format!("observation time {t} is not a stored snapshot time")));
        }
    }
    if times.len() == 1 && times[0] == 0.0 && !cfg.fsm.include_initial_condition {
        return Err(Error::Config("observations only at t = 0 carry no information about the viscosity".into()));
    }

    let f = &cfg.fsm;
    let last_obs = times.last().copied().unwrap_or(0.0);
    let window = f.window.unwrap_or(last_obs);
    if window < last_obs * (1.0 - 1e-12) || window > rom_t * (1.0 + 1e-12) {
        return Err(Error::Config(format!("fsm.window {window} must cover the observations and end by {rom_t}")));
    }
    if !(f.tol > 0.0) || f.max_iter == 0 {
        return Err(Error::Config("fsm.tol must be positive and fsm.max_iter at least 1".into()));
    }

    let field_times = cfg.output.field_times.clone().unwrap_or_else(|| vec![rom_t]);
    for &t in &field_times {
        if t < 0.0 || t > rom_t * (1.0 + 1e-12) || steps_of(t, rom_dt).is_none() || !on_fom_grid(t) {
            return Err(Error::Config(format!("output field time {t} is not shared by the ROM and FOM time grids")));
        }
    }

    Ok(Resolved {
        problem: cfg.problem,
        fom,
        r: rom.r,
        rom_dt,
        rom_steps,
        pod,
        layout,
        obs_times: times,
        sigma: o.sigma,
        obs_seed: o.seed.unwrap_or_else(|| derive_seed(cfg.seed, "obs")),
        strategy,
        mode: match f.mode {
            ModeName::Global => ViscosityMode::Global,
            ModeName::PerMode => ViscosityMode::PerMode,
        },
        window,
        max_iter: f.max_iter,
        tol: f.tol,
        nu0: f.nu0,
        include_initial_condition: f.include_initial_condition,
        field_times,
        snapshots_csv: cfg.output.snapshots_csv,
        output_dir: cfg.output_dir.clone(),
        cache_dir: cfg.cache_dir(),
    })
}
