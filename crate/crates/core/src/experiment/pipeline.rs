use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use super::metrics::{rmse, Method, MetricsReport, RmseSeries};
use super::{ExperimentConfig, FomSetup, Resolved, Strategy};
use crate::burgers::run_fom_burgers;
use crate::container::sha256_hex;
use crate::fsm::{estimate_eddy_viscosity, AssimilationConfig, AssimilationResult, ViscosityMode};
use crate::grom::{build_grom_burgers, build_grom_vorticity, integrate_grom, EddyViscosity, GromModel, RomTrajectory};
use crate::observations::{
    build_reconstruction_operator, observed_coefficients_full, observed_coefficients_sparse_pinv, synthesize_observations,
    ObservationOperator, ObservationSet,
};
use crate::pod::{build_pod_with, companion_streamfunction_basis, ric, PodBasis};
use crate::snapshots::SnapshotSet;
use crate::vorticity::run_fom_vorticity;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Fom,
    Pod,
    Grom,
    Assimilate,
    Metrics,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Fom => "fom",
            Stage::Pod => "pod",
            Stage::Grom => "grom",
            Stage::Assimilate => "assimilate",
            Stage::Metrics => "metrics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRecord {
    pub stage: Stage,
    /// The result was loaded from the cache instead of recomputed.
    pub cached: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub resolved: Resolved,
    pub stages: Vec<StageRecord>,
    pub assimilation: Option<AssimilationResult>,
    /// Present when the pipeline ran through the metrics stage.
    pub report: Option<MetricsReport>,
    /// `(path, sha256)` of every artifact, in manifest order.
    pub manifest: Vec<(PathBuf, String)>,
}

impl PipelineOutcome {
    /// Recomputed (not loaded from cache).
    pub fn executed(&self, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.stage == stage && !s.cached)
    }

    /// 0 success, 3 assimilation blew up, 4 assimilation did not converge.
    pub fn exit_code(&self) -> i32 {
        match &self.assimilation {
            Some(a) if a.failed => 3,
            Some(a) if !a.converged => 4,
            _ => 0,
        }
    }
}

/// Full pipeline through the metrics stage.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    let out = run_pipeline(config, Stage::Metrics)?;
    Ok(out.report.expect("metrics stage ran"))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a temporary sibling and renames, so concurrent runs sharing
/// a cache never observe half-written files.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp{}-{n}", std::process::id()));
    write(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

struct Artifacts {
    dir: PathBuf,
    entries: Vec<(PathBuf, String)>,
}

impl Artifacts {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, path: PathBuf) -> Result<()> {
        let h = hash_file(&path)?;
        self.entries.push((path, h));
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, body)?;
        self.record(p)
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let p = self.path(name);
        let mut out = std::io::BufWriter::new(std::fs::File::create(&p)?);
        write(&mut out)?;
        out.flush()?;
        drop(out);
        self.record(p)
    }

    fn write_manifest(&mut self, config_hash: &str) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# sha256  artifact");
        let _ = writeln!(s, "{config_hash}  config");
        for (p, h) in &self.entries {
            let shown = p.strip_prefix(&self.dir).unwrap_or(p);
            let _ = writeln!(s, "{h}  {}", shown.display());
        }
        std::fs::write(self.dir.join("manifest.txt"), s)?;
        Ok(())
    }
}

fn load_or_run_fom(res: &Resolved) -> Result<(SnapshotSet, PathBuf, bool)> {
    let path = res.cache_dir.join(format!("fom-{}.bin", res.fom.hash()));
    if let Ok(s) = SnapshotSet::read(&path) {
        return Ok((s, path, true));
    }
    let snaps = match &res.fom {
        FomSetup::Burgers { grid, cfg } => run_fom_burgers(cfg, grid)?,
        FomSetup::Vorticity { grid, cfg } => run_fom_vorticity(cfg, grid)?,
    };
    write_atomic(&path, |tmp| snaps.write(tmp))?;
    Ok((snaps, path, false))
}

fn load_or_build_pod(res: &Resolved, snaps: &SnapshotSet) -> Result<(PodBasis, PathBuf, bool)> {
    let path = res.cache_dir.join(format!("pod-{}.bin", res.pod_hash()));
    if let Ok(b) = PodBasis::read(&path) {
        if b.r == res.r && b.n() == snaps.n_nodes() {
            return Ok((b, path, true));
        }
    }
    let mut basis = build_pod_with(snaps, res.r, res.pod)?;
    if let FomSetup::Vorticity { grid, .. } = &res.fom {
        basis = companion_streamfunction_basis(&basis, grid)?;
    }
    write_atomic(&path, |tmp| basis.write(tmp))?;
    Ok((basis, path, false))
}

fn build_model(res: &Resolved, basis: &PodBasis) -> Result<GromModel> {
    match &res.fom {
        FomSetup::Burgers { grid, cfg } => build_grom_burgers(basis, grid, cfg),
        FomSetup::Vorticity { grid, cfg } => build_grom_vorticity(basis, grid, cfg),
    }
}

/// ROM step index and FOM field of every time present on both grids.
fn shared_times(res: &Resolved, snaps: &SnapshotSet) -> Vec<(usize, f64)> {
    (0..=res.rom_steps)
        .filter_map(|k| {
            let t = k as f64 * res.rom_dt;
            snaps.field_at(t).ok().map(|_| (k, t))
        })
        .collect()
}

fn fmt_row(t: f64, v: impl Iterator<Item = f64>) -> String {
    let mut s = format!("{t}");
    for x in v {
        let _ = write!(s, ",{x:e}");
    }
    s
}

fn write_trajectory(out: &mut dyn Write, r: usize, rows: &[(f64, DVector<f64>)]) -> std::io::Result<()> {
    let cols: Vec<String> = (1..=r).map(|k| format!("a_{k}")).collect();
    writeln!(out, "time,{}", cols.join(","))?;
    for (t, a) in rows {
        writeln!(out, "{}", fmt_row(*t, a.iter().copied()))?;
    }
    Ok(())
}

fn trajectory_rows(traj: &RomTrajectory) -> Vec<(f64, DVector<f64>)> {
    (0..traj.coefficients.nrows()).map(|i| (traj.times[i], traj.state(i))).collect()
}

fn rom_series(
    method: Method,
    traj: &RomTrajectory,
    basis: &PodBasis,
    snaps: &SnapshotSet,
    shared: &[(usize, f64)],
) -> Result<RmseSeries> {
    let mut points = Vec::new();
    for &(k, t) in shared {
        if k >= traj.coefficients.nrows() {
            break;
        }
        let u = basis.reconstruct(traj.state(k).as_slice())?;
        let truth = snaps.field_at(t)?;
        points.push((t, rmse(u.as_slice(), truth.as_slice())));
    }
    Ok(RmseSeries { method, points, diverged_at: traj.diverged_at.map(|s| s as f64 * traj.dt) })
}

fn prepare_observations(res: &Resolved, snaps: &SnapshotSet, basis: &PodBasis) -> Result<(ObservationSet, ObservationSet, ObservationOperator)> {
    let raw = synthesize_observations(snaps, &res.layout, &res.obs_times, res.sigma, res.obs_seed)?;
    let (obs, op) = match res.strategy {
        Strategy::FullProjection => (observed_coefficients_full(&raw, basis)?, ObservationOperator::IdentityOnCoefficients { r: res.r }),
        Strategy::SparsePinv => (
            observed_coefficients_sparse_pinv(&raw, basis, &res.layout)?,
            ObservationOperator::IdentityOnCoefficients { r: res.r },
        ),
        Strategy::SparseReconstruction => (raw.clone(), build_reconstruction_operator(basis, &res.layout)),
    };
    Ok((raw, obs, op))
}

fn initial_viscosity(res: &Resolved) -> EddyViscosity {
    match res.mode {
        ViscosityMode::Global => EddyViscosity::Global(res.nu0),
        ViscosityMode::PerMode => EddyViscosity::PerMode(vec![res.nu0; res.r]),
    }
}

/// Runs the stages up to and including `until`, writing each stage's outputs
/// to the output directory as it completes.
pub fn run_pipeline(config: &ExperimentConfig, until: Stage) -> Result<PipelineOutcome> {
    let res = config.resolve()?;
    std::fs::create_dir_all(&res.output_dir)?;
    std::fs::create_dir_all(&res.cache_dir)?;
    let config_hash = sha256_hex(format!("experiment-v1 {res:?}").as_bytes());
    let mut art = Artifacts { dir: res.output_dir.clone(), entries: Vec::new() };
    let mut stages = Vec::new();
    let outcome = |res: Resolved, stages, assimilation, report, mut art: Artifacts| -> Result<PipelineOutcome> {
        art.write_manifest(&config_hash)?;
        Ok(PipelineOutcome { resolved: res, stages, assimilation, report, manifest: art.entries })
    };

    // full-order model
    let (snaps, fom_path, cached) = load_or_run_fom(&res).map_err(|e| e.in_stage("fom"))?;
    stages.push(StageRecord { stage: Stage::Fom, cached });
    art.record(fom_path)?;
    if res.snapshots_csv {
        let p = art.path("snapshots.csv");
        snaps.write_csv(&p)?;
        art.record(p)?;
    }
    if until == Stage::Fom {
        return outcome(res, stages, None, None, art);
    }

    // basis
    let (basis, pod_path, cached) = load_or_build_pod(&res, &snaps).map_err(|e| e.in_stage("pod"))?;
    stages.push(StageRecord { stage: Stage::Pod, cached });
    art.record(pod_path)?;
    let ric_r = ric(&basis, res.r)?;
    art.csv("singular_values.csv", |out| {
        writeln!(out, "k,sigma,ric")?;
        let total: f64 = basis.singular_values.iter().map(|s| s * s).sum();
        let mut acc = 0.0;
        for (k, s) in basis.singular_values.iter().enumerate() {
            acc += s * s;
            let frac = if total > 0.0 { acc / total } else { 1.0 };
            writeln!(out, "{},{s:e},{frac:e}", k + 1)?;
        }
        Ok(())
    })?;
    if until == Stage::Pod {
        return outcome(res, stages, None, None, art);
    }

    // reduced model, true projection and the unclosed trajectory
    let model = build_model(&res, &basis).map_err(|e| e.in_stage("grom"))?;
    let grom_path = art.path("grom.bin");
    model.write(&grom_path)?;
    art.record(grom_path)?;
    stages.push(StageRecord { stage: Stage::Grom, cached: false });
    let shared = shared_times(&res, &snaps);
    let initial = snaps.field_at(0.0).map_err(|e| e.in_stage("grom"))?;
    let a0 = basis.project(initial.as_slice())?;
    let mut tp_rows = Vec::with_capacity(shared.len());
    for &(_, t) in &shared {
        tp_rows.push((t, basis.project(snaps.field_at(t)?.as_slice())?));
    }
    let unclosed = integrate_grom(&model, a0.as_slice(), &initial_viscosity(&res).zeros_like(), res.rom_dt, res.rom_steps)
        .map_err(|e| e.in_stage("grom"))?;
    art.csv("trajectory_tp.csv", |out| write_trajectory(out, res.r, &tp_rows))?;
    art.csv("trajectory_grom.csv", |out| write_trajectory(out, res.r, &trajectory_rows(&unclosed)))?;
    if until == Stage::Grom {
        return outcome(res, stages, None, None, art);
    }

    // assimilation
    let mut warnings = Vec::new();
    let assimilation = if res.obs_times.is_empty() {
        None
    } else {
        let (raw, obs, op) = prepare_observations(&res, &snaps, &basis).map_err(|e| e.in_stage("assimilate"))?;
        let acfg = AssimilationConfig {
            window: res.window,
            obs_times: res.obs_times.clone(),
            dt: res.rom_dt,
            max_iter: res.max_iter,
            tol: res.tol,
            mode: res.mode,
            include_initial_condition: res.include_initial_condition,
        };
        let result = estimate_eddy_viscosity(&model, a0.as_slice(), &obs, &op, &acfg, &initial_viscosity(&res))
            .map_err(|e| e.in_stage("assimilate"))?;
        let p = art.path("observations.csv");
        raw.write_csv(&p)?;
        art.record(p)?;
        let mut text = result.report();
        if let Some(c) = obs.diagnostics.condition_number {
            let _ = writeln!(text, "\nsampled basis condition number: {c:.6e}");
        }
        if obs.diagnostics.ill_conditioned {
            warnings.push("sampled basis is ill-conditioned".to_string());
            let _ = writeln!(text, "warning: sampled basis is ill-conditioned");
        }
        if result.negative() {
            warnings.push("negative eddy viscosity".to_string());
        }
        if !result.converged {
            warnings.push(format!("assimilation did not converge in {} iterations", result.iterations));
        }
        art.text("assimilation_report.txt", &text)?;
        let p = art.path("assimilation.csv");
        result.write_csv(&p)?;
        art.record(p)?;
        stages.push(StageRecord { stage: Stage::Assimilate, cached: false });
        Some(result)
    };
    if until == Stage::Assimilate {
        return outcome(res, stages, assimilation, None, art);
    }

    // closed trajectory and metrics
    let closed = match &assimilation {
        Some(a) => {
            let start = a.initial_condition.clone().unwrap_or_else(|| a0.clone());
            Some(integrate_grom(&model, start.as_slice(), &a.nu_e, res.rom_dt, res.rom_steps).map_err(|e| e.in_stage("metrics"))?)
        }
        None => None,
    };
    if unclosed.diverged() {
        warnings.push("unclosed GROM trajectory diverged".to_string());
    }
    if closed.as_ref().is_some_and(|c| c.diverged()) {
        warnings.push("GROM-FSM trajectory diverged".to_string());
    }
    let tp_series = RmseSeries {
        method: Method::Tp,
        points: tp_rows
            .iter()
            .map(|(t, a)| Ok((*t, rmse(basis.reconstruct(a.as_slice())?.as_slice(), snaps.field_at(*t)?.as_slice()))))
            .collect::<Result<_>>()?,
        diverged_at: None,
    };
    let mut series = vec![tp_series, rom_series(Method::Grom, &unclosed, &basis, &snaps, &shared)?];
    if let Some(c) = &closed {
        art.csv("trajectory_grom_fsm.csv", |out| write_trajectory(out, res.r, &trajectory_rows(c)))?;
        series.push(rom_series(Method::GromFsm, c, &basis, &snaps, &shared)?);
    }
    art.csv("rmse.csv", |out| {
        let labels: Vec<&str> = series.iter().map(|s| s.method.label()).collect();
        writeln!(out, "time,{}", labels.join(","))?;
        for &(_, t) in &shared {
            let mut line = format!("{t}");
            for s in &series {
                match s.at(t) {
                    Some(v) => write!(line, ",{v:e}").unwrap(),
                    None => line.push(','),
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    })?;
    for &t in &res.field_times {
        write_fields(&mut art, &res, &basis, &snaps, t, &tp_rows, &unclosed, closed.as_ref())?;
    }
    stages.push(StageRecord { stage: Stage::Metrics, cached: false });
    let report = MetricsReport {
        series,
        final_nu_e: assimilation.as_ref().map(|a| a.nu_e.clone()),
        iterations: assimilation.as_ref().map_or(0, |a| a.iterations),
        converged: assimilation.as_ref().map(|a| a.converged),
        assimilation: assimilation.clone(),
        ric: ric_r,
        warnings,
    };
    art.text("summary.txt", &report.summary())?;
    outcome(res, stages, assimilation, Some(report), art)
}

#[allow(clippy::too_many_arguments)]
fn write_fields(
    art: &mut Artifacts,
    res: &Resolved,
    basis: &PodBasis,
    snaps: &SnapshotSet,
    t: f64,
    tp_rows: &[(f64, DVector<f64>)],
    unclosed: &RomTrajectory,
    closed: Option<&RomTrajectory>,
) -> Result<()> {
    let k = (t / res.rom_dt).round() as usize;
    let truth = snaps.field_at(t)?;
    let tol = 1e-9 * t.abs().max(1.0);
    let tp = tp_rows.iter().find(|(s, _)| (s - t).abs() <= tol).map(|(_, a)| a).ok_or(Error::TimeNotFound(t))?;
    let reconstruct = |traj: &RomTrajectory| -> Result<Option<DVector<f64>>> {
        (k < traj.coefficients.nrows()).then(|| basis.reconstruct(traj.state(k).as_slice())).transpose()
    };
    let mut columns: Vec<(&str, Option<DVector<f64>>)> =
        vec![("fom", Some(truth)), ("tp", Some(basis.reconstruct(tp.as_slice())?)), ("grom", reconstruct(unclosed)?)];
    if let Some(c) = closed {
        columns.push(("grom_fsm", reconstruct(c)?));
    }
    let n = basis.n();
    let coords: DMatrix<f64> = match &res.fom {
        FomSetup::Burgers { grid, .. } => DMatrix::from_fn(n, 1, |i, _| grid.x(i)),
        FomSetup::Vorticity { grid, .. } => DMatrix::from_fn(n, 2, |i, c| {
            let (x, y) = grid.coords(i);
            if c == 0 { x } else { y }
        }),
    };
    art.csv(&format!("field_t{t}.csv"), |out| {
        let coord_names = if coords.ncols() == 1 { "x" } else { "x,y" };
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        writeln!(out, "{coord_names},{}", names.join(","))?;
        for i in 0..n {
            let mut line = coords.row(i).iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
            for (_, col) in &columns {
                match col {
                    Some(v) => write!(line, ",{:e}", v[i]).unwrap(),
                    None => line.push(','),
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    })
}
