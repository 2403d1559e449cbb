use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{assemble_and_solve, SensitivityState, StepWorkspace};
use crate::grom::{EddyViscosity, GromModel};
use crate::observations::{ObservationOperator, ObservationSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViscosityMode {
    Global,
    PerMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssimilationConfig {
    /// End of the assimilation window `T_w`.
    pub window: f64,
    pub obs_times: Vec<f64>,
    /// Reduced-model time step.
    pub dt: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: ViscosityMode,
    /// Also correct the initial coefficients (joint control `[a⁰, ν]`).
    pub include_initial_condition: bool,
}

impl AssimilationConfig {
    pub fn new(window: f64, obs_times: Vec<f64>, dt: f64, mode: ViscosityMode) -> Self {
        Self { window, obs_times, dt, max_iter: 30, tol: 1e-6, mode, include_initial_condition: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.obs_times.is_empty() {
            return Err(Error::Config("no observation times".into()));
        }
        for &t in &self.obs_times {
            if t < 0.0 || t > self.window * (1.0 + 1e-12) {
                return Err(Error::Config(format!("observation time {t} outside the window [0, {}]", self.window)));
            }
            let steps = t / self.dt;
            if (steps - steps.round()).abs() > 1e-6 {
                return Err(Error::Config(format!("observation time {t} is not a multiple of dt = {}", self.dt)));
            }
        }
        Ok(())
    }

    fn step_of(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssimilationResult {
    pub nu_e: EddyViscosity,
    pub iterations: usize,
    /// `‖δν‖∞` per iteration (after any step halving).
    pub delta_history: Vec<f64>,
    /// `‖e_F‖₂` over all observation times, per iteration, before the update.
    pub forecast_error_norms: Vec<f64>,
    /// Eddy viscosity used in each iteration's forward run.
    pub nu_history: Vec<Vec<f64>>,
    pub converged: bool,
    /// An iteration's trajectory blew up even after halving the step.
    pub failed: bool,
    /// Iterations where the step was halved after a blow-up.
    pub halved: Vec<usize>,
    /// Corrected initial coefficients when the initial condition is a control.
    pub initial_condition: Option<DVector<f64>>,
}

impl AssimilationResult {
    /// Some converged viscosity is negative (reported unclamped).
    pub fn negative(&self) -> bool {
        self.nu_e.values().iter().any(|&v| v < 0.0)
    }

    fn fmt_values(v: &[f64]) -> String {
        v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" ")
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let mode = if self.nu_e.is_global() { "global" } else { "per_mode" };
        let _ = writeln!(s, "eddy viscosity mode: {mode}");
        let _ = writeln!(s, "iterations: {}", self.iterations);
        let _ = writeln!(s, "converged: {}", self.converged);
        if self.failed {
            let _ = writeln!(s, "failed: trajectory diverged");
        }
        if self.negative() {
            let _ = writeln!(s, "warning: negative eddy viscosity");
        }
        let _ = writeln!(s, "final nu_e: {}", Self::fmt_values(&self.nu_e.values()));
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>4}  {:>14}  {:>14}  nu_e", "iter", "|delta|_inf", "|e_F|_2");
        for k in 0..self.delta_history.len() {
            let halved = if self.halved.contains(&(k + 1)) { " (halved)" } else { "" };
            let _ = writeln!(
                s,
                "{:>4}  {:>14.6e}  {:>14.6e}  {}{halved}",
                k + 1,
                self.delta_history[k],
                self.forecast_error_norms[k],
                Self::fmt_values(&self.nu_history[k])
            );
        }
        s
    }

    /// `iter,delta_inf,forecast_error,nu_0,...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let p = self.nu_e.len();
        let cols: Vec<String> = (0..p).map(|k| format!("nu_{k}")).collect();
        writeln!(out, "iter,delta_inf,forecast_error,{}", cols.join(","))?;
        for k in 0..self.delta_history.len() {
            let nu: Vec<String> = self.nu_history[k].iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{},{:e},{:e},{}", k + 1, self.delta_history[k], self.forecast_error_norms[k], nu.join(","))?;
        }
        let nu: Vec<String> = self.nu_e.values().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "final,,,{}", nu.join(","))?;
        out.flush()?;
        Ok(())
    }
}

struct Linearisation {
    h: Vec<DMatrix<f64>>,
    e: Vec<DVector<f64>>,
    forecast_norm: f64,
}

/// Runs the forward model with sensitivities and collects `H_k = D(h) [U, V]`
/// and `e_k = z_k − h(a_k)` at each observation time. `None` on blow-up.
fn linearise(
    model: &GromModel,
    a0: &[f64],
    nu: &EddyViscosity,
    obs: &[(usize, DVector<f64>)],
    op: &ObservationOperator,
    cfg: &AssimilationConfig,
) -> Option<Linearisation> {
    let r = model.r;
    let p = nu.len();
    let dh = op.jacobian();
    let mut sens = SensitivityState::initial(r, p, cfg.include_initial_condition);
    let mut ws = StepWorkspace::new(r, p);
    let mut a = DVector::from_column_slice(a0);
    let last = obs.iter().map(|(s, _)| *s).max().unwrap_or(0);
    let mut lin = Linearisation { h: Vec::new(), e: Vec::new(), forecast_norm: 0.0 };
    let collect = |step: usize, a: &DVector<f64>, sens: &SensitivityState, lin: &mut Linearisation| {
        for (s, z) in obs {
            if *s != step {
                continue;
            }
            let e = z - op.apply(a);
            lin.forecast_norm += e.norm_squared();
            let h = match &sens.u {
                Some(u) => {
                    let mut joint = DMatrix::zeros(r, r + p);
                    joint.columns_mut(0, r).copy_from(u);
                    joint.columns_mut(r, p).copy_from(&sens.v);
                    &dh * joint
                }
                // V⁰ = 0 contributes a zero block
                None if step == 0 => continue,
                None => &dh * &sens.v,
            };
            lin.h.push(h);
            lin.e.push(e);
        }
    };
    collect(0, &a, &sens, &mut lin);
    for step in 1..=last {
        let next = ws.step(model, a.as_slice(), nu, cfg.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let d_a = ws.dm.columns(0, r);
        sens.v = d_a * &sens.v + ws.dm.columns(r, p);
        if let Some(u) = &sens.u {
            sens.u = Some(d_a * u);
        }
        a = next;
        collect(step, &a, &sens, &mut lin);
    }
    lin.forecast_norm = lin.forecast_norm.sqrt();
    Some(lin)
}

/// Iteratively corrects the eddy viscosity (and optionally the initial
/// coefficients) until `‖δν‖∞ ≤ tol`. Each iteration re-integrates the model
/// from scratch with the current estimate, stacks the forecast errors at the
/// observation times and applies the least-squares correction.
pub fn estimate_eddy_viscosity(
    model: &GromModel,
    a0: &[f64],
    obs: &ObservationSet,
    op: &ObservationOperator,
    cfg: &AssimilationConfig,
    nu0: &EddyViscosity,
) -> Result<AssimilationResult> {
    cfg.validate()?;
    nu0.check(model.r)?;
    if nu0.is_global() != (cfg.mode == ViscosityMode::Global) {
        return Err(Error::Config("initial eddy viscosity does not match the configured mode".into()));
    }
    if a0.len() != model.r || op.input_len() != model.r {
        return Err(Error::Dimension("initial state or observation operator does not match the model".into()));
    }
    if obs.space != op.space() || obs.values.nrows() != op.output_len() {
        return Err(Error::Config("observations do not match the observation operator".into()));
    }
    let mut scheduled = Vec::with_capacity(cfg.obs_times.len());
    for &t in &cfg.obs_times {
        let tol = 1e-9 * t.abs().max(1.0);
        let col = obs.times.iter().position(|&s| (s - t).abs() <= tol).ok_or(Error::TimeNotFound(t))?;
        scheduled.push((cfg.step_of(t), obs.column(col)));
    }

    let r = model.r;
    let p = nu0.len();
    let mut nu = nu0.clone();
    let mut x0 = DVector::from_column_slice(a0);
    let mut result = AssimilationResult {
        nu_e: nu.clone(),
        iterations: 0,
        delta_history: Vec::new(),
        forecast_error_norms: Vec::new(),
        nu_history: Vec::new(),
        converged: false,
        failed: false,
        halved: Vec::new(),
        initial_condition: None,
    };
    // last applied correction, kept so a blow-up can be retried at half step
    let mut last_step: Option<(DVector<f64>, Vec<f64>)> = None;

    for iter in 1..=cfg.max_iter {
        let lin = match linearise(model, x0.as_slice(), &nu, &scheduled, op, cfg) {
            Some(l) => l,
            None => {
                let retried = match last_step.take() {
                    Some((prev_x0, prev_nu)) => {
                        let half_nu: Vec<f64> = prev_nu.iter().zip(nu.values()).map(|(p, n)| 0.5 * (p + n)).collect();
                        let half_x0 = (&prev_x0 + &x0) * 0.5;
                        nu = nu.with_values(&half_nu);
                        x0 = half_x0;
                        result.halved.push(iter);
                        if let Some(d) = result.delta_history.last_mut() {
                            *d *= 0.5;
                        }
                        linearise(model, x0.as_slice(), &nu, &scheduled, op, cfg)
                    }
                    None => None,
                };
                match retried {
                    Some(l) => l,
                    None => {
                        result.failed = true;
                        break;
                    }
                }
            }
        };
        result.iterations = iter;
        result.nu_history.push(nu.values());
        result.forecast_error_norms.push(lin.forecast_norm);
        let delta = assemble_and_solve(&lin.h, &lin.e, obs.sigma)?;
        let (dx0, dnu) = if cfg.include_initial_condition {
            (Some(delta.rows(0, r).into_owned()), delta.rows(r, p).into_owned())
        } else {
            (None, delta)
        };
        let step_norm = dnu.amax();
        last_step = Some((x0.clone(), nu.values()));
        let updated: Vec<f64> = nu.values().iter().zip(dnu.iter()).map(|(v, d)| v + d).collect();
        nu = nu.with_values(&updated);
        if let Some(dx) = dx0 {
            x0 += dx;
        }
        result.delta_history.push(step_norm);
        if step_norm <= cfg.tol {
            result.converged = true;
            break;
        }
    }
    result.nu_e = nu;
    if cfg.include_initial_condition {
        result.initial_condition = Some(x0);
    }
    Ok(result)
}
