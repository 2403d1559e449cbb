use std::fmt::Write as _;

use crate::fsm::AssimilationResult;
use crate::grom::EddyViscosity;
use crate::snapshots::SnapshotSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Projection of the full-order fields onto the basis.
    Tp,
    /// Reduced model without closure.
    Grom,
    /// Reduced model with the estimated eddy viscosity.
    GromFsm,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Tp => "TP",
            Method::Grom => "GROM",
            Method::GromFsm => "GROM-FSM",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseSeries {
    pub method: Method,
    /// `(time, rmse)` on the times shared by the ROM and FOM grids.
    pub points: Vec<(f64, f64)>,
    /// Time of the first ROM step that was no longer finite.
    pub diverged_at: Option<f64>,
}

impl RmseSeries {
    pub fn at(&self, t: f64) -> Option<f64> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.points.iter().find(|(s, _)| (s - t).abs() <= tol).map(|p| p.1)
    }

    /// Mean RMSE over the stored times in `[t0, t1]`; infinite when the
    /// trajectory diverged before `t1`.
    pub fn time_mean(&self, t0: f64, t1: f64) -> f64 {
        if self.diverged_at.is_some_and(|t| t <= t1 * (1.0 + 1e-12)) {
            return f64::INFINITY;
        }
        let eps = 1e-9 * t1.abs().max(1.0);
        let vals: Vec<f64> = self.points.iter().filter(|(t, _)| *t >= t0 - eps && *t <= t1 + eps).map(|p| p.1).collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub series: Vec<RmseSeries>,
    /// `None` when no observations were configured.
    pub final_nu_e: Option<EddyViscosity>,
    pub iterations: usize,
    pub converged: Option<bool>,
    pub assimilation: Option<AssimilationResult>,
    pub ric: f64,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn series(&self, method: Method) -> Option<&RmseSeries> {
        self.series.iter().find(|s| s.method == method)
    }

    pub fn rmse_at(&self, method: Method, t: f64) -> Option<f64> {
        self.series(method)?.at(t)
    }

    pub fn time_mean(&self, method: Method, t0: f64, t1: f64) -> Option<f64> {
        Some(self.series(method)?.time_mean(t0, t1))
    }

    pub fn fsm_skipped(&self) -> bool {
        self.converged.is_none()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ric: {:.6}", self.ric);
        match (&self.final_nu_e, self.converged) {
            (Some(nu), Some(c)) => {
                let vals: Vec<String> = nu.values().iter().map(|v| format!("{v:.6e}")).collect();
                let _ = writeln!(s, "final nu_e: {}", vals.join(" "));
                let _ = writeln!(s, "iterations: {}", self.iterations);
                let _ = writeln!(s, "converged: {c}");
            }
            _ => {
                let _ = writeln!(s, "assimilation: skipped (no observation times)");
            }
        }
        for series in &self.series {
            let last = series.points.last().map(|p| format!("{:.6e} at t={}", p.1, p.0)).unwrap_or_else(|| "n/a".into());
            let div = series.diverged_at.map(|t| format!(" (diverged at t={t})")).unwrap_or_default();
            let _ = writeln!(s, "rmse {}: {last}{div}", series.method.label());
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

pub(crate) fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

/// `RMSE(t) = √(Σ_i (u_FOM − u_ROM)² / n)` at every stored time.
pub fn compute_rmse(rom_fields: &SnapshotSet, fom_fields: &SnapshotSet) -> Result<Vec<(f64, f64)>> {
    if rom_fields.grid != fom_fields.grid || rom_fields.n_nodes() != fom_fields.n_nodes() {
        return Err(Error::Dimension("ROM and FOM fields live on different grids".into()));
    }
    if rom_fields.len() != fom_fields.len() {
        return Err(Error::Dimension(format!("{} ROM times vs {} FOM times", rom_fields.len(), fom_fields.len())));
    }
    let mut out = Vec::with_capacity(rom_fields.len());
    for (k, (&tr, &tf)) in rom_fields.times.iter().zip(&fom_fields.times).enumerate() {
        if (tr - tf).abs() > 1e-9 * tf.abs().max(1.0) {
            return Err(Error::TimeNotFound(tr));
        }
        let diff = rom_fields.data.column(k) - fom_fields.data.column(k);
        out.push((tf, diff.norm() / (diff.len() as f64).sqrt()));
    }
    Ok(out)
}
