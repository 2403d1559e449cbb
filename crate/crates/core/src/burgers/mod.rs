//! Full-order solver for the viscous Burgers equation
//! `u_t = -u u_x + u_xx / Re` on `[0, L]` with homogeneous Dirichlet
//! boundaries, started from a square wave.

pub mod compact;

use nalgebra::{DMatrix, DVector};

pub use compact::{BoundaryClosure, CompactDerivative};

use crate::snapshots::{GridMeta, SnapshotSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub n: usize,
    pub length: f64,
}

impl Grid1D {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 nodes, got {n}")));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidGrid(format!("domain length must be positive, got {length}")));
        }
        Ok(Self { n, length })
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field1D {
    pub values: Vec<f64>,
    pub time: f64,
}

/// Number of whole steps needed to reach `t_final` with step `dt`, checked
/// against the stride between stored snapshots.
pub(crate) fn step_count(dt: f64, t_final: f64, stride: usize) -> Result<usize> {
    if !(dt > 0.0) || !(t_final > 0.0) {
        return Err(Error::Config(format!("dt and t_final must be positive (dt={dt}, t_final={t_final})")));
    }
    if stride == 0 {
        return Err(Error::Config("snapshot_stride must be positive".into()));
    }
    let steps = (t_final / dt).round() as usize;
    if steps == 0 || (steps as f64 * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::Config(format!("t_final={t_final} is not a whole number of steps of dt={dt}")));
    }
    if steps % stride != 0 {
        return Err(Error::Config(format!("snapshot_stride {stride} does not divide the step count {steps}")));
    }
    Ok(steps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersConfig {
    pub re: f64,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_stride: usize,
    pub closure: BoundaryClosure,
    /// Weight `w` of the advective form in `w u u_x + (1 - w) (u²/2)_x`.
    /// `1/2` averages the two forms; `1/3` is the energy-conserving split.
    pub advective_weight: f64,
}

impl BurgersConfig {
    /// Re = 1e4, dt = 1e-4, t in [0, 1], a snapshot every 100 steps.
    pub fn paper() -> Self {
        Self {
            re: 1.0e4,
            dt: 1.0e-4,
            t_final: 1.0,
            snapshot_stride: 100,
            closure: BoundaryClosure::default(),
            advective_weight: 0.5,
        }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.re > 0.0) {
            return Err(Error::Config(format!("Reynolds number must be positive, got {}", self.re)));
        }
        step_count(self.dt, self.t_final, self.snapshot_stride)
    }
}

/// `u = 1` on `(0, L/2]`, `0` elsewhere; `u(0) = 0` honours the boundary
/// condition.
pub fn initial_square_wave(grid: &Grid1D) -> Field1D {
    let half = 0.5 * grid.length;
    let values = (0..grid.n)
        .map(|i| {
            let x = grid.x(i);
            // tolerate rounding of i*dx at the node that sits on L/2
            if i > 0 && x <= half * (1.0 + 1e-12) { 1.0 } else { 0.0 }
        })
        .collect();
    Field1D { values, time: 0.0 }
}

/// Precomputed derivative operators for one grid.
#[derive(Debug, Clone)]
pub struct BurgersOperators {
    pub grid: Grid1D,
    pub d1: CompactDerivative,
    pub d2: CompactDerivative,
}

impl BurgersOperators {
    pub fn new(grid: &Grid1D, closure: BoundaryClosure) -> Result<Self> {
        Ok(Self {
            grid: *grid,
            d1: CompactDerivative::first(grid.n, grid.dx(), closure)?,
            d2: CompactDerivative::second(grid.n, grid.dx(), closure)?,
        })
    }
}

pub fn compact_first_derivative(f: &Field1D, grid: &Grid1D) -> Result<Vec<f64>> {
    check_len(f, grid)?;
    Ok(CompactDerivative::first(grid.n, grid.dx(), BoundaryClosure::default())?.apply(&f.values))
}

pub fn compact_second_derivative(f: &Field1D, grid: &Grid1D) -> Result<Vec<f64>> {
    check_len(f, grid)?;
    Ok(CompactDerivative::second(grid.n, grid.dx(), BoundaryClosure::default())?.apply(&f.values))
}

fn check_len(f: &Field1D, grid: &Grid1D) -> Result<()> {
    if f.values.len() != grid.n {
        return Err(Error::Dimension(format!("field has {} values, grid has {} nodes", f.values.len(), grid.n)));
    }
    Ok(())
}

/// Scratch buffers reused across right-hand-side evaluations.
struct Workspace {
    ux: Vec<f64>,
    sq: Vec<f64>,
    sqx: Vec<f64>,
    uxx: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self { ux: vec![0.0; n], sq: vec![0.0; n], sqx: vec![0.0; n], uxx: vec![0.0; n] }
    }
}

fn rhs_into(u: &[f64], ops: &BurgersOperators, cfg: &BurgersConfig, ws: &mut Workspace, out: &mut [f64]) {
    let n = u.len();
    let w = cfg.advective_weight;
    ops.d1.apply_into(u, &mut ws.ux);
    for (s, v) in ws.sq.iter_mut().zip(u) {
        *s = 0.5 * v * v;
    }
    ops.d1.apply_into(&ws.sq, &mut ws.sqx);
    ops.d2.apply_into(u, &mut ws.uxx);
    let nu = 1.0 / cfg.re;
    for i in 1..n - 1 {
        out[i] = -(w * u[i] * ws.ux[i] + (1.0 - w) * ws.sqx[i]) + nu * ws.uxx[i];
    }
    out[0] = 0.0;
    out[n - 1] = 0.0;
}

/// Semi-discrete right-hand side with the split nonlinear term; boundary rows
/// are zero.
pub fn burgers_rhs(f: &Field1D, cfg: &BurgersConfig, ops: &BurgersOperators) -> Result<Vec<f64>> {
    check_len(f, &ops.grid)?;
    let n = ops.grid.n;
    let mut ws = Workspace::new(n);
    let mut out = vec![0.0; n];
    rhs_into(&f.values, ops, cfg, &mut ws, &mut out);
    Ok(out)
}

/// Integrates from the square wave with classical RK4, storing a snapshot
/// every `snapshot_stride` steps. The initial state is kept in
/// [`SnapshotSet::initial`] and is not part of the snapshot matrix.
pub fn run_fom_burgers(cfg: &BurgersConfig, grid: &Grid1D) -> Result<SnapshotSet> {
    let ops = BurgersOperators::new(grid, cfg.closure)?;
    let u0 = initial_square_wave(grid);
    run_from(cfg, &ops, u0.values)
}

fn run_from(cfg: &BurgersConfig, ops: &BurgersOperators, mut u: Vec<f64>) -> Result<SnapshotSet> {
    let steps = cfg.steps()?;
    let n = ops.grid.n;
    let stored = steps / cfg.snapshot_stride;
    let initial = DVector::from_vec(u.clone());
    let mut data = DMatrix::zeros(n, stored);
    let mut times = Vec::with_capacity(stored);

    let mut ws = Workspace::new(n);
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let dt = cfg.dt;
    let dirichlet = |v: &mut [f64]| {
        v[0] = 0.0;
        v[n - 1] = 0.0;
    };

    for step in 1..=steps {
        rhs_into(&u, ops, cfg, &mut ws, &mut k1);
        for i in 0..n {
            stage[i] = u[i] + 0.5 * dt * k1[i];
        }
        dirichlet(&mut stage);
        rhs_into(&stage, ops, cfg, &mut ws, &mut k2);
        for i in 0..n {
            stage[i] = u[i] + 0.5 * dt * k2[i];
        }
        dirichlet(&mut stage);
        rhs_into(&stage, ops, cfg, &mut ws, &mut k3);
        for i in 0..n {
            stage[i] = u[i] + dt * k3[i];
        }
        dirichlet(&mut stage);
        rhs_into(&stage, ops, cfg, &mut ws, &mut k4);
        for i in 0..n {
            u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        dirichlet(&mut u);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step });
        }
        if step % cfg.snapshot_stride == 0 {
            let col = step / cfg.snapshot_stride - 1;
            data.column_mut(col).copy_from_slice(&u);
            times.push(step as f64 * dt);
        }
    }
    let mut set = SnapshotSet::new(data, times, GridMeta::OneD(ops.grid))?;
    set.initial = Some(initial);
    Ok(set)
}

/// Trapezoidal integral of a nodal field.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    dx * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}
