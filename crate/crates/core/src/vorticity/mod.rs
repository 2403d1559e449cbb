//! Full-order solver for 2D decaying turbulence in vorticity–streamfunction
//! form, `ω_t = -J(ω, ψ) + ∇²ω / Re`, `∇²ψ = -ω`, on a doubly periodic box.

pub mod arakawa;
pub mod init;
pub mod spectral;

use nalgebra::{DMatrix, DVector};

pub use arakawa::ArakawaOrder;
pub use spectral::Spectral2D;

use crate::burgers::step_count;
use crate::snapshots::{GridMeta, SnapshotSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if !nx.is_power_of_two() || !ny.is_power_of_two() || nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!("grid dims must be powers of two ≥ 4, got {nx}×{ny}")));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::InvalidGrid(format!("box lengths must be positive, got {lx}×{ly}")));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// `nx × nx` nodes on `[0, 2π)²`.
    pub fn square(nx: usize) -> Result<Self> {
        let l = 2.0 * std::f64::consts::PI;
        Self::new(nx, nx, l, l)
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened row-major index of node `(i, j)` with periodic wrap.
    pub fn index(&self, i: isize, j: isize) -> usize {
        (i.rem_euclid(self.nx as isize) as usize) * self.ny + j.rem_euclid(self.ny as isize) as usize
    }

    pub fn coords(&self, idx: usize) -> (f64, f64) {
        ((idx / self.ny) as f64 * self.dx(), (idx % self.ny) as f64 * self.dy())
    }

    /// Samples `f(x, y)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| {
            let (x, y) = self.coords(k);
            f(x, y)
        }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    /// Row-major `nx × ny`.
    pub values: Vec<f64>,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    #[default]
    Spectral,
    FivePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VorticityConfig {
    pub re: f64,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_stride: usize,
    pub kp: f64,
    pub seed: u64,
    pub arakawa: ArakawaOrder,
    pub laplacian: LaplacianKind,
}

impl VorticityConfig {
    /// dt = 1e-3 over t in [0, 4], 800 snapshots, k_p = 10, Re = 4000.
    pub fn paper(seed: u64) -> Self {
        Self {
            re: 4000.0,
            dt: 1.0e-3,
            t_final: 4.0,
            snapshot_stride: 5,
            kp: 10.0,
            seed,
            arakawa: ArakawaOrder::default(),
            laplacian: LaplacianKind::default(),
        }
    }

    pub fn steps(&self, grid: &Grid2D) -> Result<usize> {
        if !(self.re > 0.0) {
            return Err(Error::Config(format!("Reynolds number must be positive, got {}", self.re)));
        }
        if !(self.kp > 0.0) || self.kp >= (grid.nx.min(grid.ny) as f64) / 2.0 {
            return Err(Error::Config(format!("peak wavenumber {} must lie in (0, {})", self.kp, grid.nx.min(grid.ny) / 2)));
        }
        step_count(self.dt, self.t_final, self.snapshot_stride)
    }
}

pub fn initial_spectrum_vorticity(grid: &Grid2D, cfg: &VorticityConfig) -> Field2D {
    init::initial_vorticity(grid, cfg.kp, cfg.seed)
}

pub fn arakawa_jacobian(w: &Field2D, s: &Field2D, grid: &Grid2D, order: ArakawaOrder) -> Result<Field2D> {
    check(w, grid)?;
    check(s, grid)?;
    Ok(Field2D { values: arakawa::arakawa(&w.values, &s.values, grid, order), time: w.time })
}

pub fn poisson_solve_periodic(w: &Field2D, grid: &Grid2D) -> Result<Field2D> {
    check(w, grid)?;
    Ok(Field2D { values: Spectral2D::new(grid).poisson(&w.values)?, time: w.time })
}

fn check(f: &Field2D, grid: &Grid2D) -> Result<()> {
    if f.values.len() != grid.len() {
        return Err(Error::Dimension(format!("field has {} values, grid has {}", f.values.len(), grid.len())));
    }
    Ok(())
}

/// Operators for one grid and discretisation choice, shared by the solver and
/// by the Galerkin projection.
#[derive(Debug, Clone)]
pub struct VorticityOperators {
    pub grid: Grid2D,
    pub spectral: Spectral2D,
    pub arakawa: ArakawaOrder,
    pub laplacian: LaplacianKind,
}

impl VorticityOperators {
    pub fn new(grid: &Grid2D, arakawa: ArakawaOrder, laplacian: LaplacianKind) -> Self {
        Self { grid: *grid, spectral: Spectral2D::new(grid), arakawa, laplacian }
    }

    pub fn jacobian(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        arakawa::arakawa(a, b, &self.grid, self.arakawa)
    }

    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        match self.laplacian {
            LaplacianKind::Spectral => self.spectral.laplacian(f),
            LaplacianKind::FivePoint => spectral::five_point_laplacian(f, &self.grid),
        }
    }

    pub fn streamfunction(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.spectral.poisson(w)
    }

    /// Returns `(rhs, ψ)`.
    pub fn rhs(&self, w: &[f64], re: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        spectral::check_zero_mean(w)?;
        let w_hat = self.spectral.forward(w);
        let psi = self.spectral.poisson_from_spectrum(&w_hat);
        let lap = match self.laplacian {
            LaplacianKind::Spectral => self.spectral.laplacian_from_spectrum(&w_hat),
            LaplacianKind::FivePoint => spectral::five_point_laplacian(w, &self.grid),
        };
        let jac = self.jacobian(w, &psi);
        let nu = 1.0 / re;
        let rhs = jac.iter().zip(&lap).map(|(j, l)| -j + nu * l).collect();
        Ok((rhs, psi))
    }
}

pub fn vorticity_rhs(w: &Field2D, cfg: &VorticityConfig, grid: &Grid2D) -> Result<Field2D> {
    check(w, grid)?;
    let ops = VorticityOperators::new(grid, cfg.arakawa, cfg.laplacian);
    Ok(Field2D { values: ops.rhs(&w.values, cfg.re)?.0, time: w.time })
}

/// Discrete kinetic energy `½ <ψ, ω> / (nx ny)` (mean over the box).
pub fn kinetic_energy(w: &[f64], psi: &[f64]) -> f64 {
    0.5 * w.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>() / w.len() as f64
}

pub fn run_fom_vorticity(cfg: &VorticityConfig, grid: &Grid2D) -> Result<SnapshotSet> {
    let w0 = initial_spectrum_vorticity(grid, cfg);
    run_vorticity_from(cfg, grid, w0.values)
}

pub fn run_vorticity_from(cfg: &VorticityConfig, grid: &Grid2D, mut w: Vec<f64>) -> Result<SnapshotSet> {
    let steps = cfg.steps(grid)?;
    let ops = VorticityOperators::new(grid, cfg.arakawa, cfg.laplacian);
    let n = grid.len();
    let stored = steps / cfg.snapshot_stride;
    let initial = DVector::from_vec(w.clone());
    let mut data = DMatrix::zeros(n, stored);
    let mut times = Vec::with_capacity(stored);
    let dt = cfg.dt;
    let mut stage = vec![0.0; n];
    let rhs = |v: &[f64]| ops.rhs(v, cfg.re).map(|(r, _)| r);
    for step in 1..=steps {
        let k1 = rhs(&w)?;
        for i in 0..n {
            stage[i] = w[i] + 0.5 * dt * k1[i];
        }
        let k2 = rhs(&stage)?;
        for i in 0..n {
            stage[i] = w[i] + 0.5 * dt * k2[i];
        }
        let k3 = rhs(&stage)?;
        for i in 0..n {
            stage[i] = w[i] + dt * k3[i];
        }
        let k4 = rhs(&stage)?;
        for i in 0..n {
            w[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step });
        }
        if step % cfg.snapshot_stride == 0 {
            data.column_mut(step / cfg.snapshot_stride - 1).copy_from_slice(&w);
            times.push(step as f64 * dt);
        }
    }
    let mut set = SnapshotSet::new(data, times, GridMeta::TwoD(*grid))?;
    set.initial = Some(initial);
    Ok(set)
}
