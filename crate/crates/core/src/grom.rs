//! Galerkin reduced order models in tensor form,
//!
//! ```text
//! da_k/dt = B_k + ν_k B̂_k + Σ_i (L_ik + ν_k L̂_ik) a_i + Σ_ij N_ijk a_i a_j
//! ```
//!
//! where `ν_k` is the eddy viscosity acting on mode `k`. The closure operators
//! `B̂, L̂` are kept apart from `B, L` so the eddy viscosity can change without
//! rebuilding anything.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::burgers::{BurgersConfig, BurgersOperators, Grid1D};
use crate::container::{ArtifactKind, Container, Header};
use crate::pod::PodBasis;
use crate::vorticity::{Grid2D, VorticityConfig, VorticityOperators};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum EddyViscosity {
    Global(f64),
    PerMode(Vec<f64>),
}

impl EddyViscosity {
    /// Number of free parameters.
    pub fn len(&self) -> usize {
        match self {
            Self::Global(_) => 1,
            Self::PerMode(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_global(&self) -> bool {
        matches!(self, Self::Global(_))
    }

    /// Viscosity acting on mode `k`.
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Self::Global(v) => *v,
            Self::PerMode(v) => v[k],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Global(v) => vec![*v],
            Self::PerMode(v) => v.clone(),
        }
    }

    /// Same mode, new parameter values.
    pub fn with_values(&self, values: &[f64]) -> Self {
        match self {
            Self::Global(_) => Self::Global(values[0]),
            Self::PerMode(_) => Self::PerMode(values.to_vec()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.with_values(&vec![0.0; self.len()])
    }

    pub fn check(&self, r: usize) -> Result<()> {
        if let Self::PerMode(v) = self {
            if v.len() != r {
                return Err(Error::Dimension(format!("{} per-mode viscosities for {r} modes", v.len())));
            }
        }
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("eddy viscosity must be finite".into()));
        }
        Ok(())
    }

    fn expand(&self, r: usize) -> Vec<f64> {
        (0..r).map(|k| self.at(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GromModel {
    pub b: DVector<f64>,
    /// `L[(i, k)]`.
    pub l: DMatrix<f64>,
    /// `n3[k][(i, j)] = N_ijk`.
    pub n3: Vec<DMatrix<f64>>,
    pub b_hat: DVector<f64>,
    /// `L̂[(i, k)]`.
    pub l_hat: DMatrix<f64>,
    /// Physical viscosity `1/Re`, already folded into `B` and `L`.
    pub nu: f64,
    pub r: usize,
    /// Hash of the basis the tensors were built from (empty for synthetic models).
    pub basis_hash: String,
}

impl GromModel {
    /// Model with all tensors zero.
    pub fn zeros(r: usize, nu: f64) -> Self {
        Self {
            b: DVector::zeros(r),
            l: DMatrix::zeros(r, r),
            n3: vec![DMatrix::zeros(r, r); r],
            b_hat: DVector::zeros(r),
            l_hat: DMatrix::zeros(r, r),
            nu,
            r,
            basis_hash: String::new(),
        }
    }

    fn check_state(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.r {
            return Err(Error::Dimension(format!("state has {} entries, model has {} modes", a.len(), self.r)));
        }
        Ok(())
    }

    /// Right-hand side with per-mode viscosities `nu_k` already expanded.
    pub(crate) fn rhs_expanded(&self, a: &[f64], nu_k: &[f64], out: &mut [f64]) {
        let r = self.r;
        let av = nalgebra::DVectorView::from_slice(a, r);
        for k in 0..r {
            let mut f = self.b[k] + nu_k[k] * self.b_hat[k];
            for i in 0..r {
                f += (self.l[(i, k)] + nu_k[k] * self.l_hat[(i, k)]) * a[i];
            }
            let nk = &self.n3[k];
            let mut quad = 0.0;
            for j in 0..r {
                quad += a[j] * nk.column(j).dot(&av);
            }
            out[k] = f + quad;
        }
    }

    pub fn to_container(&self) -> Container {
        let r = self.r;
        let mut c = Container::new(Header {
            kind: ArtifactKind::Operators,
            rank: 0,
            nx: r as u64,
            ny: 0,
            count: r as u64,
            dt: 0.0,
        });
        c.push_vector("b", self.b.as_slice());
        c.push_matrix("l", &self.l);
        let mut n3 = Vec::with_capacity(r * r * r);
        for k in 0..r {
            n3.extend(self.n3[k].transpose().iter());
        }
        c.push_block("n", r, r * r, n3);
        c.push_vector("b_hat", self.b_hat.as_slice());
        c.push_matrix("l_hat", &self.l_hat);
        c.push_vector("nu", &[self.nu]);
        c.push_text("basis_hash", &self.basis_hash);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.header.kind != ArtifactKind::Operators {
            return Err(Error::Format(format!("expected operators, found {:?}", c.header.kind)));
        }
        let r = c.header.count as usize;
        let b = DVector::from_vec(c.vector("b")?);
        let l = c.matrix("l")?;
        let b_hat = DVector::from_vec(c.vector("b_hat")?);
        let l_hat = c.matrix("l_hat")?;
        let (rows, cols, data) = c.block("n")?;
        if b.len() != r || b_hat.len() != r || l.shape() != (r, r) || l_hat.shape() != (r, r) || rows != r || cols != r * r {
            return Err(Error::Format("operator sections disagree with header".into()));
        }
        let n3 = (0..r).map(|k| DMatrix::from_row_slice(r, r, &data[k * r * r..(k + 1) * r * r])).collect();
        let nu = c.vector("nu")?;
        if nu.len() != 1 {
            return Err(Error::Format("nu section must hold one value".into()));
        }
        Ok(Self { b, l, n3, b_hat, l_hat, nu: nu[0], r, basis_hash: c.text("basis_hash")?.to_owned() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write_to(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_from(path)?)
    }
}

pub fn grom_rhs(model: &GromModel, a: &[f64], nu_e: &EddyViscosity) -> Result<DVector<f64>> {
    model.check_state(a)?;
    nu_e.check(model.r)?;
    let mut out = vec![0.0; model.r];
    model.rhs_expanded(a, &nu_e.expand(model.r), &mut out);
    Ok(DVector::from_vec(out))
}

/// Row `t` of `coefficients` is the state at `times[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTrajectory {
    pub coefficients: DMatrix<f64>,
    pub times: Vec<f64>,
    pub dt: f64,
    /// Step at which the state stopped being finite; the trajectory ends just
    /// before it.
    pub diverged_at: Option<usize>,
}

impl RomTrajectory {
    pub fn state(&self, row: usize) -> DVector<f64> {
        self.coefficients.row(row).transpose()
    }

    pub fn row_of_time(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

pub(crate) fn rk4_step(model: &GromModel, a: &[f64], nu_k: &[f64], dt: f64, ws: &mut [Vec<f64>; 5], out: &mut [f64]) {
    let r = model.r;
    let [k1, k2, k3, k4, s] = ws;
    model.rhs_expanded(a, nu_k, k1);
    for i in 0..r {
        s[i] = a[i] + 0.5 * dt * k1[i];
    }
    model.rhs_expanded(s, nu_k, k2);
    for i in 0..r {
        s[i] = a[i] + 0.5 * dt * k2[i];
    }
    model.rhs_expanded(s, nu_k, k3);
    for i in 0..r {
        s[i] = a[i] + dt * k3[i];
    }
    model.rhs_expanded(s, nu_k, k4);
    for i in 0..r {
        out[i] = a[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Classical RK4 from `a0` at `t = 0`. Blow-up is not an error: the
/// trajectory is cut short and flagged.
pub fn integrate_grom(model: &GromModel, a0: &[f64], nu_e: &EddyViscosity, dt: f64, steps: usize) -> Result<RomTrajectory> {
    model.check_state(a0)?;
    nu_e.check(model.r)?;
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let r = model.r;
    let nu_k = nu_e.expand(r);
    let mut rows = Vec::with_capacity((steps + 1) * r);
    rows.extend_from_slice(a0);
    let mut a = a0.to_vec();
    let mut next = vec![0.0; r];
    let mut ws: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; r]);
    let mut diverged_at = None;
    for step in 1..=steps {
        rk4_step(model, &a, &nu_k, dt, &mut ws, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(step);
            break;
        }
        std::mem::swap(&mut a, &mut next);
        rows.extend_from_slice(&a);
    }
    let count = rows.len() / r;
    Ok(RomTrajectory {
        coefficients: DMatrix::from_row_slice(count, r, &rows),
        times: (0..count).map(|k| k as f64 * dt).collect(),
        dt,
        diverged_at,
    })
}

fn check_basis_len(basis: &PodBasis, len: usize) -> Result<()> {
    if basis.n() != len {
        return Err(Error::Dimension(format!("basis has {} nodes, grid has {len}", basis.n())));
    }
    Ok(())
}

fn basis_hash(basis: &PodBasis) -> String {
    basis.to_container().digest_hex()
}

/// Tensors for Burgers' equation, using the same compact operators and
/// nonlinear split as the full-order solver.
pub fn build_grom_burgers(basis: &PodBasis, grid: &Grid1D, cfg: &BurgersConfig) -> Result<GromModel> {
    check_basis_len(basis, grid.n)?;
    let ops = BurgersOperators::new(grid, cfg.closure)?;
    let (r, n) = (basis.r, grid.n);
    let w = cfg.advective_weight;
    let nu = 1.0 / cfg.re;
    let mean = basis.mean.as_slice().to_vec();
    let phi: Vec<Vec<f64>> = (0..r).map(|k| basis.modes.column(k).iter().copied().collect()).collect();

    // boundary rows of the semi-discrete system are zero in the solver
    let interior = |mut v: Vec<f64>| {
        v[0] = 0.0;
        v[n - 1] = 0.0;
        v
    };
    let dot = |f: &[f64], k: usize| f.iter().zip(&phi[k]).map(|(x, y)| x * y).sum::<f64>();
    // bilinear advection B(f, g) = w f g' + (1 - w) (f g)'/2
    let d1_mean = ops.d1.apply(&mean);
    let d1_phi: Vec<Vec<f64>> = phi.iter().map(|p| ops.d1.apply(p)).collect();
    let advect = |f: &[f64], g: &[f64], dg: &[f64]| -> Vec<f64> {
        let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        let dprod = ops.d1.apply(&prod);
        interior((0..n).map(|x| w * f[x] * dg[x] + 0.5 * (1.0 - w) * dprod[x]).collect())
    };

    let lap_mean = interior(ops.d2.apply(&mean));
    let lap_phi: Vec<Vec<f64>> = phi.iter().map(|p| interior(ops.d2.apply(p))).collect();
    let adv_mean = advect(&mean, &mean, &d1_mean);

    let mut m = GromModel::zeros(r, nu);
    for k in 0..r {
        m.b_hat[k] = dot(&lap_mean, k);
        m.b[k] = -dot(&adv_mean, k) + nu * m.b_hat[k];
    }
    for i in 0..r {
        let mixed_a = advect(&mean, &phi[i], &d1_phi[i]);
        let mixed_b = advect(&phi[i], &mean, &d1_mean);
        for k in 0..r {
            m.l_hat[(i, k)] = dot(&lap_phi[i], k);
            m.l[(i, k)] = -dot(&mixed_a, k) - dot(&mixed_b, k) + nu * m.l_hat[(i, k)];
        }
        for j in 0..r {
            let quad = advect(&phi[i], &phi[j], &d1_phi[j]);
            for k in 0..r {
                m.n3[k][(i, j)] = -dot(&quad, k);
            }
        }
    }
    m.basis_hash = basis_hash(basis);
    Ok(m)
}

/// Tensors for the vorticity transport equation. Needs the companion
/// streamfunction modes.
pub fn build_grom_vorticity(basis: &PodBasis, grid: &Grid2D, cfg: &VorticityConfig) -> Result<GromModel> {
    check_basis_len(basis, grid.len())?;
    let (theta, psi_mean) = match (&basis.companion_modes, &basis.companion_mean) {
        (Some(t), Some(m)) => (t, m),
        _ => return Err(Error::MissingCompanions),
    };
    let ops = VorticityOperators::new(grid, cfg.arakawa, cfg.laplacian);
    let r = basis.r;
    let nu = 1.0 / cfg.re;
    let col = |m: &DMatrix<f64>, k: usize| -> Vec<f64> { m.column(k).iter().copied().collect() };
    let phi: Vec<Vec<f64>> = (0..r).map(|k| col(&basis.modes, k)).collect();
    let theta: Vec<Vec<f64>> = (0..r).map(|k| col(theta, k)).collect();
    let w_mean = basis.mean.as_slice();
    let s_mean = psi_mean.as_slice();
    let dot = |f: &[f64], k: usize| f.iter().zip(&phi[k]).map(|(x, y)| x * y).sum::<f64>();

    let lap_mean = ops.laplacian(w_mean);
    let jac_mean = ops.jacobian(w_mean, s_mean);
    let mut m = GromModel::zeros(r, nu);
    for k in 0..r {
        m.b_hat[k] = dot(&lap_mean, k);
        m.b[k] = -dot(&jac_mean, k) + nu * m.b_hat[k];
    }
    for i in 0..r {
        let lap = ops.laplacian(&phi[i]);
        let ja = ops.jacobian(w_mean, &theta[i]);
        let jb = ops.jacobian(&phi[i], s_mean);
        for k in 0..r {
            m.l_hat[(i, k)] = dot(&lap, k);
            m.l[(i, k)] = -dot(&ja, k) - dot(&jb, k) + nu * m.l_hat[(i, k)];
        }
        for j in 0..r {
            let jq = ops.jacobian(&phi[i], &theta[j]);
            for k in 0..r {
                m.n3[k][(i, j)] = -dot(&jq, k);
            }
        }
    }
    m.basis_hash = basis_hash(basis);
    Ok(m)
}
