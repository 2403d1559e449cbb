//! Forward sensitivity method: exact Jacobians of the RK4 map, forward
//! propagation of sensitivities, and the weighted least-squares correction of
//! the eddy viscosity.

mod assimilate;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use assimilate::{estimate_eddy_viscosity, AssimilationConfig, AssimilationResult, ViscosityMode};

use crate::grom::{EddyViscosity, GromModel};
use crate::{Error, Result};

/// Jacobians of one RK4 step with respect to the state and the eddy
/// viscosity parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMapJacobians {
    /// `R × R`.
    pub d_a: DMatrix<f64>,
    /// `R × p`, `p = 1` (global) or `R` (per mode).
    pub d_nu: DMatrix<f64>,
}

/// `∂f/∂a` (`R × R`, row `k` is `∂f_k`) and `∂f/∂ν` (`R × p`).
pub fn continuous_jacobians(model: &GromModel, a: &[f64], nu_e: &EddyViscosity) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    nu_e.check(model.r)?;
    if a.len() != model.r {
        return Err(Error::Dimension(format!("state has {} entries, model has {} modes", a.len(), model.r)));
    }
    let r = model.r;
    let p = nu_e.len();
    let mut ja = DMatrix::zeros(r, r);
    let mut jn = DMatrix::zeros(r, p);
    fill_jacobians(model, a, nu_e, &mut ja, &mut jn);
    Ok((ja, jn))
}

fn fill_jacobians(model: &GromModel, a: &[f64], nu_e: &EddyViscosity, ja: &mut DMatrix<f64>, jn: &mut DMatrix<f64>) {
    let r = model.r;
    let av = nalgebra::DVectorView::from_slice(a, r);
    for k in 0..r {
        let nk = nu_e.at(k);
        let n = &model.n3[k];
        for j in 0..r {
            // Σ_i (N_ijk + N_jik) a_i
            let quad = n.column(j).dot(&av) + n.row(j).transpose().dot(&av);
            ja[(k, j)] = model.l[(j, k)] + nk * model.l_hat[(j, k)] + quad;
        }
        let dnu = model.b_hat[k] + model.l_hat.column(k).dot(&av);
        let col = if nu_e.is_global() { 0 } else { k };
        jn[(k, col)] = dnu;
    }
}

/// One RK4 step `a ↦ M(a, ν)` together with its exact Jacobians, obtained by
/// differentiating the four stages.
pub fn rk4_step_with_jacobians(
    model: &GromModel,
    a: &[f64],
    nu_e: &EddyViscosity,
    dt: f64,
) -> Result<(DVector<f64>, DiscreteMapJacobians)> {
    nu_e.check(model.r)?;
    if a.len() != model.r {
        return Err(Error::Dimension(format!("state has {} entries, model has {} modes", a.len(), model.r)));
    }
    let mut ws = StepWorkspace::new(model.r, nu_e.len());
    let next = ws.step(model, a, nu_e, dt);
    Ok((next, DiscreteMapJacobians { d_a: ws.dm.columns(0, model.r).into_owned(), d_nu: ws.dm.columns(model.r, nu_e.len()).into_owned() }))
}

/// Buffers for repeated Jacobian steps; `dm` holds `[D_a(M), D_ν(M)]` after
/// each call to `step`.
pub(crate) struct StepWorkspace {
    r: usize,
    p: usize,
    nu_k: Vec<f64>,
    stage: Vec<f64>,
    g: [Vec<f64>; 4],
    ja: DMatrix<f64>,
    jn: DMatrix<f64>,
    ds: DMatrix<f64>,
    dg: DMatrix<f64>,
    pub(crate) dm: DMatrix<f64>,
}

impl StepWorkspace {
    pub(crate) fn new(r: usize, p: usize) -> Self {
        Self {
            r,
            p,
            nu_k: vec![0.0; r],
            stage: vec![0.0; r],
            g: std::array::from_fn(|_| vec![0.0; r]),
            ja: DMatrix::zeros(r, r),
            jn: DMatrix::zeros(r, p),
            ds: DMatrix::zeros(r, r + p),
            dg: DMatrix::zeros(r, r + p),
            dm: DMatrix::zeros(r, r + p),
        }
    }

    /// `Dg = J_a(s) Ds + [0, J_ν(s)]` for the current stage state.
    fn stage_jacobian(&mut self, model: &GromModel, nu_e: &EddyViscosity) {
        self.ja.fill(0.0);
        self.jn.fill(0.0);
        fill_jacobians(model, &self.stage, nu_e, &mut self.ja, &mut self.jn);
        self.dg.gemm(1.0, &self.ja, &self.ds, 0.0);
        let (r, p) = (self.r, self.p);
        let mut right = self.dg.columns_mut(r, p);
        right += &self.jn;
    }

    /// Sets `ds = P + c·dg` with `P = [I, 0]`.
    fn bordered(&mut self, c: f64) {
        self.ds.copy_from(&self.dg);
        self.ds *= c;
        for i in 0..self.r {
            self.ds[(i, i)] += 1.0;
        }
    }

    pub(crate) fn step(&mut self, model: &GromModel, a: &[f64], nu_e: &EddyViscosity, dt: f64) -> DVector<f64> {
        let r = self.r;
        for k in 0..r {
            self.nu_k[k] = nu_e.at(k);
        }
        let offsets = [0.0, 0.5 * dt, 0.5 * dt, dt];
        let weights = [1.0, 2.0, 2.0, 1.0];
        self.dm.fill(0.0);
        for i in 0..r {
            self.dm[(i, i)] = 1.0;
        }
        self.ds.fill(0.0);
        for i in 0..r {
            self.ds[(i, i)] = 1.0;
        }
        self.stage.copy_from_slice(a);
        for s in 0..4 {
            if s > 0 {
                for i in 0..r {
                    self.stage[i] = a[i] + offsets[s] * self.g[s - 1][i];
                }
                self.bordered(offsets[s]);
            }
            let mut g = std::mem::take(&mut self.g[s]);
            model.rhs_expanded(&self.stage, &self.nu_k, &mut g);
            self.g[s] = g;
            self.stage_jacobian(model, nu_e);
            self.dm.zip_apply(&self.dg, |m, d| *m += dt / 6.0 * weights[s] * d);
        }
        DVector::from_fn(r, |i, _| a[i] + dt / 6.0 * (self.g[0][i] + 2.0 * self.g[1][i] + 2.0 * self.g[2][i] + self.g[3][i]))
    }
}

/// `V^k` (`R × p`) and, when tracked, `U^k` (`R × R`).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    pub v: DMatrix<f64>,
    pub u: Option<DMatrix<f64>>,
}

impl SensitivityState {
    /// `V⁰ = 0`, `U⁰ = I` when tracked.
    pub fn initial(r: usize, p: usize, track_initial_condition: bool) -> Self {
        Self { v: DMatrix::zeros(r, p), u: track_initial_condition.then(|| DMatrix::identity(r, r)) }
    }
}

/// `V ← D_a(M) V + D_ν(M)`, `U ← D_a(M) U`.
pub fn propagate_sensitivities(state: &SensitivityState, jac: &DiscreteMapJacobians) -> Result<SensitivityState> {
    if jac.d_a.nrows() != state.v.nrows() || jac.d_nu.shape() != state.v.shape() {
        return Err(Error::Dimension("sensitivity and Jacobian shapes disagree".into()));
    }
    Ok(SensitivityState {
        v: &jac.d_a * &state.v + &jac.d_nu,
        u: state.u.as_ref().map(|u| &jac.d_a * u),
    })
}

/// Smallest accepted eigenvalue ratio of the normal matrix.
const SINGULAR_RATIO: f64 = 1e-14;

/// Weighted least-squares correction from stacked `H_k δ ≈ e_k` with
/// `R = σ² I`. Falls back to the minimum-norm solution when there are fewer
/// rows than unknowns. `σ = 0` uses unit weights (they cancel anyway).
pub fn assemble_and_solve(h_blocks: &[DMatrix<f64>], e_blocks: &[DVector<f64>], sigma: f64) -> Result<DVector<f64>> {
    if h_blocks.is_empty() || h_blocks.len() != e_blocks.len() {
        return Err(Error::Dimension("need matching, non-empty H and e blocks".into()));
    }
    let p = h_blocks[0].ncols();
    let mut rows = 0;
    for (h, e) in h_blocks.iter().zip(e_blocks) {
        if h.ncols() != p || h.nrows() != e.len() {
            return Err(Error::Dimension("inconsistent block shapes".into()));
        }
        rows += h.nrows();
    }
    let mut h = DMatrix::zeros(rows, p);
    let mut e = DVector::zeros(rows);
    let mut at = 0;
    for (hb, eb) in h_blocks.iter().zip(e_blocks) {
        h.rows_mut(at, hb.nrows()).copy_from(hb);
        e.rows_mut(at, eb.len()).copy_from(eb);
        at += hb.nrows();
    }
    let w = if sigma > 0.0 { 1.0 / (sigma * sigma) } else { 1.0 };
    if rows >= p {
        let normal = h.tr_mul(&h) * w;
        let rhs = h.tr_mul(&e) * w;
        check_conditioning(&normal)?;
        let chol = normal.cholesky().ok_or(Error::SingularNormalEquations { ratio: 0.0 })?;
        Ok(chol.solve(&rhs))
    } else {
        let gram = &h * h.transpose();
        check_conditioning(&gram)?;
        let chol = gram.cholesky().ok_or(Error::SingularNormalEquations { ratio: 0.0 })?;
        Ok(h.tr_mul(&chol.solve(&e)))
    }
}

fn check_conditioning(m: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio > SINGULAR_RATIO) {
        return Err(Error::SingularNormalEquations { ratio });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
