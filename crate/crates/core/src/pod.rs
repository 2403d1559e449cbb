//! Mean-subtracted proper orthogonal decomposition of a snapshot matrix.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::container::{ArtifactKind, Container, Header};
use crate::linalg::thin_svd;
use crate::snapshots::{GridMeta, SnapshotSet};
use crate::vorticity::{Grid2D, Spectral2D};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdMethod {
    /// Thin SVD of the `n × N` matrix.
    Direct,
    /// Eigendecomposition of the `N × N` correlation matrix.
    Snapshots,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PodOptions {
    /// Largest `n·N` decomposed directly; above it the method of snapshots is
    /// used.
    pub direct_budget: usize,
    pub method: Option<SvdMethod>,
}

impl Default for PodOptions {
    fn default() -> Self {
        Self { direct_budget: 4_000_000, method: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodDiagnostics {
    pub method: SvdMethod,
    /// All retained singular values vanish (e.g. identical snapshots).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub mean: DVector<f64>,
    /// `n × r`, orthonormal columns.
    pub modes: DMatrix<f64>,
    /// All `N` singular values, descending.
    pub singular_values: Vec<f64>,
    pub r: usize,
    pub grid: GridMeta,
    /// Streamfunction modes `θ_k` with `∇²θ_k = -φ_k` (2D only).
    pub companion_modes: Option<DMatrix<f64>>,
    pub companion_mean: Option<DVector<f64>>,
    pub diagnostics: PodDiagnostics,
    /// Hash of the snapshot container the basis was built from.
    pub source_hash: String,
}

pub fn build_pod(snapshots: &SnapshotSet, r: usize) -> Result<PodBasis> {
    build_pod_with(snapshots, r, PodOptions::default())
}

pub fn build_pod_with(snapshots: &SnapshotSet, r: usize, opts: PodOptions) -> Result<PodBasis> {
    let (n, big_n) = snapshots.data.shape();
    if r == 0 || r > big_n {
        return Err(Error::TooManyModes { requested: r, available: big_n });
    }
    if big_n > n {
        return Err(Error::Dimension(format!("{big_n} snapshots exceed {n} nodes")));
    }
    // hashed before centring so the two large copies never coexist
    let source_hash = snapshots.to_container().digest_hex();
    let mean = snapshots.data.column_mean();
    let mut centred = snapshots.data.clone();
    for mut c in centred.column_iter_mut() {
        c -= &mean;
    }
    let method = opts.method.unwrap_or(if n.saturating_mul(big_n) > opts.direct_budget {
        SvdMethod::Snapshots
    } else {
        SvdMethod::Direct
    });
    let (modes, sigma, method) = match method {
        SvdMethod::Direct => {
            let (u, s) = direct(&centred, r)?;
            (u, s, SvdMethod::Direct)
        }
        SvdMethod::Snapshots => match method_of_snapshots(&centred, r) {
            Some((u, s)) => (u, s, SvdMethod::Snapshots),
            None => {
                let (u, s) = direct(&centred, r)?;
                (u, s, SvdMethod::Direct)
            }
        },
    };
    let scale = snapshots.data.amax().max(f64::MIN_POSITIVE);
    let degenerate = sigma[..r].iter().all(|&s| s <= 1e-12 * scale * (n as f64).sqrt());
    drop(centred);
    let mut modes = modes;
    fix_signs(&mut modes);
    Ok(PodBasis {
        mean,
        modes,
        singular_values: sigma,
        r,
        grid: snapshots.grid,
        companion_modes: None,
        companion_mean: None,
        diagnostics: PodDiagnostics { method, degenerate },
        source_hash,
    })
}

fn direct(centred: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let svd = thin_svd(centred)?;
    Ok((svd.u.columns(0, r).into_owned(), svd.sigma))
}

/// `None` when a retained singular value is too small for `Ã v / σ` to give
/// an accurate mode.
fn method_of_snapshots(centred: &DMatrix<f64>, r: usize) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let gram = centred.tr_mul(centred);
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sigma: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect();
    if sigma[r - 1] <= 1e-6 * sigma[0] || sigma[0] == 0.0 {
        return None;
    }
    let mut modes = DMatrix::zeros(centred.nrows(), r);
    for k in 0..r {
        let v = eig.eigenvectors.column(order[k]);
        modes.set_column(k, &((centred * v) / sigma[k]));
    }
    // one Gram-Schmidt sweep removes the rounding left by squaring Ã
    for k in 0..r {
        for j in 0..k {
            let d = modes.column(j).dot(&modes.column(k));
            let cj = modes.column(j).into_owned();
            modes.column_mut(k).axpy(-d, &cj, 1.0);
        }
        let nrm = modes.column(k).norm();
        modes.column_mut(k).unscale_mut(nrm);
    }
    Some((modes, sigma))
}

/// Flips each column so that its largest-magnitude entry is positive.
fn fix_signs(modes: &mut DMatrix<f64>) {
    for mut c in modes.column_iter_mut() {
        let (mut best, mut idx) = (0.0, 0);
        for (i, v) in c.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                idx = i;
            }
        }
        if c[idx] < 0.0 {
            c.neg_mut();
        }
    }
}

/// Relative information content `Σ_{k≤r} σ_k² / Σ σ_k²`; 1 when every
/// singular value vanishes.
pub fn ric(basis: &PodBasis, r: usize) -> Result<f64> {
    ric_of(&basis.singular_values, r)
}

pub fn ric_of(sigma: &[f64], r: usize) -> Result<f64> {
    if r > sigma.len() {
        return Err(Error::TooManyModes { requested: r, available: sigma.len() });
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(sigma[..r].iter().map(|s| s * s).sum::<f64>() / total)
}

impl PodBasis {
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    fn check_field(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::Dimension(format!("field has {len} values, basis has {}", self.n())));
        }
        Ok(())
    }

    /// `a_i = <f - q̄, φ_i>`.
    pub fn project(&self, field: &[f64]) -> Result<DVector<f64>> {
        self.check_field(field.len())?;
        let dev = DVector::from_column_slice(field) - &self.mean;
        Ok(self.modes.tr_mul(&dev))
    }

    /// Coefficients of every snapshot, one column per time.
    pub fn project_all(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_field(data.nrows())?;
        let mut dev = data.clone();
        for mut c in dev.column_iter_mut() {
            c -= &self.mean;
        }
        Ok(self.modes.tr_mul(&dev))
    }

    /// `q̄ + Σ a_k φ_k`.
    pub fn reconstruct(&self, a: &[f64]) -> Result<DVector<f64>> {
        if a.len() != self.r {
            return Err(Error::Dimension(format!("{} coefficients for {} modes", a.len(), self.r)));
        }
        Ok(&self.mean + &self.modes * DVector::from_column_slice(a))
    }

    /// Same basis restricted to its first `r` modes.
    pub fn truncate(&self, r: usize) -> Result<PodBasis> {
        if r == 0 || r > self.r {
            return Err(Error::TooManyModes { requested: r, available: self.r });
        }
        let mut out = self.clone();
        out.r = r;
        out.modes = self.modes.columns(0, r).into_owned();
        out.companion_modes = self.companion_modes.as_ref().map(|m| m.columns(0, r).into_owned());
        Ok(out)
    }

    pub fn to_container(&self) -> Container {
        let (nx, ny) = self.grid.dims();
        let (lx, ly) = self.grid.lengths();
        let mut c = Container::new(Header {
            kind: ArtifactKind::Basis,
            rank: self.grid.rank(),
            nx: nx as u64,
            ny: ny as u64,
            count: self.r as u64,
            dt: 0.0,
        });
        c.push_vector("mean", self.mean.as_slice());
        c.push_columns("modes", &self.modes);
        c.push_vector("singular_values", &self.singular_values);
        c.push_vector("lengths", &[lx, ly]);
        if let (Some(m), Some(t)) = (&self.companion_mean, &self.companion_modes) {
            c.push_vector("companion_mean", m.as_slice());
            c.push_columns("companion_modes", t);
        }
        let method = match self.diagnostics.method {
            SvdMethod::Direct => "direct",
            SvdMethod::Snapshots => "snapshots",
        };
        c.push_text("method", method);
        c.push_text("source_hash", &self.source_hash);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let h = c.header;
        if h.kind != ArtifactKind::Basis {
            return Err(Error::Format(format!("expected a basis, found {:?}", h.kind)));
        }
        let lengths = c.vector("lengths")?;
        if lengths.len() != 2 {
            return Err(Error::Format("lengths section must hold two values".into()));
        }
        let grid = match h.rank {
            1 => GridMeta::OneD(crate::burgers::Grid1D::new(h.nx as usize, lengths[0])?),
            2 => GridMeta::TwoD(Grid2D::new(h.nx as usize, h.ny as usize, lengths[0], lengths[1])?),
            r => return Err(Error::Format(format!("unsupported field rank {r}"))),
        };
        let mean = DVector::from_vec(c.vector("mean")?);
        let modes = c.columns("modes")?;
        if modes.ncols() as u64 != h.count || modes.nrows() != mean.len() || mean.len() != grid.len() {
            return Err(Error::Format("basis sections disagree with header".into()));
        }
        let (companion_mean, companion_modes) = if c.section("companion_modes").is_some() {
            (Some(DVector::from_vec(c.vector("companion_mean")?)), Some(c.columns("companion_modes")?))
        } else {
            (None, None)
        };
        let method = match c.text("method")? {
            "direct" => SvdMethod::Direct,
            "snapshots" => SvdMethod::Snapshots,
            other => return Err(Error::Format(format!("unknown decomposition method {other}"))),
        };
        let singular_values = c.vector("singular_values")?;
        let r = modes.ncols();
        let degenerate = singular_values.iter().take(r).all(|&s| s == 0.0);
        Ok(Self {
            mean,
            modes,
            singular_values,
            r,
            grid,
            companion_modes,
            companion_mean,
            diagnostics: PodDiagnostics { method, degenerate },
            source_hash: c.text("source_hash")?.to_owned(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write_to(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_from(path)?)
    }
}

/// Adds streamfunction modes `∇²θ_k = -φ_k` and mean `∇²ψ̄ = -ω̄`.
pub fn companion_streamfunction_basis(basis: &PodBasis, grid: &Grid2D) -> Result<PodBasis> {
    if basis.n() != grid.len() {
        return Err(Error::Dimension(format!("basis has {} nodes, grid has {}", basis.n(), grid.len())));
    }
    let sp = Spectral2D::new(grid);
    let psi_mean = DVector::from_vec(sp.poisson(basis.mean.as_slice())?);
    let mut theta = DMatrix::zeros(basis.n(), basis.r);
    for k in 0..basis.r {
        let phi = basis.modes.column(k).into_owned();
        theta.set_column(k, &DVector::from_vec(sp.poisson(phi.as_slice())?));
    }
    let mut out = basis.clone();
    out.companion_mean = Some(psi_mean);
    out.companion_modes = Some(theta);
    Ok(out)
}
