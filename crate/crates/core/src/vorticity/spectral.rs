//! Doubly periodic FFT helpers: Poisson inversion and the spectral Laplacian.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Grid2D;
use crate::{Error, Result};

/// Forward/inverse 2D transforms for a row-major `nx × ny` field
/// (`index = ix * ny + iy`).
#[derive(Clone)]
pub struct Spectral2D {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// `|k|²` per spectral index, row-major like the physical field.
    k2: Vec<f64>,
}

impl std::fmt::Debug for Spectral2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral2D").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

/// Signed integer wavenumber of FFT bin `m` for a transform of length `n`.
pub fn signed_index(m: usize, n: usize) -> i64 {
    if m <= n / 2 { m as i64 } else { m as i64 - n as i64 }
}

impl Spectral2D {
    pub fn new(grid: &Grid2D) -> Self {
        let mut planner = FftPlanner::new();
        let (nx, ny) = (grid.nx, grid.ny);
        let kx0 = 2.0 * std::f64::consts::PI / grid.lx;
        let ky0 = 2.0 * std::f64::consts::PI / grid.ly;
        let mut k2 = vec![0.0; nx * ny];
        for i in 0..nx {
            let kx = kx0 * signed_index(i, nx) as f64;
            for j in 0..ny {
                let ky = ky0 * signed_index(j, ny) as f64;
                k2[i * ny + j] = kx * kx + ky * ky;
            }
        }
        Self {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
            k2,
        }
    }

    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    fn transform(&self, buf: &mut [Complex64], along_y: &Arc<dyn Fft<f64>>, along_x: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        along_y.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); nx];
        for j in 0..ny {
            for i in 0..nx {
                col[i] = buf[i * ny + j];
            }
            along_x.process(&mut col);
            for i in 0..nx {
                buf[i * ny + j] = col[i];
            }
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        assert_eq!(field.len(), self.nx * self.ny);
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fwd_y, &self.fwd_x);
        buf
    }

    /// Inverse transform including the `1/(nx ny)` factor; returns the real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        assert_eq!(spec.len(), self.nx * self.ny);
        self.transform(&mut spec, &self.inv_y, &self.inv_x);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }

    /// `ψ̂ = ω̂ / |k|²`, zero mean.
    pub fn poisson_from_spectrum(&self, w_hat: &[Complex64]) -> Vec<f64> {
        let spec = w_hat
            .iter()
            .zip(&self.k2)
            .map(|(w, &k2)| if k2 > 0.0 { w / k2 } else { Complex64::new(0.0, 0.0) })
            .collect();
        self.inverse(spec)
    }

    pub fn laplacian_from_spectrum(&self, w_hat: &[Complex64]) -> Vec<f64> {
        let spec = w_hat.iter().zip(&self.k2).map(|(w, &k2)| -k2 * w).collect();
        self.inverse(spec)
    }

    pub fn laplacian(&self, field: &[f64]) -> Vec<f64> {
        self.laplacian_from_spectrum(&self.forward(field))
    }

    /// Solves `∇²ψ = -ω`; the mean of `ω` must vanish.
    pub fn poisson(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_zero_mean(w)?;
        Ok(self.poisson_from_spectrum(&self.forward(w)))
    }
}

pub(crate) fn check_zero_mean(w: &[f64]) -> Result<()> {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let scale = w.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if mean.abs() > 1e-8 * scale {
        return Err(Error::NonZeroMean { mean });
    }
    Ok(())
}

/// Second-order five-point Laplacian with periodic wrap.
pub fn five_point_laplacian(field: &[f64], grid: &Grid2D) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        let (ip, im) = ((i + 1) % nx, (i + nx - 1) % nx);
        for j in 0..ny {
            let (jp, jm) = ((j + 1) % ny, (j + ny - 1) % ny);
            let c = field[i * ny + j];
            out[i * ny + j] = (field[ip * ny + j] - 2.0 * c + field[im * ny + j]) * idx2
                + (field[i * ny + jp] - 2.0 * c + field[i * ny + jm]) * idy2;
        }
    }
    out
}
