//! Random-phase vorticity seeded from a prescribed energy spectrum.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::spectral::{signed_index, Spectral2D};
use super::{Field2D, Grid2D};

/// `E(k) = 4 k⁴ / (3 √π k_p⁵) · exp(-(k/k_p)²)`; integrates to 1/2 over
/// `k ∈ [0, ∞)`.
pub fn energy_spectrum(k: f64, kp: f64) -> f64 {
    4.0 * k.powi(4) / (3.0 * PI.sqrt() * kp.powi(5)) * (-(k / kp).powi(2)).exp()
}

/// `|ω̃(k)| = sqrt(k E(k) / π)`.
pub fn vorticity_amplitude(k: f64, kp: f64) -> f64 {
    (k * energy_spectrum(k, kp) / PI).sqrt()
}

/// Fourier coefficients `ω̃(k)` of `ω(x) = Σ ω̃(k) e^{ik·x}`, Hermitian so the
/// field is real. Nyquist rows/columns are left empty.
pub fn initial_spectrum(grid: &Grid2D, kp: f64, seed: u64) -> Vec<Complex64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let kx0 = 2.0 * PI / grid.lx;
    let ky0 = 2.0 * PI / grid.ly;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); nx * ny];
    let mut assigned = vec![false; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let idx = i * ny + j;
            // one phase draw per index in storage order keeps the stream
            // independent of which modes end up zeroed
            let phase = rng.random::<f64>() * 2.0 * PI;
            if assigned[idx] || (nx % 2 == 0 && i == nx / 2) || (ny % 2 == 0 && j == ny / 2) {
                continue;
            }
            let (mi, mj) = (signed_index(i, nx), signed_index(j, ny));
            let partner = ((nx - i) % nx) * ny + (ny - j) % ny;
            let k = ((kx0 * mi as f64).powi(2) + (ky0 * mj as f64).powi(2)).sqrt();
            assigned[idx] = true;
            assigned[partner] = true;
            if k == 0.0 || partner == idx {
                continue;
            }
            let amp = vorticity_amplitude(k, kp);
            let c = Complex64::from_polar(amp, phase);
            spec[idx] = c;
            spec[partner] = c.conj();
        }
    }
    spec
}

pub fn initial_vorticity(grid: &Grid2D, kp: f64, seed: u64) -> Field2D {
    let spectral = Spectral2D::new(grid);
    let scale = (grid.nx * grid.ny) as f64;
    let coeffs: Vec<Complex64> = initial_spectrum(grid, kp, seed).into_iter().map(|c| c * scale).collect();
    Field2D { values: spectral.inverse(coeffs), time: 0.0 }
}

/// Kinetic energy carried by each integer shell `k ∈ [s - 1/2, s + 1/2)`:
/// `Σ ½ |ω̃|² / |k|²`. Assumes a `2π` box.
pub fn shell_energies(grid: &Grid2D, coeffs: &[Complex64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let kx0 = 2.0 * PI / grid.lx;
    let ky0 = 2.0 * PI / grid.ly;
    let kmax = ((nx.max(ny) as f64) * 0.75).ceil() as usize + 2;
    let mut shells = vec![0.0; kmax];
    for i in 0..nx {
        for j in 0..ny {
            let kx = kx0 * signed_index(i, nx) as f64;
            let ky = ky0 * signed_index(j, ny) as f64;
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                continue;
            }
            let s = k2.sqrt().round() as usize;
            if s < kmax {
                shells[s] += 0.5 * coeffs[i * ny + j].norm_sqr() / k2;
            }
        }
    }
    shells
}
