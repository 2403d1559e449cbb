//! Fourth-order compact (Padé) finite differences on a uniform non-periodic
//! grid.
//!
//! Interior rows use the classical tridiagonal schemes
//!
//! ```text
//! f'_{i-1}/4  + f'_i + f'_{i+1}/4  = 3/(4h)  (f_{i+1} - f_{i-1})
//! f''_{i-1}/10 + f''_i + f''_{i+1}/10 = 6/(5h²) (f_{i+1} - 2 f_i + f_{i-1})
//! ```
//!
//! closed by one-sided implicit boundary rows.

use crate::{Error, Result};

/// Accuracy of the one-sided boundary rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClosure {
    /// `f'_0 + 2 f'_1` and `f''_0 + 11 f''_1` closures.
    Third,
    /// `f'_0 + 3 f'_1` implicit row; explicit six-point `f''_0` (the implicit
    /// `f''_0 + 10 f''_1` row makes the Thomas pivot vanish against the
    /// interior `1/10`).
    #[default]
    Fourth,
}

/// Thomas-algorithm factorisation of a constant tridiagonal matrix.
#[derive(Debug, Clone)]
struct Tridiagonal {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl Tridiagonal {
    /// `lower[0]` and `upper[n-1]` are ignored.
    fn factor(lower: Vec<f64>, diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = if i == 0 { diag[0] } else { diag[i] - lower[i] * prev };
            if pivot.abs() < 1e-14 {
                return Err(Error::SingularTridiagonal { row: i });
            }
            inv_pivot[i] = 1.0 / pivot;
            upper_scaled[i] = if i + 1 < n { upper[i] * inv_pivot[i] } else { 0.0 };
            prev = upper_scaled[i];
        }
        Ok(Self { lower, inv_pivot, upper_scaled })
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_scaled[i] * rhs[i + 1];
        }
    }
}

#[derive(Debug, Clone)]
struct Stencil {
    system: Tridiagonal,
    /// Explicit weights of the first boundary row applied to `f_0, f_1, ...`.
    boundary: Vec<f64>,
    order: DerivativeOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DerivativeOrder {
    First,
    Second,
}

/// Compact first- or second-derivative operator for a fixed grid.
#[derive(Debug, Clone)]
pub struct CompactDerivative {
    stencil: Stencil,
    h: f64,
    n: usize,
}

impl CompactDerivative {
    pub fn first(n: usize, h: f64, closure: BoundaryClosure) -> Result<Self> {
        let (alpha_b, boundary) = match closure {
            BoundaryClosure::Third => (2.0, vec![-2.5, 2.0, 0.5]),
            BoundaryClosure::Fourth => (3.0, vec![-17.0 / 6.0, 1.5, 1.5, -1.0 / 6.0]),
        };
        Self::build(n, h, 0.25, alpha_b, boundary, DerivativeOrder::First)
    }

    pub fn second(n: usize, h: f64, closure: BoundaryClosure) -> Result<Self> {
        let (alpha_b, boundary) = match closure {
            BoundaryClosure::Third => (11.0, vec![13.0, -27.0, 15.0, -1.0]),
            BoundaryClosure::Fourth => {
                (0.0, [45.0, -154.0, 214.0, -156.0, 61.0, -10.0].iter().map(|c| c / 12.0).collect())
            }
        };
        Self::build(n, h, 0.1, alpha_b, boundary, DerivativeOrder::Second)
    }

    fn build(
        n: usize,
        h: f64,
        alpha: f64,
        alpha_b: f64,
        boundary: Vec<f64>,
        order: DerivativeOrder,
    ) -> Result<Self> {
        if n < boundary.len().max(4) {
            return Err(Error::InvalidGrid(format!("compact stencil needs at least {} nodes, got {n}", boundary.len().max(4))));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidGrid(format!("grid spacing must be positive, got {h}")));
        }
        let mut lower = vec![alpha; n];
        let diag = vec![1.0; n];
        let mut upper = vec![alpha; n];
        upper[0] = alpha_b;
        lower[n - 1] = alpha_b;
        lower[0] = 0.0;
        upper[n - 1] = 0.0;
        let system = Tridiagonal::factor(lower, &diag, &upper)?;
        Ok(Self { stencil: Stencil { system, boundary, order }, h, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.n;
        assert_eq!(f.len(), n, "field length does not match operator");
        assert_eq!(out.len(), n);
        let w = &self.stencil.boundary;
        match self.stencil.order {
            DerivativeOrder::First => {
                let c = 0.75 / self.h;
                for i in 1..n - 1 {
                    out[i] = c * (f[i + 1] - f[i - 1]);
                }
                let (mut left, mut right) = (0.0, 0.0);
                for (k, wk) in w.iter().enumerate() {
                    left += wk * f[k];
                    right -= wk * f[n - 1 - k];
                }
                out[0] = left / self.h;
                out[n - 1] = right / self.h;
            }
            DerivativeOrder::Second => {
                let c = 1.2 / (self.h * self.h);
                for i in 1..n - 1 {
                    out[i] = c * (f[i + 1] - 2.0 * f[i] + f[i - 1]);
                }
                let (mut left, mut right) = (0.0, 0.0);
                for (k, wk) in w.iter().enumerate() {
                    left += wk * f[k];
                    right += wk * f[n - 1 - k];
                }
                out[0] = left / (self.h * self.h);
                out[n - 1] = right / (self.h * self.h);
            }
        }
        self.stencil.system.solve_in_place(out);
    }
}
