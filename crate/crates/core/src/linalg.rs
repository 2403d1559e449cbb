//! Thin SVD backed by faer. nalgebra's SVD returns inaccurate factors for
//! rank-deficient inputs, and mean-centred snapshot matrices always are.

use nalgebra::DMatrix;

use crate::{Error, Result};

pub(crate) struct ThinSvd {
    /// `n × k`, `k = min(n, m)`.
    pub u: DMatrix<f64>,
    /// Descending.
    pub sigma: Vec<f64>,
    /// `m × k`.
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let (n, m) = a.shape();
    let f = faer::Mat::<f64>::from_fn(n, m, |i, j| a[(i, j)]);
    let svd = f.thin_svd().map_err(|e| Error::Svd(format!("{e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let k = s.dim();
    let mut out = ThinSvd {
        u: DMatrix::from_fn(n, k, |i, j| u[(i, j)]),
        sigma: (0..k).map(|i| s[i]).collect(),
        v: DMatrix::from_fn(m, k, |i, j| v[(i, j)]),
    };
    // faer already sorts; keep the contract explicit in case that changes
    if out.sigma.windows(2).any(|w| w[0] < w[1]) {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| out.sigma[y].total_cmp(&out.sigma[x]));
        out = ThinSvd {
            u: DMatrix::from_fn(n, k, |i, j| out.u[(i, order[j])]),
            sigma: order.iter().map(|&j| out.sigma[j]).collect(),
            v: DMatrix::from_fn(m, k, |i, j| out.v[(i, order[j])]),
        };
    }
    Ok(out)
}
