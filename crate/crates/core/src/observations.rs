//! Synthetic measurements and the maps between measured quantities and modal
//! coefficients.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::burgers::Grid1D;
use crate::container::{ArtifactKind, Container, Header};
use crate::linalg::thin_svd;
use crate::pod::PodBasis;
use crate::snapshots::SnapshotSet;
use crate::vorticity::Grid2D;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Full,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorLayout {
    /// Strictly increasing flattened node indices.
    pub indices: Vec<usize>,
    pub kind: LayoutKind,
}

impl SensorLayout {
    pub fn full(n: usize) -> Self {
        Self { indices: (0..n).collect(), kind: LayoutKind::Full }
    }

    pub fn sparse(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::Config("a sparse layout needs at least one sensor".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::Config(format!("sensor index {last} outside a grid of {n} nodes")));
            }
        }
        Ok(Self { indices, kind: LayoutKind::Sparse })
    }

    /// Sensors at `x = k L / count` for `k = 1..=count`, snapped to nodes. The
    /// last one sits on the boundary.
    pub fn uniform_1d(grid: &Grid1D, count: usize) -> Result<Self> {
        let idx = (1..=count).map(|k| ((k as f64 / count as f64) * (grid.n - 1) as f64).round() as usize).collect();
        Self::sparse(idx, grid.n)
    }

    /// One sensor every `spacing` nodes in both directions, starting at the
    /// origin.
    pub fn lattice_2d(grid: &Grid2D, spacing: usize) -> Result<Self> {
        if spacing == 0 {
            return Err(Error::Config("sensor spacing must be positive".into()));
        }
        let mut idx = Vec::new();
        for i in (0..grid.nx).step_by(spacing) {
            for j in (0..grid.ny).step_by(spacing) {
                idx.push(i * grid.ny + j);
            }
        }
        Self::sparse(idx, grid.len())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn sample(&self, field: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.indices.iter().map(|&i| field[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationSpace {
    /// Raw field values at sensors.
    Field,
    /// Modal coefficients extracted from the field values.
    Coefficient,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationDiagnostics {
    /// Condition number of the sampled basis (sparse pseudo-inverse only).
    pub condition_number: Option<f64>,
    pub ill_conditioned: bool,
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    /// One column per observation time.
    pub values: DMatrix<f64>,
    pub sigma: f64,
    pub space: ObservationSpace,
    pub layout: SensorLayout,
    pub seed: u64,
    pub diagnostics: ObservationDiagnostics,
}

impl ObservationSet {
    pub fn column(&self, k: usize) -> DVector<f64> {
        self.values.column(k).into_owned()
    }

    fn layout_name(&self) -> &'static str {
        match self.layout.kind {
            LayoutKind::Full => "full",
            LayoutKind::Sparse => "sparse",
        }
    }

    fn space_name(&self) -> &'static str {
        match self.space {
            ObservationSpace::Field => "field",
            ObservationSpace::Coefficient => "coefficient",
        }
    }

    /// `time,sensor_index,value` rows after a `#` header block. In coefficient
    /// space the index column holds the mode number.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# sigma={}", self.sigma)?;
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# layout={}", self.layout_name())?;
        writeln!(out, "# space={}", self.space_name())?;
        writeln!(out, "time,sensor_index,value")?;
        for (k, t) in self.times.iter().enumerate() {
            for s in 0..self.values.nrows() {
                let idx = match self.space {
                    ObservationSpace::Field => self.layout.indices[s],
                    ObservationSpace::Coefficient => s,
                };
                writeln!(out, "{t},{idx},{:e}", self.values[(s, k)])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(Header {
            kind: ArtifactKind::Observations,
            rank: 0,
            nx: self.values.nrows() as u64,
            ny: 0,
            count: self.times.len() as u64,
            dt: 0.0,
        });
        c.push_columns("values", &self.values);
        c.push_vector("times", &self.times);
        c.push_vector("sigma", &[self.sigma]);
        c.push_vector("indices", &self.layout.indices.iter().map(|&i| i as f64).collect::<Vec<_>>());
        c.push_text("layout", self.layout_name());
        c.push_text("space", self.space_name());
        c.push_text("seed", &self.seed.to_string());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.header.kind != ArtifactKind::Observations {
            return Err(Error::Format(format!("expected observations, found {:?}", c.header.kind)));
        }
        let kind = match c.text("layout")? {
            "full" => LayoutKind::Full,
            "sparse" => LayoutKind::Sparse,
            other => return Err(Error::Format(format!("unknown layout {other}"))),
        };
        let space = match c.text("space")? {
            "field" => ObservationSpace::Field,
            "coefficient" => ObservationSpace::Coefficient,
            other => return Err(Error::Format(format!("unknown observation space {other}"))),
        };
        let seed = c.text("seed")?.parse().map_err(|_| Error::Format("bad seed".into()))?;
        let sigma = c.vector("sigma")?;
        let times = c.vector("times")?;
        let values = c.columns("values")?;
        if sigma.len() != 1 || values.ncols() != times.len() {
            return Err(Error::Format("observation sections disagree".into()));
        }
        let indices = c.vector("indices")?.into_iter().map(|v| v as usize).collect();
        Ok(Self {
            times,
            values,
            sigma: sigma[0],
            space,
            layout: SensorLayout { indices, kind },
            seed,
            diagnostics: ObservationDiagnostics::default(),
        })
    }
}

/// Samples `truth` at the sensors and adds i.i.d. `N(0, σ²)` noise drawn from a
/// ChaCha8 stream seeded with `seed` (time-major, then sensor order).
pub fn synthesize_observations(
    truth: &SnapshotSet,
    layout: &SensorLayout,
    times: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("noise level must be non-negative, got {sigma}")));
    }
    if layout.indices.last().is_some_and(|&i| i >= truth.n_nodes()) {
        return Err(Error::Config("sensor outside the snapshot grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut values = DMatrix::zeros(layout.len(), times.len());
    for (k, &t) in times.iter().enumerate() {
        let field = truth.field_at(t)?;
        for (s, &i) in layout.indices.iter().enumerate() {
            let noise = if sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            values[(s, k)] = field[i] + noise;
        }
    }
    Ok(ObservationSet {
        times: times.to_vec(),
        values,
        sigma,
        space: ObservationSpace::Field,
        layout: layout.clone(),
        seed,
        diagnostics: ObservationDiagnostics::default(),
    })
}

fn require_field(obs: &ObservationSet) -> Result<()> {
    if obs.space != ObservationSpace::Field {
        return Err(Error::Config("observations are already in coefficient space".into()));
    }
    Ok(())
}

/// Projects full-field observations onto the basis.
pub fn observed_coefficients_full(obs: &ObservationSet, basis: &PodBasis) -> Result<ObservationSet> {
    require_field(obs)?;
    if obs.layout.kind != LayoutKind::Full || obs.values.nrows() != basis.n() {
        return Err(Error::Config("coefficient projection needs a full-field layout".into()));
    }
    let values = basis.project_all(&obs.values)?;
    Ok(ObservationSet { values, space: ObservationSpace::Coefficient, diagnostics: ObservationDiagnostics::default(), ..obs.clone() })
}

/// Basis modes sampled at the sensors, one row per sensor.
pub fn sampled_basis(basis: &PodBasis, layout: &SensorLayout) -> DMatrix<f64> {
    DMatrix::from_fn(layout.len(), basis.r, |s, k| basis.modes[(layout.indices[s], k)])
}

/// Least-squares coefficients from sensor values through the pseudo-inverse
/// of the sampled basis.
pub fn observed_coefficients_sparse_pinv(obs: &ObservationSet, basis: &PodBasis, layout: &SensorLayout) -> Result<ObservationSet> {
    require_field(obs)?;
    if obs.layout.indices != layout.indices {
        return Err(Error::Config("observations were not taken on this layout".into()));
    }
    let c = sampled_basis(basis, layout);
    let mean = layout.sample(basis.mean.as_slice());
    let svd = thin_svd(&c)?;
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let smin = svd.sigma.last().copied().unwrap_or(0.0);
    let cutoff = 1e-10 * smax;
    let rank = svd.sigma.iter().filter(|&&s| s > cutoff).count();
    let full_rank = rank == basis.r.min(layout.len()) && layout.len() >= basis.r;
    let cond = if smin > 0.0 && full_rank { smax / smin } else { f64::INFINITY };
    // V Σ⁺ Uᵀ, dropping singular values below the cutoff
    let mut v_scaled = svd.v.clone();
    for (j, &s) in svd.sigma.iter().enumerate() {
        let inv = if s > cutoff { 1.0 / s } else { 0.0 };
        v_scaled.column_mut(j).scale_mut(inv);
    }
    let pinv = v_scaled * svd.u.transpose();
    let mut values = DMatrix::zeros(basis.r, obs.times.len());
    for k in 0..obs.times.len() {
        let dev = obs.values.column(k) - &mean;
        values.set_column(k, &(&pinv * dev));
    }
    Ok(ObservationSet {
        values,
        space: ObservationSpace::Coefficient,
        diagnostics: ObservationDiagnostics { condition_number: Some(cond), ill_conditioned: !(cond <= 1e8), rank: Some(rank) },
        ..obs.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationOperator {
    /// `h(a) = a`.
    IdentityOnCoefficients { r: usize },
    /// `h(a) = ū|_s + C a`, with `C[s, k] = φ_k(x_s)`.
    ReconstructionMap { c_matrix: DMatrix<f64>, mean: DVector<f64> },
}

impl ObservationOperator {
    pub fn apply(&self, a: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::IdentityOnCoefficients { .. } => a.clone(),
            Self::ReconstructionMap { c_matrix, mean } => mean + c_matrix * a,
        }
    }

    /// `D_a(h)`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        match self {
            Self::IdentityOnCoefficients { r } => DMatrix::identity(*r, *r),
            Self::ReconstructionMap { c_matrix, .. } => c_matrix.clone(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Self::IdentityOnCoefficients { r } => *r,
            Self::ReconstructionMap { c_matrix, .. } => c_matrix.nrows(),
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Self::IdentityOnCoefficients { r } => *r,
            Self::ReconstructionMap { c_matrix, .. } => c_matrix.ncols(),
        }
    }

    /// The space an observation set must live in to be compared with `h`.
    pub fn space(&self) -> ObservationSpace {
        match self {
            Self::IdentityOnCoefficients { .. } => ObservationSpace::Coefficient,
            Self::ReconstructionMap { .. } => ObservationSpace::Field,
        }
    }
}

pub fn build_reconstruction_operator(basis: &PodBasis, layout: &SensorLayout) -> ObservationOperator {
    ObservationOperator::ReconstructionMap { c_matrix: sampled_basis(basis, layout), mean: layout.sample(basis.mean.as_slice()) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pod::build_pod;
    use crate::snapshots::GridMeta;
    use proptest::prelude::*;

    fn truth(n: usize, count: usize) -> SnapshotSet {
        let g = Grid1D::new(n, 1.0).unwrap();
        let data = DMatrix::from_fn(n, count, |i, t| {
            let x = g.x(i);
            let t = (t + 1) as f64 * 0.25;
            (std::f64::consts::PI * x).sin() * (1.0 - t) + (2.0 * std::f64::consts::PI * x).sin() * t + x * t * t
        });
        SnapshotSet::new(data, (1..=count).map(|k| k as f64 * 0.25).collect(), GridMeta::OneD(g)).unwrap()
    }

    #[test]
    fn layouts() {
        let g = Grid1D::new(4096, 1.0).unwrap();
        let l = SensorLayout::uniform_1d(&g, 8).unwrap();
        assert_eq!(l.indices, vec![512, 1024, 1536, 2048, 2559, 3071, 3583, 4095]);
        let g2 = Grid2D::square(512).unwrap();
        let l2 = SensorLayout::lattice_2d(&g2, 32).unwrap();
        assert_eq!(l2.len(), 256);
        assert!((l2.len() as f64 / g2.len() as f64 - 0.00098).abs() < 1e-5);
        assert!(SensorLayout::sparse(vec![5], 4).is_err());
        assert!(SensorLayout::sparse(vec![], 4).is_err());
    }

    #[test]
    fn zero_sigma_gives_exact_samples() {
        let t = truth(33, 4);
        let layout = SensorLayout::sparse(vec![3, 10, 20], 33).unwrap();
        let obs = synthesize_observations(&t, &layout, &[0.5, 1.0], 0.0, 1).unwrap();
        assert_eq!(obs.values[(1, 0)], t.data[(10, 1)]);
        assert_eq!(obs.values[(2, 1)], t.data[(20, 3)]);
        assert!(matches!(synthesize_observations(&t, &layout, &[0.3], 0.0, 1), Err(Error::TimeNotFound(_))));
    }

    #[test]
    fn noise_statistics_and_reproducibility() {
        let t = truth(10_001, 4);
        let layout = SensorLayout::full(10_001);
        let times = [0.25, 0.5, 0.75, 1.0, 0.25, 0.5, 0.75, 1.0, 0.25, 0.5];
        let obs = synthesize_observations(&t, &layout, &times, 0.1, 42).unwrap();
        let mut sum2 = 0.0;
        let mut count = 0.0;
        for (k, &time) in times.iter().enumerate() {
            let f = t.field_at(time).unwrap();
            for i in 0..10_001 {
                sum2 += (obs.values[(i, k)] - f[i]).powi(2);
                count += 1.0;
            }
        }
        let std = (sum2 / count).sqrt();
        assert!((std / 0.1 - 1.0).abs() < 0.02, "{std}");
        let again = synthesize_observations(&t, &layout, &times, 0.1, 42).unwrap();
        assert_eq!(again.values, obs.values);
    }

    #[test]
    fn full_and_pinv_paths_agree_on_full_layout() {
        let t = truth(65, 8);
        let b = build_pod(&t, 4).unwrap();
        let layout = SensorLayout::full(65);
        let obs = synthesize_observations(&t, &layout, &[0.5, 1.5], 0.05, 3).unwrap();
        let full = observed_coefficients_full(&obs, &b).unwrap();
        let pinv = observed_coefficients_sparse_pinv(&obs, &b, &layout).unwrap();
        assert!((full.values - pinv.values).amax() < 1e-8);
        assert!(!pinv.diagnostics.ill_conditioned);
        let noiseless = synthesize_observations(&t, &layout, &[0.5], 0.0, 3).unwrap();
        let a = observed_coefficients_full(&noiseless, &b).unwrap();
        assert!((a.column(0) - b.project(t.data.column(1).as_slice()).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn sparse_pinv_recovers_in_span_fields() {
        let t = truth(65, 8);
        // centred data has rank 2; a third mode would be arbitrary
        let b = build_pod(&t, 2).unwrap();
        let a_true = DVector::from_vec(vec![0.4, -0.2]);
        let field = b.reconstruct(a_true.as_slice()).unwrap();
        let g = Grid1D::new(65, 1.0).unwrap();
        let set = SnapshotSet::new(DMatrix::from_columns(&[field]), vec![1.0], GridMeta::OneD(g)).unwrap();
        let layout = SensorLayout::sparse(vec![7, 19, 30, 44, 58], 65).unwrap();
        let obs = synthesize_observations(&set, &layout, &[1.0], 0.0, 0).unwrap();
        let rec = observed_coefficients_sparse_pinv(&obs, &b, &layout).unwrap();
        assert!((rec.column(0) - a_true).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_sampling_is_flagged() {
        let t = truth(65, 8);
        let b = build_pod(&t, 4).unwrap();
        let layout = SensorLayout::sparse(vec![0, 64], 65).unwrap();
        let obs = synthesize_observations(&t, &layout, &[1.0], 0.0, 0).unwrap();
        let rec = observed_coefficients_sparse_pinv(&obs, &b, &layout).unwrap();
        assert!(rec.diagnostics.ill_conditioned);
    }

    #[test]
    fn reconstruction_operator_rows_are_sampled_modes() {
        let t = truth(65, 8);
        let b = build_pod(&t, 2).unwrap();
        // centred data has rank 2; node 0 vanishes in every snapshot
        let layout = SensorLayout::sparse(vec![0, 13, 40], 65).unwrap();
        let op = build_reconstruction_operator(&b, &layout);
        let c = op.jacobian();
        for (s, &i) in layout.indices.iter().enumerate() {
            for k in 0..2 {
                assert_eq!(c[(s, k)].to_bits(), b.modes[(i, k)].to_bits());
            }
        }
        assert!(c.row(0).amax() < 1e-14);
        let f = t.data.column(3).into_owned();
        let a = b.project(f.as_slice()).unwrap();
        let rec = b.reconstruct(a.as_slice()).unwrap();
        assert!((op.apply(&a) - layout.sample(rec.as_slice())).amax() < 1e-14);
    }

    #[test]
    fn csv_and_container() {
        let t = truth(17, 4);
        let layout = SensorLayout::sparse(vec![2, 9], 17).unwrap();
        let obs = synthesize_observations(&t, &layout, &[0.25, 0.5], 0.1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        obs.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# sigma=0.1\n# seed=1\n# layout=sparse\n# space=field\ntime,sensor_index,value\n"));
        assert_eq!(text.lines().count(), 5 + 4);
        let back = ObservationSet::from_container(&Container::from_bytes(&obs.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, obs);
    }

    proptest! {
        #[test]
        fn noiseless_roundtrip_through_reconstruction_map(seed in 0u64..200, a0 in -1.0f64..1.0, a1 in -1.0f64..1.0) {
            let t = truth(65, 8);
            let b = build_pod(&t, 2).unwrap();
            let layout = SensorLayout::sparse(vec![(seed % 60) as usize + 1, 33, 50], 65).unwrap();
            let a = DVector::from_vec(vec![a0, a1]);
            let field = b.reconstruct(a.as_slice()).unwrap();
            let op = build_reconstruction_operator(&b, &layout);
            let z = layout.sample(field.as_slice());
            prop_assert!((z - op.apply(&a)).amax() < 1e-12);
        }
    }
}
