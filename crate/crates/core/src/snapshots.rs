//! Snapshot matrices produced by the full-order solvers.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::burgers::Grid1D;
use crate::container::{ArtifactKind, Container, Header};
use crate::vorticity::Grid2D;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridMeta {
    OneD(Grid1D),
    TwoD(Grid2D),
}

impl GridMeta {
    pub fn len(&self) -> usize {
        match self {
            GridMeta::OneD(g) => g.n,
            GridMeta::TwoD(g) => g.nx * g.ny,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> u32 {
        match self {
            GridMeta::OneD(_) => 1,
            GridMeta::TwoD(_) => 2,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            GridMeta::OneD(g) => (g.n, 1),
            GridMeta::TwoD(g) => (g.nx, g.ny),
        }
    }

    pub fn lengths(&self) -> (f64, f64) {
        match self {
            GridMeta::OneD(g) => (g.length, 0.0),
            GridMeta::TwoD(g) => (g.lx, g.ly),
        }
    }

    fn from_parts(rank: u32, nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        match rank {
            1 => Ok(GridMeta::OneD(Grid1D::new(nx, lx)?)),
            2 => Ok(GridMeta::TwoD(Grid2D::new(nx, ny, lx, ly)?)),
            r => Err(Error::Format(format!("unsupported field rank {r}"))),
        }
    }
}

/// Columns of `data` are flattened fields (row-major for 2D grids) stored at
/// `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub data: DMatrix<f64>,
    pub times: Vec<f64>,
    pub grid: GridMeta,
    /// State at `t = 0`; kept out of the snapshot matrix.
    pub initial: Option<DVector<f64>>,
}

impl SnapshotSet {
    pub fn new(data: DMatrix<f64>, times: Vec<f64>, grid: GridMeta) -> Result<Self> {
        if data.ncols() != times.len() {
            return Err(Error::Dimension(format!("{} columns but {} times", data.ncols(), times.len())));
        }
        if data.nrows() != grid.len() {
            return Err(Error::Dimension(format!("snapshots have {} rows, grid has {} nodes", data.nrows(), grid.len())));
        }
        if times.is_empty() {
            return Err(Error::Dimension("snapshot set is empty".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("snapshot times must be strictly increasing".into()));
        }
        Ok(Self { data, times, grid, initial: None })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.data.nrows()
    }

    /// Index of the stored snapshot at time `t` (within a relative 1e-9).
    pub fn index_of_time(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// Field at `t`, including `t = 0` when the initial state is present.
    pub fn field_at(&self, t: f64) -> Result<DVector<f64>> {
        if let Some(i) = self.index_of_time(t) {
            return Ok(self.data.column(i).into_owned());
        }
        match &self.initial {
            Some(init) if t.abs() <= 1e-12 => Ok(init.clone()),
            _ => Err(Error::TimeNotFound(t)),
        }
    }

    /// Uniform spacing between stored snapshots (0 for a single snapshot).
    pub fn spacing(&self) -> f64 {
        if self.times.len() < 2 {
            self.times.first().copied().unwrap_or(0.0)
        } else {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        }
    }

    pub fn to_container(&self) -> Container {
        let (nx, ny) = self.grid.dims();
        let (lx, ly) = self.grid.lengths();
        let mut c = Container::new(Header {
            kind: ArtifactKind::Snapshots,
            rank: self.grid.rank(),
            nx: nx as u64,
            ny: ny as u64,
            count: self.len() as u64,
            dt: self.spacing(),
        });
        c.push_columns("data", &self.data);
        c.push_vector("times", &self.times);
        c.push_vector("lengths", &[lx, ly]);
        if let Some(init) = &self.initial {
            c.push_vector("initial", init.as_slice());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        Self::from_parts(c, c.columns("data")?)
    }

    fn from_parts(c: &Container, data: DMatrix<f64>) -> Result<Self> {
        let h = c.header;
        if h.kind != ArtifactKind::Snapshots {
            return Err(Error::Format(format!("expected snapshots, found {:?}", h.kind)));
        }
        let lengths = c.vector("lengths")?;
        if lengths.len() != 2 {
            return Err(Error::Format("lengths section must hold two values".into()));
        }
        let grid = GridMeta::from_parts(h.rank, h.nx as usize, h.ny as usize, lengths[0], lengths[1])?;
        if data.ncols() as u64 != h.count {
            return Err(Error::Format("snapshot count disagrees with header".into()));
        }
        let mut set = Self::new(data, c.vector("times")?, grid)?;
        if c.section("initial").is_some() {
            set.initial = Some(DVector::from_vec(c.vector("initial")?));
        }
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write_to(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut c = Container::read_from(path)?;
        let data = c.take_columns("data")?;
        Self::from_parts(&c, data)
    }

    /// One column per snapshot, one row per node. 2D sets start with a
    /// `# nx=..,ny=..` line and list nodes in row-major order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        if let GridMeta::TwoD(g) = self.grid {
            writeln!(out, "# nx={},ny={}", g.nx, g.ny)?;
        }
        let header: Vec<String> = self.times.iter().map(|t| format!("t={t}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n_nodes() {
            let row: Vec<String> = self.data.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SnapshotSet {
        let g = Grid1D::new(4, 1.0).unwrap();
        let data = DMatrix::from_fn(4, 3, |i, j| (i * 10 + j) as f64);
        let mut s = SnapshotSet::new(data, vec![0.1, 0.2, 0.3], GridMeta::OneD(g)).unwrap();
        s.initial = Some(DVector::from_element(4, -1.0));
        s
    }

    #[test]
    fn validation() {
        let g = GridMeta::OneD(Grid1D::new(4, 1.0).unwrap());
        assert!(SnapshotSet::new(DMatrix::zeros(4, 2), vec![0.2, 0.1], g).is_err());
        assert!(SnapshotSet::new(DMatrix::zeros(5, 2), vec![0.1, 0.2], g).is_err());
        assert!(SnapshotSet::new(DMatrix::zeros(4, 2), vec![0.1], g).is_err());
    }

    #[test]
    fn container_roundtrip_and_lookup() {
        let s = small();
        let back = SnapshotSet::from_container(&Container::from_bytes(&s.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.index_of_time(0.2), Some(1));
        assert_eq!(s.field_at(0.0).unwrap()[0], -1.0);
        assert!(matches!(s.field_at(0.25), Err(Error::TimeNotFound(_))));
        assert!((s.spacing() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        small().write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 3);
    }
}
