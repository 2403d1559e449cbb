//! Binary artifact container shared by snapshot, basis, operator and
//! observation files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "ROMFSM01"
//! kind      u32      see [`ArtifactKind`]
//! rank      u32      1 or 2 (field rank of the underlying grid)
//! nx        u64
//! ny        u64      1 for rank-1 grids
//! count     u64      snapshot count, mode count, ...
//! dt        f64      spacing between stored records (0 when not applicable)
//! sections  u64
//! then `sections` times:
//!   name_len u32, name (utf-8)
//!   tag      u8      0 = row-major f64 block, 1 = utf-8 text
//!   block:   rows u64, cols u64, rows*cols f64
//!   text:    len u64, bytes
//! ```
//!
//! Snapshot files put the `data` block first, so the header is followed
//! directly by one row of `nx*ny` floats per snapshot.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ROMFSM01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Snapshots = 1,
    Basis = 2,
    Operators = 3,
    Observations = 4,
    Trajectory = 5,
}

impl ArtifactKind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            1 => Self::Snapshots,
            2 => Self::Basis,
            3 => Self::Operators,
            4 => Self::Observations,
            5 => Self::Trajectory,
            other => return Err(Error::Format(format!("unknown artifact kind {other}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub kind: ArtifactKind,
    pub rank: u32,
    pub nx: u64,
    pub ny: u64,
    pub count: u64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Row-major block.
    Block { rows: usize, cols: usize, data: Vec<f64> },
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new(header: Header) -> Self {
        Self { header, sections: Vec::new() }
    }

    pub fn push_block(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(rows * cols, data.len(), "block {name} has wrong length");
        self.sections.push(Section {
            name: name.to_owned(),
            payload: Payload::Block { rows, cols, data },
        });
    }

    /// Stores a matrix row by row.
    pub fn push_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        let data = m.transpose().as_slice().to_vec();
        self.push_block(name, m.nrows(), m.ncols(), data);
    }

    /// Stores each column of `m` as one row, which is how snapshots are laid out.
    pub fn push_columns(&mut self, name: &str, m: &DMatrix<f64>) {
        self.push_block(name, m.ncols(), m.nrows(), m.as_slice().to_vec());
    }

    pub fn push_vector(&mut self, name: &str, v: &[f64]) {
        self.push_block(name, 1, v.len(), v.to_vec());
    }

    pub fn push_text(&mut self, name: &str, text: &str) {
        self.sections.push(Section { name: name.to_owned(), payload: Payload::Text(text.to_owned()) });
    }

    pub fn section(&self, name: &str) -> Option<&Payload> {
        self.sections.iter().find(|s| s.name == name).map(|s| &s.payload)
    }

    pub fn block(&self, name: &str) -> Result<(usize, usize, &[f64])> {
        match self.section(name) {
            Some(Payload::Block { rows, cols, data }) => Ok((*rows, *cols, data)),
            Some(Payload::Text(_)) => Err(Error::Format(format!("section {name} is text"))),
            None => Err(Error::Format(format!("missing section {name}"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        self.block(name).map(|(_, _, d)| d.to_vec())
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (rows, cols, data) = self.block(name)?;
        Ok(DMatrix::from_row_slice(rows, cols, data))
    }

    /// Inverse of [`Container::push_columns`].
    pub fn columns(&self, name: &str) -> Result<DMatrix<f64>> {
        let (rows, cols, data) = self.block(name)?;
        Ok(DMatrix::from_column_slice(cols, rows, data))
    }

    /// Like [`Container::columns`] but moves the data out instead of copying.
    pub fn take_columns(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let sec = self.sections.iter_mut().find(|s| s.name == name);
        match sec.map(|s| &mut s.payload) {
            Some(Payload::Block { rows, cols, data }) => {
                let (rows, cols) = (*rows, *cols);
                Ok(DMatrix::from_vec(cols, rows, std::mem::take(data)))
            }
            Some(Payload::Text(_)) => Err(Error::Format(format!("section {name} is text"))),
            None => Err(Error::Format(format!("missing section {name}"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.section(name) {
            Some(Payload::Text(t)) => Ok(t),
            Some(Payload::Block { .. }) => Err(Error::Format(format!("section {name} is numeric"))),
            None => Err(Error::Format(format!("missing section {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_into(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Streams the encoding; floats are written in chunks, never as one buffer.
    pub fn write_into<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.header.kind as u32).to_le_bytes())?;
        w.write_all(&self.header.rank.to_le_bytes())?;
        w.write_all(&self.header.nx.to_le_bytes())?;
        w.write_all(&self.header.ny.to_le_bytes())?;
        w.write_all(&self.header.count.to_le_bytes())?;
        w.write_all(&self.header.dt.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u64).to_le_bytes())?;
        let mut chunk = Vec::with_capacity(8 * 4096);
        for s in &self.sections {
            w.write_all(&(s.name.len() as u32).to_le_bytes())?;
            w.write_all(s.name.as_bytes())?;
            match &s.payload {
                Payload::Block { rows, cols, data } => {
                    w.write_all(&[0])?;
                    w.write_all(&(*rows as u64).to_le_bytes())?;
                    w.write_all(&(*cols as u64).to_le_bytes())?;
                    for part in data.chunks(4096) {
                        chunk.clear();
                        for v in part {
                            chunk.extend_from_slice(&v.to_le_bytes());
                        }
                        w.write_all(&chunk)?;
                    }
                }
                Payload::Text(t) => {
                    w.write_all(&[1])?;
                    w.write_all(&(t.len() as u64).to_le_bytes())?;
                    w.write_all(t.as_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of [`Container::to_bytes`] without materialising the bytes.
    pub fn digest_hex(&self) -> String {
        let mut h = HashWriter(Sha256::new());
        self.write_into(&mut h).expect("hashing cannot fail");
        hex::encode(h.0.finalize())
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let c = Self::read_stream(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(c)
    }

    fn read_stream<R: Read>(r: &mut R) -> Result<Self> {
        let mut r = Reader(r);
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let kind = ArtifactKind::from_u32(r.u32()?)?;
        let rank = r.u32()?;
        let nx = r.u64()?;
        let ny = r.u64()?;
        let count = r.u64()?;
        let dt = r.f64()?;
        let nsec = r.u64()? as usize;
        let mut sections = Vec::with_capacity(nsec.min(64));
        for _ in 0..nsec {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("section name is not utf-8".into()))?;
            let payload = match r.take(1)?[0] {
                0 => {
                    let rows = r.u64()? as usize;
                    let cols = r.u64()? as usize;
                    let n = rows
                        .checked_mul(cols)
                        .filter(|n| n.checked_mul(8).is_some())
                        .ok_or_else(|| Error::Format("block size overflow".into()))?;
                    Payload::Block { rows, cols, data: r.floats(n)? }
                }
                1 => {
                    let len = r.u64()? as usize;
                    let text = String::from_utf8(r.take(len)?)
                        .map_err(|_| Error::Format("text section is not utf-8".into()))?;
                    Payload::Text(text)
                }
                t => return Err(Error::Format(format!("unknown section tag {t}"))),
            };
            sections.push(Section { name, payload });
        }
        Ok(Self { header: Header { kind, rank, nx, ny, count, dt }, sections })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_into(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let c = Self::read_stream(&mut f)?;
        if f.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(c)
    }

    pub fn expect_kind(self, kind: ArtifactKind) -> Result<Self> {
        if self.header.kind != kind {
            return Err(Error::Format(format!("expected {:?} artifact, found {:?}", kind, self.header.kind)));
        }
        Ok(self)
    }
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("unexpected end of data".into()),
            _ => Error::Io(e),
        })
    }
    /// Reads `n` bytes, growing the buffer as data arrives so a corrupt
    /// length cannot trigger a huge allocation up front.
    fn take(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let got = (&mut self.0).take(n as u64).read_to_end(&mut out)?;
        if got != n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        Ok(out)
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n.min(1 << 20));
        let mut buf = vec![0u8; 8 * 4096];
        let mut left = n;
        while left > 0 {
            let k = left.min(4096);
            self.fill(&mut buf[..8 * k])?;
            out.extend(buf[..8 * k].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
            left -= k;
        }
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Hex-encoded SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
