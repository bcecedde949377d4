//! Binary state snapshots.
//!
//! Layout, little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `NLCH` | 4 bytes |
//! | version (1) | u32 |
//! | dimension | u32 |
//! | cells per axis | u32 × dimension |
//! | time | f64 |
//! | mean | f64 |
//! | α | f64 |
//! | potential family id | u32 |
//! | cell values, row-major | f64 × Π cells |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::operator::{mean, Grid, State};

pub const MAGIC: &[u8; 4] = b"NLCH";
pub const VERSION: u32 = 1;
/// Largest tolerated `|mean(payload) - header mean|`.
pub const MEAN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a snapshot file (bad magic)")]
    Magic,
    #[error("unsupported snapshot version {0}; this reader understands version 1")]
    Version(u32),
    #[error("dimension {0} is not 1 or 2")]
    Dimension(u32),
    #[error("truncated snapshot: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after the payload")]
    Trailing(usize),
    #[error("header mean {header} differs from the payload mean {payload}")]
    MeanMismatch { header: f64, payload: f64 },
    #[error("snapshot has cells {found:?}, expected {expected:?}")]
    Shape { expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub cells: Vec<usize>,
    pub time: f64,
    pub mean: f64,
    pub alpha: f64,
    pub family_id: u32,
    pub values: Vec<f64>,
}

impl Snapshot {
    /// Header mean is recomputed from the values.
    pub fn new(grid: &Grid, state: &State, alpha: f64, family_id: u32) -> Self {
        Self { cells: grid.cells().to_vec(), time: state.time, mean: mean(&state.c), alpha, family_id, values: state.c.clone() }
    }

    pub fn to_state(&self) -> State {
        State { c: self.values.clone(), mean: self.mean, time: self.time }
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<(), SnapshotError> {
        if self.cells != grid.cells() {
            return Err(SnapshotError::Shape { expected: grid.cells().to_vec(), found: self.cells.clone() });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.cells.len() as u32).to_le_bytes());
        for &c in &self.cells {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for v in [self.time, self.mean, self.alpha] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.family_id.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(SnapshotError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(SnapshotError::Version(version));
        }
        let dim = r.u32()?;
        if !(1..=2).contains(&dim) {
            return Err(SnapshotError::Dimension(dim));
        }
        let cells: Vec<usize> = (0..dim).map(|_| r.u32().map(|c| c as usize)).collect::<Result<_, _>>()?;
        let (time, header_mean, alpha) = (r.f64()?, r.f64()?, r.f64()?);
        let family_id = r.u32()?;
        let n: usize = cells.iter().product();
        let expected = r.pos + 8 * n;
        if bytes.len() < expected {
            return Err(SnapshotError::Truncated { expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(SnapshotError::Trailing(bytes.len() - expected));
        }
        let values: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_, _>>()?;
        let payload = mean(&values);
        if !((payload - header_mean).abs() <= MEAN_TOLERANCE) {
            return Err(SnapshotError::MeanMismatch { header: header_mean, payload });
        }
        Ok(Self { cells, time, mean: header_mean, alpha, family_id, values })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(SnapshotError::Truncated { expected: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes through a temporary file so readers never see a partial snapshot.
pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<(), SnapshotError> {
    let io = |source| SnapshotError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&snap.to_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    let bytes = fs::read(path).map_err(|source| SnapshotError::Io { path: path.to_path_buf(), source })?;
    Snapshot::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize) -> Snapshot {
        let values: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.013).collect();
        Snapshot { cells: vec![n], time: 0.25, mean: mean(&values), alpha: 1.5, family_id: 1, values }
    }

    #[test]
    fn version_two_is_rejected() {
        let mut b = sample(8).to_bytes();
        b[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = Snapshot::from_bytes(&b).unwrap_err();
        assert!(matches!(err, SnapshotError::Version(2)));
        assert!(err.to_string().contains("version 2"));
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let b = sample(8).to_bytes();
        for cut in [0, 3, 10, b.len() - 1] {
            assert!(Snapshot::from_bytes(&b[..cut]).is_err(), "cut {cut}");
        }
        assert!(matches!(Snapshot::from_bytes(&b[..b.len() - 8]), Err(SnapshotError::Truncated { .. })));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Snapshot::from_bytes(&bad), Err(SnapshotError::Magic)));
        let mut shifted = b.clone();
        let last = shifted.len() - 8;
        shifted[last..].copy_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(Snapshot::from_bytes(&shifted), Err(SnapshotError::MeanMismatch { .. })));
        let mut long = b;
        long.push(0);
        assert!(matches!(Snapshot::from_bytes(&long), Err(SnapshotError::Trailing(1))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.nlch");
        let s = Snapshot { cells: vec![4, 3], ..sample(12) };
        write_snapshot(&path, &s).unwrap();
        assert_eq!(read_snapshot(&path).unwrap(), s);
        assert!(matches!(read_snapshot(&dir.path().join("missing")), Err(SnapshotError::Io { .. })));
    }

    proptest! {
        #[test]
        fn payload_round_trip_is_bitwise(values in prop::collection::vec(-1.0f64..1.0, 1..200), time in 0.0f64..10.0) {
            let s = Snapshot { cells: vec![values.len()], time, mean: mean(&values), alpha: 1.3, family_id: 2, values };
            let back = Snapshot::from_bytes(&s.to_bytes()).unwrap();
            prop_assert!(back.values.iter().zip(&s.values).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.time.to_bits(), s.time.to_bits());
        }
    }
}
