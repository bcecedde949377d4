//! Run-directory files: `diagnostics.csv`, `meta.json`, `certificates.jsonl`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timestepper::Sample;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const META_FILE: &str = "meta.json";
pub const CERTIFICATES_FILE: &str = "certificates.jsonl";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// One diagnostics row; the column order is part of the file contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub dissipation_cum: f64,
    pub max_c: f64,
    pub min_c: f64,
    pub newton_iters: usize,
}

impl From<&Sample> for DiagnosticsRow {
    fn from(s: &Sample) -> Self {
        Self {
            t: s.t,
            mass: s.mass,
            energy: s.energy,
            dissipation_cum: s.dissipation_cum,
            max_c: s.max_c,
            min_c: s.min_c,
            newton_iters: s.newton_iters,
        }
    }
}

pub struct DiagnosticsWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self, OutputError> {
        let file = File::create(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), inner: csv::Writer::from_writer(BufWriter::new(file)) })
    }

    pub fn write(&mut self, row: &DiagnosticsRow) -> Result<(), OutputError> {
        self.inner.serialize(row).map_err(|source| OutputError::Csv { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> Result<(), OutputError> {
        self.inner.flush().map_err(|source| OutputError::Io { path: self.path.clone(), source })
    }
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRow>, OutputError> {
    let err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(err)
}

/// One line of a certificate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Certificate {
    /// Passes when `value <= threshold`.
    pub fn at_most(check: &str, value: f64, threshold: f64) -> Self {
        Self { check: check.into(), value, threshold, pass: value <= threshold }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(check: &str, value: f64, threshold: f64) -> Self {
        Self { check: check.into(), value, threshold, pass: value >= threshold }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), OutputError> {
    let file = File::create(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|source| OutputError::Json { path: path.to_path_buf(), source })?;
        writeln!(w).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let file = File::create(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| OutputError::Json { path: path.to_path_buf(), source })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, OutputError> {
    let file = File::open(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| OutputError::Json { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagnostics_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DIAGNOSTICS_FILE);
        let rows = [
            DiagnosticsRow { t: 0.0, mass: 1e-17, energy: -0.1, dissipation_cum: 0.0, max_c: 0.01, min_c: -0.01, newton_iters: 0 },
            DiagnosticsRow { t: 1e-4, mass: 0.0, energy: -0.1000001, dissipation_cum: 1.0 / 3.0, max_c: 0.02, min_c: -0.02, newton_iters: 3 },
        ];
        let mut w = DiagnosticsWriter::create(&path).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        w.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,mass,energy,dissipation_cum,max_c,min_c,newton_iters");
        assert_eq!(read_diagnostics(&path).unwrap(), rows);
    }

    #[test]
    fn certificates_as_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CERTIFICATES_FILE);
        let certs = [Certificate::at_most("mass_drift", 1e-16, 1e-12), Certificate::at_least("interior_gap", -0.5, 0.0)];
        write_jsonl(&path, &certs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: Vec<Certificate> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, certs);
        assert!(back[0].pass && !back[1].pass);
        assert!(text.starts_with("{\"check\":\"mass_drift\",\"value\":"));
    }
}
