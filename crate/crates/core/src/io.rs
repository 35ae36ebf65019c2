//! Orientation CSV files and newline-delimited JSON traces.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quat::{euler_to_quat, quat_to_euler, EulerAngles, UnitQuaternion};
use crate::rjmcmc::TraceRecord;

/// Rows whose norm differs from 1 by more than this are rejected.
pub const UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// `w,x,y,z` per row.
    #[default]
    QuaternionCsv,
    /// Bunge `phi1,Phi,phi2` per row.
    EulerCsv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub format: InputFormat,
    pub sha256: String,
    pub rows: usize,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Reads numeric rows of width `width`. Blank lines and `#` comments are
/// skipped; a first non-numeric row is taken as a header.
fn read_rows(path: &Path, width: usize) -> Result<(Vec<(usize, Vec<f64>)>, String)> {
    let bytes = std::fs::read(path)?;
    let digest = hex(&Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|e| parse_error(path, 0, format!("not UTF-8: {e}")))?;
    let mut rows = Vec::new();
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        let parsed: std::result::Result<Vec<f64>, _> = f.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if v.len() != width {
                    return Err(parse_error(path, i + 1, format!("expected {width} columns, found {}", v.len())));
                }
                if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                    return Err(parse_error(path, i + 1, format!("non-finite value {x}")));
                }
                rows.push((i + 1, v));
                seen_data = true;
            }
            Err(e) => {
                if seen_data || !line.chars().any(|c| c.is_ascii_alphabetic()) || !rows.is_empty() {
                    return Err(parse_error(path, i + 1, format!("{e} in `{line}`")));
                }
                seen_data = true;
            }
        }
    }
    Ok((rows, digest))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn read_quaternion_csv(path: &Path) -> Result<(Vec<UnitQuaternion>, Provenance)> {
    let (rows, sha256) = read_rows(path, 4)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(parse_error(path, line, format!("quaternion norm {norm} is not within {UNIT_TOLERANCE} of 1")));
        }
        out.push(UnitQuaternion::new(v[0], v[1], v[2], v[3]).map_err(|e| parse_error(path, line, e.to_string()))?);
    }
    let prov = Provenance {
        path: path.to_path_buf(),
        format: InputFormat::QuaternionCsv,
        sha256,
        rows: out.len(),
    };
    Ok((out, prov))
}

pub fn read_euler_csv(path: &Path, unit: AngleUnit) -> Result<(Vec<UnitQuaternion>, Provenance)> {
    let (rows, sha256) = read_rows(path, 3)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        let e = match unit {
            AngleUnit::Radians => EulerAngles::new(v[0], v[1], v[2]),
            AngleUnit::Degrees => EulerAngles::from_degrees(v[0], v[1], v[2]),
        }
        .map_err(|e| parse_error(path, line, e.to_string()))?;
        out.push(euler_to_quat(e));
    }
    let prov = Provenance {
        path: path.to_path_buf(),
        format: InputFormat::EulerCsv,
        sha256,
        rows: out.len(),
    };
    Ok((out, prov))
}

pub fn ingest(path: &Path, format: InputFormat, unit: AngleUnit) -> Result<(Vec<UnitQuaternion>, Provenance)> {
    let (obs, prov) = match format {
        InputFormat::QuaternionCsv => read_quaternion_csv(path)?,
        InputFormat::EulerCsv => read_euler_csv(path, unit)?,
    };
    if obs.is_empty() {
        return Err(parse_error(path, 0, "no orientations found"));
    }
    Ok((obs, prov))
}

pub fn write_quaternion_csv(path: &Path, qs: &[UnitQuaternion]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "w,x,y,z")?;
    for q in qs {
        let [a, b, c, d] = q.to_array();
        writeln!(w, "{a},{b},{c},{d}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_euler_csv(path: &Path, qs: &[UnitQuaternion], unit: AngleUnit) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "phi1,Phi,phi2")?;
    for q in qs {
        let e = quat_to_euler(*q);
        let [a, b, c] = match unit {
            AngleUnit::Radians => [e.phi1, e.phi, e.phi2],
            AngleUnit::Degrees => e.to_degrees(),
        };
        writeln!(w, "{a},{b},{c}")?;
    }
    w.flush()?;
    Ok(())
}

/// Appends trace records to a file, flushing after each one.
pub struct TraceWriter {
    inner: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(TraceWriter {
            inner: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, rec: &TraceRecord) -> Result<()> {
        serde_json::to_writer(&mut self.inner, rec)?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        rec.state().map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
