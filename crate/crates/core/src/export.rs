//! Numeric grids of orientation densities in multiples of uniform.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::Odf;
use crate::normalizer::TWO_PI_SQ;
use crate::quat::{equivalence_class, euler_to_quat, EulerAngles, SymmetryGroup, UnitQuaternion};

pub const DEFAULT_RESOLUTION: f64 = 5.0;
pub const POLE_FIGURE_KAPPA: f64 = 40.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    #[default]
    EulerGrid,
    PoleFigure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub kind: GridKind,
    /// Grid spacing in degrees.
    pub resolution: f64,
    /// Crystal-frame pole directions (pole figures only).
    pub poles: Vec<[f64; 3]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            kind: GridKind::EulerGrid,
            resolution: DEFAULT_RESOLUTION,
            poles: vec![[0.0, 0.0, 1.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]],
        }
    }
}

impl GridSpec {
    pub fn euler(resolution: f64) -> Self {
        GridSpec {
            kind: GridKind::EulerGrid,
            resolution,
            poles: Vec::new(),
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let steps = 360.0 / self.resolution;
        if !(self.resolution > 0.0 && (steps - steps.round()).abs() < 1e-9) {
            out.push(format!("resolution {} does not divide 360", self.resolution));
        } else if ((180.0 / self.resolution) - (180.0 / self.resolution).round()).abs() > 1e-9 {
            out.push(format!("resolution {} does not divide 180", self.resolution));
        }
        if self.kind == GridKind::PoleFigure {
            if self.poles.is_empty() {
                out.push("pole figure needs at least one pole direction".into());
            }
            for p in &self.poles {
                let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if !(n.is_finite() && n > 0.0) {
                    out.push(format!("pole direction {p:?} has zero length"));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(p.join("; ")))
        }
    }

    fn steps(&self, span: f64) -> usize {
        (span / self.resolution).round() as usize
    }
}

/// `(phi1, Phi, phi2)` in degrees and the density in multiples of uniform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerRow {
    pub angles: [f64; 3],
    pub value: f64,
}

/// Nodes `phi1, phi2 ∈ {0, r, …, 360 − r}` and `Phi ∈ {0, r, …, 180}`.
pub fn euler_nodes(spec: &GridSpec) -> Result<Vec<[f64; 3]>> {
    spec.validate()?;
    let (n1, n2) = (spec.steps(360.0), spec.steps(180.0) + 1);
    let r = spec.resolution;
    let mut out = Vec::with_capacity(n1 * n2 * n1);
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n1 {
                out.push([i as f64 * r, j as f64 * r, k as f64 * r]);
            }
        }
    }
    Ok(out)
}

pub fn euler_grid(odf: &dyn Odf, spec: &GridSpec) -> Result<Vec<EulerRow>> {
    let nodes = euler_nodes(spec)?;
    nodes
        .par_iter()
        .map(|a| {
            let g = euler_to_quat(EulerAngles::from_degrees(a[0], a[1], a[2])?);
            let value = odf.density(g) * TWO_PI_SQ;
            if !value.is_finite() {
                return Err(Error::invalid(format!("density at {a:?} is not finite")));
            }
            Ok(EulerRow { angles: *a, value })
        })
        .collect()
}

pub fn write_euler_grid(path: &Path, rows: &[EulerRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "phi1,Phi,phi2,value")?;
    for r in rows {
        let [a, b, c] = r.angles;
        writeln!(w, "{a},{b},{c},{}", r.value)?;
    }
    w.flush()?;
    Ok(())
}

/// `(azimuth, polar)` in degrees and the point density in multiples of uniform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleRow {
    pub azimuth: f64,
    pub polar: f64,
    pub value: f64,
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Smoothed density of the specimen-frame directions of `pole` over every
/// symmetric equivalent of every sample, on the upper hemisphere. The kernel
/// is `(2κ + 1)/(4π)·|x·y|^{2κ}`, which integrates to 1 over the sphere.
pub fn pole_figure(
    samples: &[UnitQuaternion],
    pole: [f64; 3],
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    spec: &GridSpec,
    kappa: f64,
) -> Result<Vec<PoleRow>> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("pole figure needs at least one orientation"));
    }
    let h = normalize3(pole);
    let dirs: Vec<[f64; 3]> = samples
        .iter()
        .flat_map(|g| equivalence_class(*g, qc, qs).into_iter().map(move |e| e.rotate_vector(h)))
        .collect();
    let c = (2.0 * kappa + 1.0) / (4.0 * PI);
    let n_az = spec.steps(360.0);
    let n_pol = spec.steps(90.0) + 1;
    let r = spec.resolution;
    let nodes: Vec<(f64, f64)> = (0..n_az)
        .flat_map(|i| (0..n_pol).map(move |j| (i as f64 * r, j as f64 * r)))
        .collect();
    Ok(nodes
        .par_iter()
        .map(|(az, pol)| {
            let (a, p) = (az.to_radians(), pol.to_radians());
            let x = [p.sin() * a.cos(), p.sin() * a.sin(), p.cos()];
            let sum: f64 = dirs
                .iter()
                .map(|d| (x[0] * d[0] + x[1] * d[1] + x[2] * d[2]).abs().min(1.0).powf(2.0 * kappa))
                .sum();
            PoleRow {
                azimuth: *az,
                polar: *pol,
                value: c * sum / dirs.len() as f64 * 4.0 * PI,
            }
        })
        .collect())
}

pub fn write_pole_figure(path: &Path, rows: &[PoleRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "azimuth,polar,value")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.azimuth, r.polar, r.value)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Flat;
    impl Odf for Flat {
        fn density(&self, _: UnitQuaternion) -> f64 {
            1.0 / TWO_PI_SQ
        }
    }

    #[test]
    fn uniform_grid_is_one() {
        let spec = GridSpec::euler(30.0);
        let rows = euler_grid(&Flat, &spec).unwrap();
        assert_eq!(rows.len(), 12 * 7 * 12);
        for r in &rows {
            assert!((r.value - 1.0).abs() < 1e-6);
        }
        assert_eq!(euler_nodes(&GridSpec::euler(5.0)).unwrap().len(), 72 * 37 * 72);
        assert!(GridSpec::euler(7.0).validate().is_err());
        assert!(GridSpec::euler(0.0).validate().is_err());
    }

    #[test]
    fn uniform_pole_figure_is_near_one() {
        let id = SymmetryGroup::identity();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<_> = (0..20000).map(|_| UnitQuaternion::random(&mut r)).collect();
        let spec = GridSpec {
            kind: GridKind::PoleFigure,
            resolution: 30.0,
            poles: vec![[0.0, 0.0, 1.0]],
        };
        let rows = pole_figure(&samples, [0.0, 0.0, 1.0], &id, &id, &spec, 10.0).unwrap();
        assert_eq!(rows.len(), 12 * 4);
        for row in &rows {
            assert!((row.value - 1.0).abs() < 0.1, "{row:?}");
        }
    }
}
