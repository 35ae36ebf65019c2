//! The Bingham normalizing constant
//! `F(Λ) = ∫_{S³} exp(−Σ_d λ_d (v_dᵀ g)²) dg`, which does not depend on `V`.
//!
//! Two independent oracles are provided: a product quadrature in Hopf
//! coordinates and randomized quasi–Monte Carlo. The lookup table used during
//! sampling is built from the quadrature oracle on a squared-spacing grid and
//! interpolated trilinearly in `log F`.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{cube_to_s3, gauss_legendre, halton};

/// Surface area of S³, `F(0)`.
pub const TWO_PI_SQ: f64 = 2.0 * PI * PI;

pub const DEFAULT_LAMBDA_MAX: f64 = 50.0;
pub const DEFAULT_NODES: usize = 32;

/// Largest `max_d λ_d − min_d λ_d` the oracles accept.
pub const ORACLE_MAX_SPREAD: f64 = 200.0;

const TABLE_VERSION: u32 = 1;

/// Resolution of the quadrature oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Gauss–Legendre nodes in the Hopf coordinate `t ∈ [0, 1]`.
    pub t_nodes: usize,
    /// Trapezoid nodes per azimuth.
    pub azimuth_nodes: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            t_nodes: 64,
            azimuth_nodes: 128,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

fn check_oracle_range(lambda: &[f64; 4]) -> Result<()> {
    for (d, &l) in lambda.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::Range {
                coordinate: d + 1,
                value: l,
                min: -ORACLE_MAX_SPREAD,
                max: ORACLE_MAX_SPREAD,
            });
        }
    }
    let lo = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let (d, hi) = lambda
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (d, l)| if l > acc.1 { (d, l) } else { acc });
    if hi - lo > ORACLE_MAX_SPREAD {
        return Err(Error::Range {
            coordinate: d + 1,
            value: hi,
            min: lo,
            max: lo + ORACLE_MAX_SPREAD,
        });
    }
    Ok(())
}

struct HopfRule {
    t: Vec<f64>,
    w: Vec<f64>,
    cos2: Vec<f64>,
}

impl HopfRule {
    fn new(budget: OracleBudget) -> Self {
        let (t, w) = gauss_legendre(budget.t_nodes, 0.0, 1.0);
        let h = TAU / budget.azimuth_nodes as f64;
        let cos2 = (0..budget.azimuth_nodes)
            .map(|k| (k as f64 * h).cos().powi(2))
            .collect();
        HopfRule { t, w, cos2 }
    }

    /// `∫_0^{2π} exp(−s (p cos²a + q sin²a)) da` at every `t` node, with
    /// `s = t` (`upper`) or `s = 1 − t`.
    fn azimuth_integrals(&self, p: f64, q: f64, upper: bool) -> Vec<f64> {
        let h = TAU / self.cos2.len() as f64;
        self.t
            .iter()
            .map(|&t| {
                let s = if upper { t } else { 1.0 - t };
                let sum: f64 = self
                    .cos2
                    .iter()
                    .map(|&c| (-s * (q + (p - q) * c)).exp())
                    .sum();
                h * sum
            })
            .collect()
    }

    fn combine(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.t.len() {
            acc += self.w[k] * a[k] * b[k];
        }
        0.5 * acc
    }

    fn integrate(&self, lambda: &[f64; 4]) -> f64 {
        let a = self.azimuth_integrals(lambda[0], lambda[1], true);
        let b = self.azimuth_integrals(lambda[2], lambda[3], false);
        self.combine(&a, &b)
    }
}

/// Quadrature oracle for `F(Λ)` with `V = I`. `λ4` need not be zero, which
/// allows checking the shift identity `F(Λ + c·1) = e^{−c} F(Λ)`.
/// The reported error is the discrepancy against a half-resolution rule.
pub fn f_oracle(lambda: [f64; 4], budget: OracleBudget) -> Result<Estimate> {
    check_oracle_range(&lambda)?;
    if budget.t_nodes < 2 || budget.azimuth_nodes < 4 {
        return Err(Error::invalid("oracle budget too small"));
    }
    let fine = HopfRule::new(budget).integrate(&lambda);
    let coarse = HopfRule::new(OracleBudget {
        t_nodes: budget.t_nodes / 2,
        azimuth_nodes: budget.azimuth_nodes / 2,
    })
    .integrate(&lambda);
    Ok(Estimate {
        value: fine,
        std_error: (fine - coarse).abs(),
    })
}

/// Randomized quasi–Monte Carlo estimate of
/// `∫_{S³} exp(−Σ_d λ_d (v_dᵀ x)²) dx` for arbitrary orthonormal columns `v`.
/// Each replicate applies an independent Cranley–Patterson shift to a Halton
/// point set; the standard error is taken across replicates.
pub fn f_qmc(
    lambda: [f64; 4],
    columns: &[[f64; 4]; 4],
    points: usize,
    replicates: usize,
    seed: u64,
) -> Result<Estimate> {
    check_oracle_range(&lambda)?;
    if points == 0 || replicates < 2 {
        return Err(Error::invalid("need points > 0 and at least two replicates"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<[f64; 3]> = (1..=points as u64)
        .map(|i| {
            let h = halton(i, 3);
            [h[0], h[1], h[2]]
        })
        .collect();
    let means: Vec<f64> = (0..replicates)
        .map(|_| {
            let shift: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
            let sum: f64 = base
                .iter()
                .map(|p| {
                    let u = std::array::from_fn(|d| (p[d] + shift[d]).fract());
                    let x = cube_to_s3(u);
                    let e: f64 = (0..4)
                        .map(|d| {
                            let c = &columns[d];
                            let dot = c[0] * x[0] + c[1] * x[1] + c[2] * x[2] + c[3] * x[3];
                            lambda[d] * dot * dot
                        })
                        .sum();
                    (-e).exp()
                })
                .sum();
            TWO_PI_SQ * sum / points as f64
        })
        .collect();
    let r = replicates as f64;
    let mean = means.iter().sum::<f64>() / r;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(Estimate {
        value: mean,
        std_error: (var / r).sqrt(),
    })
}

/// Precomputed `F(λ1, λ2, λ3, 0)` on a tensor grid over `[0, λ_max]³` with
/// nodes at `λ = λ_max · u²`, `u` equally spaced in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerTable {
    lambda_max: f64,
    nodes: usize,
    /// Row-major, first coordinate slowest.
    values: Vec<f64>,
    log_values: Vec<f64>,
    provenance: String,
}

/// Outcome of [`NormalizerTable::check`].
#[derive(Clone, Debug, Serialize)]
pub struct TableReport {
    pub f_at_zero: f64,
    pub f_at_zero_error: f64,
    pub all_positive: bool,
    pub monotone: bool,
}

impl TableReport {
    pub fn ok(&self) -> bool {
        self.f_at_zero_error <= 1e-6 && self.all_positive && self.monotone
    }
}

impl NormalizerTable {
    /// Builds the table with the default oracle budget.
    pub fn build(lambda_max: f64, nodes: usize) -> Result<Self> {
        Self::build_with_budget(lambda_max, nodes, OracleBudget::default())
    }

    pub fn build_with_budget(lambda_max: f64, nodes: usize, budget: OracleBudget) -> Result<Self> {
        if nodes < 8 {
            return Err(Error::invalid(format!("nodes_per_axis = {nodes} < 8")));
        }
        if !(lambda_max > 0.0 && lambda_max <= ORACLE_MAX_SPREAD) {
            return Err(Error::Range {
                coordinate: 1,
                value: lambda_max,
                min: 0.0,
                max: ORACLE_MAX_SPREAD,
            });
        }
        let rule = HopfRule::new(budget);
        let grid: Vec<f64> = (0..nodes).map(|i| node_lambda(lambda_max, nodes, i)).collect();
        // F factorizes into an (λ1, λ2) part and a (λ3, 0) part per t node.
        let upper: Vec<Vec<f64>> = (0..nodes * nodes)
            .into_par_iter()
            .map(|ij| rule.azimuth_integrals(grid[ij / nodes], grid[ij % nodes], true))
            .collect();
        let lower: Vec<Vec<f64>> = grid
            .iter()
            .map(|&l3| rule.azimuth_integrals(l3, 0.0, false))
            .collect();
        let mut values = Vec::with_capacity(nodes * nodes * nodes);
        for a in &upper {
            for b in &lower {
                values.push(rule.combine(a, b));
            }
        }
        let provenance = format!(
            "hopf-quadrature t_nodes={} azimuth_nodes={}",
            budget.t_nodes, budget.azimuth_nodes
        );
        Self::from_values(lambda_max, nodes, values, provenance)
    }

    fn from_values(
        lambda_max: f64,
        nodes: usize,
        values: Vec<f64>,
        provenance: String,
    ) -> Result<Self> {
        if values.len() != nodes * nodes * nodes {
            return Err(Error::Table(format!(
                "expected {} values, found {}",
                nodes * nodes * nodes,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Table(format!("non-positive value {v}")));
        }
        let log_values = values.iter().map(|v| v.ln()).collect();
        Ok(NormalizerTable {
            lambda_max,
            nodes,
            values,
            log_values,
            provenance,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// `λ` coordinate of grid index `i`.
    pub fn node(&self, i: usize) -> f64 {
        node_lambda(self.lambda_max, self.nodes, i)
    }

    /// Stored value at grid indices `(i, j, k)`.
    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.nodes + j) * self.nodes + k]
    }

    /// Interpolated `F(λ1, λ2, λ3, 0)`.
    pub fn f_interp(&self, lambda: [f64; 3]) -> Result<f64> {
        self.log_f_interp(lambda).map(f64::exp)
    }

    /// Interpolated `ln F(λ1, λ2, λ3, 0)`: trilinear in `u = √(λ/λ_max)`.
    pub fn log_f_interp(&self, lambda: [f64; 3]) -> Result<f64> {
        let n = self.nodes;
        let top = (n - 1) as f64;
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..3 {
            let l = lambda[d];
            let slack = 1e-12 * self.lambda_max;
            if !(l >= -slack && l <= self.lambda_max + slack) {
                return Err(Error::Range {
                    coordinate: d + 1,
                    value: l,
                    min: 0.0,
                    max: self.lambda_max,
                });
            }
            let u = (l.clamp(0.0, self.lambda_max) / self.lambda_max).sqrt() * top;
            let i = (u.floor() as usize).min(n - 2);
            idx[d] = i;
            frac[d] = u - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut flat = 0;
            for d in 0..3 {
                let bit = (corner >> (2 - d)) & 1;
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                flat = flat * n + idx[d] + bit;
            }
            if w != 0.0 {
                acc += w * self.log_values[flat];
            }
        }
        Ok(acc)
    }

    pub fn check(&self) -> TableReport {
        let f0 = self.value_at(0, 0, 0);
        let n = self.nodes;
        let mut monotone = true;
        let tol = 1e-12;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = self.value_at(i, j, k);
                    if i + 1 < n && self.value_at(i + 1, j, k) > v * (1.0 + tol) {
                        monotone = false;
                    }
                    if j + 1 < n && self.value_at(i, j + 1, k) > v * (1.0 + tol) {
                        monotone = false;
                    }
                    if k + 1 < n && self.value_at(i, j, k + 1) > v * (1.0 + tol) {
                        monotone = false;
                    }
                }
            }
        }
        TableReport {
            f_at_zero: f0,
            f_at_zero_error: (f0 - TWO_PI_SQ).abs(),
            all_positive: self.values.iter().all(|v| *v > 0.0),
            monotone,
        }
    }

    /// Portable text serialization: header lines, then one value per line in
    /// row-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bodf-normalizer-table")?;
        writeln!(w, "version {TABLE_VERSION}")?;
        writeln!(w, "lambda_max {:e}", self.lambda_max)?;
        writeln!(w, "nodes {}", self.nodes)?;
        writeln!(w, "spacing squared")?;
        writeln!(w, "provenance {}", self.provenance)?;
        writeln!(w, "values {}", self.values.len())?;
        for v in &self.values {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Table(format!("missing {what}")))
        };
        let magic = next("header")?;
        if magic.trim() != "bodf-normalizer-table" {
            return Err(Error::Table(format!("bad header `{magic}`")));
        }
        let field = |line: String, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| Error::Table(format!("expected `{key}`, found `{line}`")))
        };
        let version: u32 = parse_field(&field(next("version")?, "version")?)?;
        if version != TABLE_VERSION {
            return Err(Error::Table(format!("unsupported version {version}")));
        }
        let lambda_max: f64 = parse_field(&field(next("lambda_max")?, "lambda_max")?)?;
        let nodes: usize = parse_field(&field(next("nodes")?, "nodes")?)?;
        let spacing = field(next("spacing")?, "spacing")?;
        if spacing != "squared" {
            return Err(Error::Table(format!("unsupported spacing `{spacing}`")));
        }
        let provenance = field(next("provenance")?, "provenance")?;
        let count: usize = parse_field(&field(next("values")?, "values")?)?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(parse_field(next("value")?.trim())?);
        }
        Self::from_values(lambda_max, nodes, values, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| Error::Table(format!("cannot parse `{s}`: {e}")))
}

fn node_lambda(lambda_max: f64, nodes: usize, i: usize) -> f64 {
    let u = i as f64 / (nodes - 1) as f64;
    lambda_max * u * u
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY_COLUMNS: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];

    #[test]
    fn oracle_at_zero_is_sphere_area() {
        let e = f_oracle([0.0; 4], OracleBudget::default()).unwrap();
        assert!((e.value - TWO_PI_SQ).abs() < 1e-12);
        assert!(e.std_error < 1e-12);
        let q = f_qmc([0.0; 4], &IDENTITY_COLUMNS, 64, 4, 1).unwrap();
        assert!((q.value - TWO_PI_SQ).abs() < 1e-12);
    }

    #[test]
    fn shift_identity() {
        let base = [5.0, 2.0, 1.0, 0.0];
        let f = f_oracle(base, OracleBudget::default()).unwrap().value;
        for c in [-3.0, 0.5, 7.25] {
            let shifted = base.map(|l| l + c);
            let g = f_oracle(shifted, OracleBudget::default()).unwrap().value;
            assert!((g / ((-c as f64).exp() * f) - 1.0).abs() < 1e-10, "c = {c}");
        }
    }

    #[test]
    fn oracles_agree() {
        let lambda = [5.0, 2.0, 1.0, 0.0];
        let a = f_oracle(lambda, OracleBudget::default()).unwrap();
        let b = f_qmc(lambda, &IDENTITY_COLUMNS, 4096, 32, 9).unwrap();
        let sigma = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < 3.0 * sigma, "{a:?} {b:?}");
    }

    #[test]
    fn oracle_rejects_out_of_range() {
        match f_oracle([500.0, 0.0, 0.0, 0.0], OracleBudget::default()) {
            Err(Error::Range { coordinate, .. }) => assert_eq!(coordinate, 1),
            other => panic!("{other:?}"),
        }
        assert!(f_oracle([f64::NAN, 0.0, 0.0, 0.0], OracleBudget::default()).is_err());
    }

    #[test]
    fn small_table_nodes_and_interpolation() {
        let t = NormalizerTable::build(20.0, 8).unwrap();
        let report = t.check();
        assert!(report.ok(), "{report:?}");
        for (i, j, k) in [(0, 0, 0), (3, 1, 0), (7, 7, 7), (5, 2, 6)] {
            let lam = [t.node(i), t.node(j), t.node(k)];
            let fresh = f_oracle([lam[0], lam[1], lam[2], 0.0], OracleBudget::default())
                .unwrap()
                .value;
            assert_eq!(t.value_at(i, j, k), fresh);
            let interp = t.f_interp(lam).unwrap();
            assert!((interp / fresh - 1.0).abs() < 1e-12);
        }
        assert!((t.f_interp([0.0; 3]).unwrap() - TWO_PI_SQ).abs() < 1e-9);
    }

    #[test]
    fn interpolation_range_errors_name_coordinate() {
        let t = NormalizerTable::build(20.0, 8).unwrap();
        match t.f_interp([1.0, 30.0, 0.0]) {
            Err(Error::Range { coordinate, value, .. }) => {
                assert_eq!(coordinate, 2);
                assert_eq!(value, 30.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(t.f_interp([-1.0, 0.0, 0.0]).is_err());
        assert!(NormalizerTable::build(20.0, 7).is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = NormalizerTable::build(10.0, 8).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = NormalizerTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(NormalizerTable::read_from(truncated.as_bytes()).is_err());
    }
}
