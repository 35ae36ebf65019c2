//! Symmetrized kernel density estimation with the de la Vallée Poussin kernel.
//!
//! The kernel centered at `c` is `C(κ)·|⟨g, c⟩|^{2κ}`, i.e. `cos^{2κ}(ω/2)` in
//! the rotation angle `ω` between `g` and `c`, averaged over the symmetry
//! orbit of `g`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bingham::{dot4, inverse_orbit};
use crate::error::{Error, Result};
use crate::mixture::Odf;
use crate::quat::{hamilton, SymmetryGroup, UnitQuaternion};

/// Bandwidth grid searched by cross-validation; each entry doubles the last.
pub const KAPPA_GRID: [f64; 7] = [2.5, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0];
pub const FALLBACK_KAPPA: f64 = 20.0;
pub const DEFAULT_LOO_CAP: usize = 20_000;

/// `ln C(κ)` with `C(κ) = Γ(κ + 2) / (2 π^{3/2} Γ(κ + 1/2))`, the constant that
/// makes `C(κ)|⟨g, c⟩|^{2κ}` integrate to 1 over `S³`.
pub fn log_dvp_constant(kappa: f64) -> f64 {
    ln_gamma(kappa + 2.0) - (2.0 * PI.powf(1.5)).ln() - ln_gamma(kappa + 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kappa: f64,
    pub constant: f64,
}

impl KernelSpec {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa = {kappa} must be finite and nonnegative")));
        }
        Ok(KernelSpec {
            kappa,
            constant: log_dvp_constant(kappa).exp(),
        })
    }

    /// Unsymmetrized kernel value between two unit quaternions.
    pub fn kernel(&self, a: &[f64; 4], b: &[f64; 4]) -> f64 {
        let x = dot4(a, b).abs().min(1.0);
        let e = 2.0 * self.kappa;
        if e.fract() == 0.0 && e <= i32::MAX as f64 {
            self.constant * x.powi(e as i32)
        } else {
            self.constant * x.powf(e)
        }
    }
}

/// Symmetrized kernel at `g` for a kernel centered at `center`.
pub fn dvp_kernel(
    g: UnitQuaternion,
    center: UnitQuaternion,
    spec: &KernelSpec,
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
) -> f64 {
    let c = center.to_array();
    let orbit = inverse_orbit(g, qc, qs);
    orbit.iter().map(|o| spec.kernel(o, &c)).sum::<f64>() / orbit.len() as f64
}

/// Exact draw from the unsymmetrized kernel centered at `center`.
///
/// `t = ⟨g, c⟩²` follows `Beta(κ + 1/2, 3/2)`; the rotation axis is uniform.
pub fn sample_dvp<R: Rng + ?Sized>(center: UnitQuaternion, kappa: f64, rng: &mut R) -> UnitQuaternion {
    let beta = Beta::new(kappa + 0.5, 1.5).expect("valid beta parameters");
    let t: f64 = beta.sample(rng);
    let cos = t.sqrt();
    let sin = (1.0 - t).max(0.0).sqrt();
    let axis = loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-12 && n2 <= 1.0 {
            let n = n2.sqrt();
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let r = [sign * cos, sin * axis[0], sin * axis[1], sin * axis[2]];
    UnitQuaternion::from_unit_array(hamilton(r, center.to_array()))
}

/// Draw from the kernel symmetrized over `qc × qs`.
pub fn sample_symmetric_dvp<R: Rng + ?Sized>(
    center: UnitQuaternion,
    kappa: f64,
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    rng: &mut R,
) -> UnitQuaternion {
    let x = sample_dvp(center, kappa, rng);
    let j = rng.random_range(0..qc.len());
    let k = rng.random_range(0..qs.len());
    qc.elements()[j] * x * qs.elements()[k]
}

/// `(1/n) Σ_i` of the symmetrized kernel centered at each observation.
#[derive(Clone, Debug)]
pub struct Kde {
    centers: Vec<[f64; 4]>,
    spec: KernelSpec,
    qc: SymmetryGroup,
    qs: SymmetryGroup,
}

impl Kde {
    pub fn new(
        observations: &[UnitQuaternion],
        spec: KernelSpec,
        qc: SymmetryGroup,
        qs: SymmetryGroup,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::invalid("kernel density estimate needs at least one observation"));
        }
        Ok(Kde {
            centers: observations.iter().map(|q| q.to_array()).collect(),
            spec,
            qc,
            qs,
        })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

impl Odf for Kde {
    fn density(&self, g: UnitQuaternion) -> f64 {
        let orbit = inverse_orbit(g, &self.qc, &self.qs);
        let mut total = 0.0;
        for c in &self.centers {
            for o in &orbit {
                total += self.spec.kernel(o, c);
            }
        }
        total / (orbit.len() * self.centers.len()) as f64
    }
}

pub fn kde_estimate(
    observations: &[UnitQuaternion],
    spec: KernelSpec,
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
) -> Result<Kde> {
    Kde::new(observations, spec, qc.clone(), qs.clone())
}

/// Leave-one-out log scores `Σ_i ln f_{−i}(g_i)` for every `κ` in [`KAPPA_GRID`].
pub fn loo_scores(observations: &[UnitQuaternion], qc: &SymmetryGroup, qs: &SymmetryGroup) -> Vec<f64> {
    let n = observations.len();
    let pts: Vec<[f64; 4]> = observations.iter().map(|q| q.to_array()).collect();
    let jk = (qc.len() * qs.len()) as f64;
    let log_c: Vec<f64> = KAPPA_GRID.iter().map(|k| log_dvp_constant(*k)).collect();
    // per-observation sums Σ_{i'≠i} Σ_jk |dot|^{2κ}
    let sums: Vec<[f64; 7]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let orbit = inverse_orbit(observations[i], qc, qs);
            let mut acc = [0.0; 7];
            for (i2, c) in pts.iter().enumerate() {
                if i2 == i {
                    continue;
                }
                for o in &orbit {
                    let a = dot4(o, c).abs().min(1.0);
                    let a2 = a * a;
                    let mut p = a2 * a2 * a;
                    for s in acc.iter_mut() {
                        *s += p;
                        p *= p;
                    }
                }
            }
            acc
        })
        .collect();
    (0..KAPPA_GRID.len())
        .map(|k| {
            sums.iter()
                .map(|s| log_c[k] + (s[k] / ((n - 1) as f64 * jk)).ln())
                .sum()
        })
        .collect()
}

/// Bandwidth chosen by leave-one-out likelihood cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub spec: KernelSpec,
    pub scores: Vec<f64>,
    /// Number of observations used for scoring.
    pub scored: usize,
    pub fallback: bool,
}

/// Picks `κ` from [`KAPPA_GRID`] maximizing the leave-one-out score (smaller
/// `κ` on ties). Datasets larger than `cap` are scored on an evenly strided
/// subset.
pub fn select_bandwidth(
    observations: &[UnitQuaternion],
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    cap: usize,
) -> Result<BandwidthChoice> {
    if observations.len() < 10 {
        return Err(Error::invalid(format!(
            "bandwidth selection needs at least 10 observations, got {}",
            observations.len()
        )));
    }
    let core: Vec<UnitQuaternion> = if observations.len() > cap.max(10) {
        let stride = observations.len() as f64 / cap as f64;
        (0..cap).map(|i| observations[(i as f64 * stride) as usize]).collect()
    } else {
        observations.to_vec()
    };
    let scores = loo_scores(&core, qc, qs);
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    let (kappa, fallback) = match best {
        Some(i) => (KAPPA_GRID[i], false),
        None => {
            log::warn!("all cross-validation scores are -inf; using kappa = {FALLBACK_KAPPA}");
            (FALLBACK_KAPPA, true)
        }
    };
    Ok(BandwidthChoice {
        spec: KernelSpec::new(kappa)?,
        scores,
        scored: core.len(),
        fallback,
    })
}
