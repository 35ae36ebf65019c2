//! Posterior predictive draws, their smoothed density, and the MAP state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bingham::sample_symmetric_bingham;
use crate::error::{Error, Result};
use crate::kde::{kde_estimate, select_bandwidth, BandwidthChoice, Kde, KernelSpec, DEFAULT_LOO_CAP};
use crate::mixture::MixtureState;
use crate::quat::{SymmetryGroup, UnitQuaternion};
use crate::rjmcmc::TraceRecord;

const SHARD: usize = 1024;

/// Draws from the posterior predictive: a saved state uniformly at random, a
/// component by weight, then a symmetric Bingham draw. Shards of draws use
/// independent RNG streams so the output does not depend on thread count.
pub fn ppd_sample(
    states: &[MixtureState],
    n_new: usize,
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    seed: u64,
) -> Result<Vec<UnitQuaternion>> {
    if states.is_empty() {
        return Err(Error::invalid("posterior predictive sampling needs a non-empty trace"));
    }
    let shards = n_new.div_ceil(SHARD);
    let out: Vec<Vec<UnitQuaternion>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let count = SHARD.min(n_new - s * SHARD);
            (0..count)
                .map(|_| {
                    let state = &states[rng.random_range(0..states.len())];
                    let m = pick_component(state.alpha(), &mut rng);
                    sample_symmetric_bingham(&state.components()[m], qc, qs, &mut rng)
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

fn pick_component<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, a) in alpha.iter().enumerate() {
        acc += a;
        if u < acc {
            return i;
        }
    }
    alpha.iter().rposition(|a| *a > 0.0).unwrap_or(alpha.len() - 1)
}

/// Bandwidth used to smooth predictive draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthPolicy {
    /// Leave-one-out cross-validation over the fixed grid, scoring at most
    /// `cap` draws.
    CrossValidated { cap: usize },
    Fixed { kappa: f64 },
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::CrossValidated { cap: DEFAULT_LOO_CAP }
    }
}

/// Kernel density estimate of predictive draws.
pub fn ppd_density(
    draws: &[UnitQuaternion],
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    policy: BandwidthPolicy,
) -> Result<(Kde, Option<BandwidthChoice>)> {
    if draws.is_empty() {
        return Err(Error::invalid("no predictive draws to smooth"));
    }
    match policy {
        BandwidthPolicy::Fixed { kappa } => Ok((kde_estimate(draws, KernelSpec::new(kappa)?, qc, qs)?, None)),
        BandwidthPolicy::CrossValidated { cap } => {
            let choice = select_bandwidth(draws, qc, qs, cap)?;
            Ok((kde_estimate(draws, choice.spec, qc, qs)?, Some(choice)))
        }
    }
}

/// The saved record with the largest log posterior (first on ties).
pub fn map_estimate(records: &[TraceRecord]) -> Result<&TraceRecord> {
    let mut best: Option<&TraceRecord> = None;
    for r in records {
        if best.is_none_or(|b| r.log_posterior > b.log_posterior) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::invalid("empty trace has no MAP state"))
}

/// Monte Carlo posterior summaries over saved records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub samples: usize,
    /// `P(M = m | g)` for `m = 1..=M_max`.
    pub p_m: Vec<f64>,
    pub modal_m: usize,
    /// Conditional means given `M = modal_m`, components ordered by
    /// decreasing `λ1` (a forced uniform component stays last).
    pub mean_alpha: Vec<f64>,
    pub mean_lambda: Vec<[f64; 3]>,
    pub map_iter: usize,
    pub map_log_posterior: f64,
    pub map_m: usize,
}

pub fn summarize(records: &[TraceRecord], m_max: usize) -> Result<PosteriorSummary> {
    let map = map_estimate(records)?;
    let mut counts = vec![0usize; m_max.max(1)];
    for r in records {
        if r.m == 0 || r.m > counts.len() {
            return Err(Error::invalid(format!("record {} has M = {} outside 1..={m_max}", r.iter, r.m)));
        }
        counts[r.m - 1] += 1;
    }
    let mut modal = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[modal] {
            modal = i;
        }
    }
    let modal_m = modal + 1;
    let mut mean_alpha = vec![0.0; modal_m];
    let mut mean_lambda = vec![[0.0; 3]; modal_m];
    for r in records.iter().filter(|r| r.m == modal_m) {
        let s = r.state()?.sorted_by_concentration();
        for (i, (a, c)) in s.alpha().iter().zip(s.components()).enumerate() {
            mean_alpha[i] += a;
            for (d, l) in c.lambda3().iter().enumerate() {
                mean_lambda[i][d] += l;
            }
        }
    }
    let k = counts[modal] as f64;
    for i in 0..modal_m {
        mean_alpha[i] /= k;
        for l in mean_lambda[i].iter_mut() {
            *l /= k;
        }
    }
    Ok(PosteriorSummary {
        samples: records.len(),
        p_m: counts.iter().map(|c| *c as f64 / records.len() as f64).collect(),
        modal_m,
        mean_alpha,
        mean_lambda,
        map_iter: map.iter,
        map_log_posterior: map.log_posterior,
        map_m: map.m,
    })
}

/// Axial mean of unit quaternions identified up to sign and symmetry: each
/// is replaced by the equivalent closest to the first, sign-aligned with it,
/// and the normalized sum is returned.
pub fn mean_axis(axes: &[UnitQuaternion], qc: &SymmetryGroup, qs: &SymmetryGroup) -> Result<UnitQuaternion> {
    let first = *axes.first().ok_or_else(|| Error::invalid("no axes to average"))?;
    let mut sum = [0.0; 4];
    for a in axes {
        let best = crate::quat::equivalence_class(*a, qc, qs)
            .into_iter()
            .max_by(|x, y| x.dot(&first).abs().total_cmp(&y.dot(&first).abs()))
            .expect("non-empty class");
        let s = if best.dot(&first) < 0.0 { -1.0 } else { 1.0 };
        for (t, v) in sum.iter_mut().zip(best.to_array()) {
            *t += s * v;
        }
    }
    UnitQuaternion::from_array(sum)
}
