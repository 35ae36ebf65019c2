//! Parallel tempering: one reversible-jump chain per temperature, with one
//! adjacent swap proposal per iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rjmcmc::{adapts_after, is_saved, AcceptFlags, Chain, ChainTrace, SamplerConfig, Target, TraceRecord, Tuning};

const SWAP_STREAM: u64 = 1 << 32;

/// Strictly decreasing temperatures in `(0, 1]` starting at exactly 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TemperatureLadder(Vec<f64>);

impl TemperatureLadder {
    pub fn new(temps: Vec<f64>) -> Result<Self> {
        if temps.first() != Some(&1.0) {
            return Err(Error::invalid("temperature ladder must start at 1"));
        }
        for w in temps.windows(2) {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return Err(Error::invalid(format!(
                    "temperatures must decrease strictly within (0, 1]: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(TemperatureLadder(temps))
    }

    /// `(1, 0.9, ..., 0.1)`.
    pub fn ten_rung() -> Self {
        TemperatureLadder((0..10).map(|i| (10 - i) as f64 / 10.0).collect())
    }

    pub fn single() -> Self {
        TemperatureLadder(vec![1.0])
    }

    pub fn temps(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for TemperatureLadder {
    fn default() -> Self {
        Self::ten_rung()
    }
}

impl TryFrom<Vec<f64>> for TemperatureLadder {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TemperatureLadder> for Vec<f64> {
    fn from(l: TemperatureLadder) -> Self {
        l.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwapRule {
    /// `[π(x_{t+1}) / π(x_t)]^{T_t − T_{t+1}}`.
    #[default]
    Corrected,
    /// `π(x_t) / π(x_{t+1})` without temperature exponents.
    Literal,
}

/// Log acceptance of swapping the states at rungs `t` (temperature `t_hi`)
/// and `t + 1` (temperature `t_lo`), given their untempered log posteriors.
pub fn swap_log_acceptance(rule: SwapRule, t_hi: f64, t_lo: f64, lp_t: f64, lp_t1: f64) -> f64 {
    if lp_t == lp_t1 {
        return 0.0;
    }
    match rule {
        SwapRule::Corrected => {
            if t_hi == t_lo {
                0.0
            } else {
                (t_hi - t_lo) * (lp_t1 - lp_t)
            }
        }
        SwapRule::Literal => lp_t - lp_t1,
    }
}

/// Log acceptance of a within-chain move at temperature `temp`.
pub fn tempered_log_acceptance(log_ratio: f64, temp: f64) -> f64 {
    temp * log_ratio
}

/// Swap counts per adjacent pair `(t, t + 1)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SwapStats {
    pub proposed: Vec<u64>,
    pub accepted: Vec<u64>,
}

impl SwapStats {
    pub fn rates(&self) -> Vec<f64> {
        self.proposed
            .iter()
            .zip(&self.accepted)
            .map(|(p, a)| if *p == 0 { f64::NAN } else { *a as f64 / *p as f64 })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtTrace {
    /// Saved states of the temperature-1 chain.
    pub trace: ChainTrace,
    pub temps: Vec<f64>,
    pub swaps: SwapStats,
    pub rung_tuning: Vec<Tuning>,
}

pub fn run_pt(target: &Target, cfg: &SamplerConfig, ladder: &TemperatureLadder, rule: SwapRule) -> Result<PtTrace> {
    run_pt_streaming(target, cfg, ladder, rule, &mut |_| Ok(()))
}

/// Runs every rung for `n_iters` iterations, then one swap proposal per
/// iteration; `sink` receives the saved temperature-1 records.
pub fn run_pt_streaming(
    target: &Target,
    cfg: &SamplerConfig,
    ladder: &TemperatureLadder,
    rule: SwapRule,
    sink: &mut dyn FnMut(&TraceRecord) -> Result<()>,
) -> Result<PtTrace> {
    cfg.validate()?;
    let temps = ladder.temps();
    let mut chains = (0..temps.len())
        .map(|t| Chain::new(target, cfg, t as u64))
        .collect::<Result<Vec<_>>>()?;
    let mut swap_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    swap_rng.set_stream(SWAP_STREAM);
    let pairs = temps.len().saturating_sub(1);
    let mut swaps = SwapStats {
        proposed: vec![0; pairs],
        accepted: vec![0; pairs],
    };
    let initial = chains[0].record(0, AcceptFlags::default());
    let mut records = Vec::new();
    let mut adaptation = Vec::new();
    for iter in 0..cfg.n_iters {
        let flags: Vec<AcceptFlags> = chains
            .par_iter_mut()
            .zip(temps.par_iter())
            .map(|(c, t)| c.step(target, cfg, *t))
            .collect::<Result<_>>()?;
        if pairs > 0 {
            let t = swap_rng.random_range(0..pairs);
            let log_a = swap_log_acceptance(
                rule,
                temps[t],
                temps[t + 1],
                chains[t].log_posterior(),
                chains[t + 1].log_posterior(),
            );
            swaps.proposed[t] += 1;
            let u: f64 = swap_rng.random();
            if u.ln() < log_a {
                swaps.accepted[t] += 1;
                let (lo, hi) = chains.split_at_mut(t + 1);
                Chain::swap_states(&mut lo[t], &mut hi[0]);
            }
        }
        if adapts_after(cfg, iter) {
            for c in chains.iter_mut() {
                c.adapt();
            }
            adaptation.push(chains[0].tuning);
        }
        if iter + 1 == cfg.burn_in {
            for c in chains.iter_mut() {
                c.reset_window();
            }
        }
        if is_saved(cfg, iter) {
            let rec = chains[0].record(iter, flags.into_iter().next().unwrap_or_default());
            sink(&rec)?;
            records.push(rec);
        }
    }
    let rung_tuning = chains.iter().map(|c| c.tuning).collect();
    let head = chains.swap_remove(0);
    Ok(PtTrace {
        trace: ChainTrace {
            records,
            initial,
            adaptation,
            final_tuning: head.tuning,
            stats: head.stats,
        },
        temps: temps.to_vec(),
        swaps,
        rung_tuning,
    })
}
