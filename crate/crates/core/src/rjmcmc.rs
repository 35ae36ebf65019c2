//! Reversible-jump MCMC over symmetric Bingham mixtures.
//!
//! Each iteration proposes a change of `M` through a banded transition matrix,
//! then updates the weights and, component by component, the orientation and
//! the scales with Metropolis–Hastings. Per-component log densities of the data
//! are cached so a component update costs one pass over the data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bingham::{normalize4, BinghamComponent};
use crate::cluster::{modal_orientations, ModalOrientations};
use crate::error::{Error, Result};
use crate::mixture::{
    component_log_densities, dirichlet_log_density, log_orientation_prior, log_prior,
    mixture_loglik, ordered_exp_log_density, ComponentRecord, sample_ordered_exp, Dataset, Hyperparams,
    MixtureState,
};
use crate::normalizer::NormalizerTable;
use crate::quat::{hamilton, UnitQuaternion};

/// Version tag of the frame completion used to rebuild `V` from `v1`.
pub const COMPLETION: &str = "householder-v1";

const RETRY_CAP: usize = 1000;
const MIN_VARIANCE: f64 = 1e-12;

/// How `M` changes are proposed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimensionMoves {
    /// Birth draws a weight `w ~ Beta(1, M)` and new parameters from a
    /// proposal; death removes a uniformly chosen component. The pair is an
    /// exact reversible jump.
    #[default]
    Corrected,
    /// Deterministic maps as printed: death absorbs the smallest weight, birth
    /// splits the cumulative weights and adds a `Λ = 0` component.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsNormalization {
    /// Gaussian step on the interior cumulative weights, reflected into
    /// `[0, 1]` and sorted.
    #[default]
    Reflect,
    /// Gaussian step on all cumulative weights, rescaled so the last equals 1;
    /// redrawn until nonnegative.
    Cumulative,
    /// Gaussian step normalized to sum 1 before differencing, then rescaled to
    /// a valid weight vector.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleProposal {
    /// Gaussian step folded back into the ordered cone (absolute values, sorted).
    #[default]
    Fold,
    /// Gaussian step redrawn until ordered and nonnegative.
    Resample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Weight proposal variance.
    pub b: f64,
    /// Scale proposal variance.
    pub c: f64,
    /// Orientation proposal variance.
    pub d: f64,
    /// Supplied by the run configuration rather than this section.
    #[serde(skip)]
    pub seed: u64,
    pub adapt: bool,
    pub adapt_window: usize,
    pub dimension_moves: DimensionMoves,
    pub weights: WeightsNormalization,
    pub scales: ScaleProposal,
    /// Mean of the ordered-exponential proposal for newborn scales; the prior
    /// mean `mu` when unset.
    pub birth_mu: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iters: 10000,
            burn_in: 2000,
            thin: 1,
            b: 0.005,
            c: 1.0,
            d: 1e-3,
            seed: 0,
            adapt: true,
            adapt_window: 100,
            dimension_moves: DimensionMoves::Corrected,
            weights: WeightsNormalization::Reflect,
            scales: ScaleProposal::Fold,
            birth_mu: None,
        }
    }
}

impl SamplerConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.burn_in > self.n_iters {
            out.push(format!(
                "burn_in = {} exceeds n_iters = {}",
                self.burn_in, self.n_iters
            ));
        }
        if self.thin == 0 {
            out.push("thin must be at least 1".into());
        }
        for (name, v) in [
            ("b", self.b),
            ("c", self.c),
            ("d", self.d),
            ("birth_mu", self.birth_mu.unwrap_or(1.0)),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} = {v} must be positive"));
            }
        }
        if self.adapt_window == 0 {
            out.push("adapt_window must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().first() {
            Some(p) => Err(Error::invalid(p.clone())),
            None => Ok(()),
        }
    }
}

/// Row-stochastic proposal matrix over `M ∈ {1..M_max}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    /// 0.7 on the diagonal; 0.3 to the single neighbour on boundary rows and
    /// 0.15 to each neighbour otherwise.
    pub fn banded(m_max: usize) -> Self {
        assert!(m_max >= 1);
        let mut rows = vec![vec![0.0; m_max]; m_max];
        if m_max == 1 {
            rows[0][0] = 1.0;
            return TransitionMatrix { rows };
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 0.7;
            if i == 0 {
                row[1] = 0.3;
            } else if i == m_max - 1 {
                row[i - 1] = 0.3;
            } else {
                row[i - 1] = 0.15;
                row[i + 1] = 0.15;
            }
        }
        TransitionMatrix { rows }
    }

    pub fn m_max(&self) -> usize {
        self.rows.len()
    }

    /// `P[from][to]`, 1-based.
    pub fn p(&self, from: usize, to: usize) -> f64 {
        if from == 0 || to == 0 || from > self.m_max() || to > self.m_max() {
            return 0.0;
        }
        self.rows[from - 1][to - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = &self.rows[m - 1];
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j + 1;
            }
        }
        // rounding: last positive entry
        row.iter().rposition(|p| *p > 0.0).unwrap_or(m - 1) + 1
    }
}

fn death_index(state: &MixtureState) -> usize {
    assert!(state.m() >= 2 && state.free() >= 1, "death needs M >= 2");
    let alpha = state.alpha();
    let mut idx = 0;
    for i in 1..state.free() {
        if alpha[i] < alpha[idx] {
            idx = i;
        }
    }
    idx
}

/// Removes the smallest-weight free component (lowest index on ties) and
/// spreads its weight equally over the survivors.
pub fn death_map(state: &MixtureState) -> MixtureState {
    let idx = death_index(state);
    let alpha = state.alpha();
    let min = alpha[idx];
    let m_can = state.m() - 1;
    let mut new_alpha = Vec::with_capacity(m_can);
    let mut comps = Vec::with_capacity(m_can);
    for (i, (a, c)) in alpha.iter().zip(state.components()).enumerate() {
        if i != idx {
            new_alpha.push(a + min / m_can as f64);
            comps.push(c.clone());
        }
    }
    MixtureState::from_parts(new_alpha, comps, state.forced_uniform())
}

/// Inserts `u` into the cumulative weights; the smallest resulting weight goes
/// to a new `Λ = 0` component with first column `g_bar`, placed after the
/// existing free components.
pub fn birth_map(state: &MixtureState, g_bar: UnitQuaternion, u: f64) -> MixtureState {
    let m = state.m();
    let mut cum: Vec<f64> = state
        .alpha()
        .iter()
        .scan(0.0, |s, a| {
            *s += a;
            Some(*s)
        })
        .collect();
    cum[m - 1] = 1.0;
    cum.push(u);
    cum.sort_by(f64::total_cmp);
    let mut weights: Vec<f64> = cum
        .iter()
        .scan(0.0, |prev, c| {
            let w = c - *prev;
            *prev = *c;
            Some(w)
        })
        .collect();
    let mut smallest = 0;
    for i in 1..weights.len() {
        if weights[i] < weights[smallest] {
            smallest = i;
        }
    }
    let new_w = weights.remove(smallest);
    let slot = state.free();
    let mut comps = state.components().to_vec();
    comps.insert(slot, BinghamComponent::uniform(g_bar));
    weights.insert(slot, new_w);
    MixtureState::from_parts(weights, comps, state.forced_uniform())
}

fn reflect01(x: f64) -> f64 {
    let y = x.rem_euclid(2.0);
    if y > 1.0 {
        2.0 - y
    } else {
        y
    }
}

fn cumulative(alpha: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    alpha
        .iter()
        .map(|a| {
            s += a;
            s
        })
        .collect()
}

fn differences(c: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    c.iter()
        .map(|x| {
            let d = x - prev;
            prev = *x;
            d
        })
        .collect()
}

/// Candidate weights, or `None` when the redraw cap is exhausted.
pub fn propose_weights<R: Rng + ?Sized>(
    alpha: &[f64],
    b: f64,
    mode: WeightsNormalization,
    rng: &mut R,
) -> Option<Vec<f64>> {
    let m = alpha.len();
    if m == 1 {
        return Some(vec![1.0]);
    }
    let sd = b.sqrt();
    let cum = cumulative(alpha);
    match mode {
        WeightsNormalization::Reflect => {
            let mut c: Vec<f64> = cum[..m - 1]
                .iter()
                .map(|x| {
                    let n: f64 = rng.sample(StandardNormal);
                    reflect01(x + sd * n)
                })
                .collect();
            c.sort_by(f64::total_cmp);
            c.push(1.0);
            Some(differences(&c))
        }
        WeightsNormalization::Cumulative | WeightsNormalization::Literal => {
            for _ in 0..RETRY_CAP {
                let s: Vec<f64> = cum
                    .iter()
                    .map(|x| {
                        let n: f64 = rng.sample(StandardNormal);
                        x + sd * n
                    })
                    .collect();
                let scale = if mode == WeightsNormalization::Literal {
                    let total: f64 = s.iter().sum();
                    let last = s[m - 1] / total;
                    total * last
                } else {
                    s[m - 1]
                };
                if !(scale > 0.0) {
                    continue;
                }
                let mut c: Vec<f64> = s.iter().map(|x| x / scale).collect();
                c[m - 1] = 1.0;
                let a = differences(&c);
                if a.iter().all(|x| *x >= 0.0) {
                    return Some(a);
                }
            }
            None
        }
    }
}

/// Unit quaternion `(1,0,0,0) + N(0, d·I)` normalized.
pub fn random_rotation<R: Rng + ?Sized>(d: f64, rng: &mut R) -> [f64; 4] {
    let sd = d.sqrt();
    loop {
        let mut v = [1.0, 0.0, 0.0, 0.0];
        for x in v.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *x += sd * n;
        }
        if v.iter().any(|x| *x != 0.0) {
            return normalize4(v);
        }
    }
}

/// Right-multiplies `v1` by a random rotation near the identity and completes
/// the frame.
pub fn propose_orientation<R: Rng + ?Sized>(
    comp: &BinghamComponent,
    d: f64,
    rng: &mut R,
) -> BinghamComponent {
    let r = random_rotation(d, rng);
    let v1 = normalize4(hamilton(comp.v1().to_array(), r));
    BinghamComponent::from_parts_unchecked(comp.lambda3(), v1)
}

/// Candidate scales, or `None` when the redraw cap is exhausted.
pub fn propose_scales<R: Rng + ?Sized>(
    comp: &BinghamComponent,
    c: f64,
    mode: ScaleProposal,
    rng: &mut R,
) -> Option<BinghamComponent> {
    let sd = c.sqrt();
    let cur = comp.lambda3();
    let v1 = comp.frame()[0];
    match mode {
        ScaleProposal::Fold => {
            let mut l = cur.map(|x| {
                let n: f64 = rng.sample(StandardNormal);
                (x + sd * n).abs()
            });
            l.sort_by(|a, b| b.total_cmp(a));
            Some(BinghamComponent::from_parts_unchecked(l, v1))
        }
        ScaleProposal::Resample => {
            for _ in 0..RETRY_CAP {
                let l = cur.map(|x| {
                    let n: f64 = rng.sample(StandardNormal);
                    x + sd * n
                });
                if l[0] >= l[1] && l[1] >= l[2] && l[2] >= 0.0 {
                    return Some(BinghamComponent::from_parts_unchecked(l, v1));
                }
            }
            None
        }
    }
}

/// `min{1, exp(T·Δ log posterior)}` for two states of equal dimension.
pub fn accept_within(
    data: &Dataset,
    cur: &MixtureState,
    can: &MixtureState,
    h: &Hyperparams,
    table: &NormalizerTable,
) -> Result<f64> {
    let d = crate::mixture::log_posterior(data, can, h, table)?
        - crate::mixture::log_posterior(data, cur, h, table)?;
    Ok(d.min(0.0).exp())
}

/// Dimension acceptance for the deterministic maps: posterior ratio times
/// `P[can][cur] / P[cur][can]`.
pub fn accept_dimension(
    data: &Dataset,
    cur: &MixtureState,
    can: &MixtureState,
    h: &Hyperparams,
    table: &NormalizerTable,
    p: &TransitionMatrix,
) -> Result<f64> {
    if cur == can {
        return Ok(1.0);
    }
    let d = crate::mixture::log_posterior(data, can, h, table)?
        - crate::mixture::log_posterior(data, cur, h, table)?
        + p.p(can.m(), cur.m()).ln()
        - p.p(cur.m(), can.m()).ln();
    Ok(d.min(0.0).exp())
}

/// What the chain targets: the posterior, or the prior alone when there is no
/// data.
#[derive(Clone, Debug)]
pub struct Target<'a> {
    likelihood: Option<(&'a Dataset, &'a NormalizerTable)>,
    pub hyper: Hyperparams,
    pub transitions: TransitionMatrix,
    pub modal: ModalOrientations,
    pub forced_uniform: bool,
}

impl<'a> Target<'a> {
    pub fn posterior(
        data: &'a Dataset,
        table: &'a NormalizerTable,
        hyper: Hyperparams,
        forced_uniform: bool,
    ) -> Result<Self> {
        hyper.validate()?;
        let modal = modal_orientations(data.observations(), data.qc(), data.qs(), hyper.m_max)?;
        Ok(Target {
            likelihood: Some((data, table)),
            hyper,
            transitions: TransitionMatrix::banded(hyper.m_max),
            modal,
            forced_uniform,
        })
    }

    /// Target without the likelihood term.
    pub fn prior_only(hyper: Hyperparams, forced_uniform: bool) -> Result<Self> {
        hyper.validate()?;
        Ok(Target {
            likelihood: None,
            hyper,
            transitions: TransitionMatrix::banded(hyper.m_max),
            modal: ModalOrientations(vec![UnitQuaternion::IDENTITY; hyper.m_max]),
            forced_uniform,
        })
    }

    pub fn data(&self) -> Option<&'a Dataset> {
        self.likelihood.map(|(d, _)| d)
    }

    pub fn table(&self) -> Option<&'a NormalizerTable> {
        self.likelihood.map(|(_, t)| t)
    }

    pub fn initial_state(&self) -> MixtureState {
        MixtureState::uniform(self.modal.get(0), self.forced_uniform)
    }

    fn in_support(&self, comp: &BinghamComponent) -> bool {
        match self.likelihood {
            Some((_, t)) => comp.lambda()[0] <= t.lambda_max(),
            None => true,
        }
    }

    fn densities(&self, comp: &BinghamComponent) -> Result<Vec<f64>> {
        match self.likelihood {
            Some((d, t)) => component_log_densities(d, comp, t),
            None => Ok(Vec::new()),
        }
    }

    fn loglik(&self, alpha: &[f64], cache: &[Vec<f64>]) -> f64 {
        if self.likelihood.is_none() {
            return 0.0;
        }
        let refs: Vec<&[f64]> = cache.iter().map(|v| v.as_slice()).collect();
        mixture_loglik(alpha, &refs)
    }
}

/// Proposal variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Per-iteration acceptance indicators; `None` when the move was not tried.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptFlags {
    pub dimension: Option<bool>,
    pub weights: Option<bool>,
    pub orientation: Vec<bool>,
    pub scales: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub births_proposed: u64,
    pub births_accepted: u64,
    pub deaths_proposed: u64,
    pub deaths_accepted: u64,
    pub weights_proposed: u64,
    pub weights_accepted: u64,
    pub orientation_proposed: u64,
    pub orientation_accepted: u64,
    pub scales_proposed: u64,
    pub scales_accepted: u64,
}


/// One saved iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub alpha: Vec<f64>,
    pub components: Vec<ComponentRecord>,
    pub log_posterior: f64,
    #[serde(default)]
    pub forced_uniform: bool,
    #[serde(default)]
    pub accepted: AcceptFlags,
    #[serde(default = "completion_tag")]
    pub completion: String,
}

fn completion_tag() -> String {
    COMPLETION.to_string()
}

impl TraceRecord {
    pub fn from_state(iter: usize, state: &MixtureState, log_posterior: f64, accepted: AcceptFlags) -> Self {
        TraceRecord {
            iter,
            m: state.m(),
            alpha: state.alpha().to_vec(),
            components: state
                .components()
                .iter()
                .map(ComponentRecord::from_component)
                .collect(),
            log_posterior,
            forced_uniform: state.forced_uniform(),
            accepted,
            completion: completion_tag(),
        }
    }

    pub fn state(&self) -> Result<MixtureState> {
        if self.completion != COMPLETION {
            return Err(Error::invalid(format!(
                "unsupported frame completion `{}`",
                self.completion
            )));
        }
        if self.m != self.alpha.len() || self.m != self.components.len() {
            return Err(Error::invalid(format!(
                "record {} declares M = {} with {} weights and {} components",
                self.iter,
                self.m,
                self.alpha.len(),
                self.components.len()
            )));
        }
        let comps = self
            .components
            .iter()
            .map(|c| c.to_component())
            .collect::<Result<Vec<_>>>()?;
        MixtureState::new(self.alpha.clone(), comps, self.forced_uniform)
    }
}

/// Saved post-burn-in iterations plus diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub records: Vec<TraceRecord>,
    pub initial: TraceRecord,
    /// Proposal variances after each adaptation window.
    pub adaptation: Vec<Tuning>,
    pub final_tuning: Tuning,
    pub stats: MoveStats,
}

impl ChainTrace {
    pub fn states(&self) -> Result<Vec<MixtureState>> {
        self.records.iter().map(|r| r.state()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Window {
    tried: [u64; 3],
    accepted: [u64; 3],
}

/// One Markov chain with its cached per-component data densities.
#[derive(Clone, Debug)]
pub(crate) struct Chain {
    pub(crate) state: MixtureState,
    cache: Vec<Vec<f64>>,
    loglik: f64,
    logprior: f64,
    pub(crate) tuning: Tuning,
    window: Window,
    pub(crate) stats: MoveStats,
    pub(crate) rng: ChaCha8Rng,
}

impl Chain {
    pub(crate) fn new(target: &Target, cfg: &SamplerConfig, stream: u64) -> Result<Self> {
        let state = target.initial_state();
        let cache = state
            .components()
            .iter()
            .map(|c| target.densities(c))
            .collect::<Result<Vec<_>>>()?;
        let loglik = target.loglik(state.alpha(), &cache);
        let logprior = log_prior(&state, &target.hyper);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        Ok(Chain {
            state,
            cache,
            loglik,
            logprior,
            tuning: Tuning {
                b: cfg.b,
                c: cfg.c,
                d: cfg.d,
            },
            window: Window::default(),
            stats: MoveStats::default(),
            rng,
        })
    }

    pub(crate) fn log_posterior(&self) -> f64 {
        self.loglik + self.logprior
    }

    /// Exchanges the current states (and caches) of two chains; tuning and
    /// RNG streams stay with their rungs.
    pub(crate) fn swap_states(a: &mut Chain, b: &mut Chain) {
        std::mem::swap(&mut a.state, &mut b.state);
        std::mem::swap(&mut a.cache, &mut b.cache);
        std::mem::swap(&mut a.loglik, &mut b.loglik);
        std::mem::swap(&mut a.logprior, &mut b.logprior);
    }

    fn accept(&mut self, log_a: f64) -> bool {
        let u: f64 = self.rng.random();
        log_a.is_finite() && u.ln() < log_a || log_a == f64::INFINITY
    }

    fn tally(&mut self, kind: usize, accepted: bool) {
        self.window.tried[kind] += 1;
        if accepted {
            self.window.accepted[kind] += 1;
        }
    }

    /// One full iteration at temperature `temp`.
    pub(crate) fn step(&mut self, target: &Target, cfg: &SamplerConfig, temp: f64) -> Result<AcceptFlags> {
        let mut flags = AcceptFlags {
            dimension: self.dimension_move(target, cfg, temp)?,
            ..Default::default()
        };
        flags.weights = self.weights_move(target, cfg, temp);
        for m in 0..self.state.free() {
            let o = self.orientation_move(target, m, temp)?;
            flags.orientation.push(o);
            let s = self.scales_move(target, cfg, m, temp)?;
            flags.scales.push(s);
        }
        Ok(flags)
    }

    fn dimension_move(&mut self, target: &Target, cfg: &SamplerConfig, temp: f64) -> Result<Option<bool>> {
        let m = self.state.m();
        let m_can = target.transitions.sample_next(m, &mut self.rng);
        if m_can == m {
            return Ok(None);
        }
        let birth_mu = cfg.birth_mu.unwrap_or(target.hyper.mu);
        let p_ratio = target.transitions.p(m_can, m).ln() - target.transitions.p(m, m_can).ln();
        let birth = m_can == m + 1;
        if birth {
            self.stats.births_proposed += 1;
        } else {
            self.stats.deaths_proposed += 1;
        }
        let (can, cache, extra) = match (cfg.dimension_moves, birth) {
            (DimensionMoves::Corrected, true) => {
                let w = 1.0 - self.rng.random::<f64>().powf(1.0 / m as f64);
                let lam = sample_ordered_exp(birth_mu, &mut self.rng);
                let v1 = UnitQuaternion::random(&mut self.rng);
                let pos = self.rng.random_range(0..=self.state.free());
                let comp = BinghamComponent::from_parts_unchecked(lam, v1.to_array());
                if !target.in_support(&comp) || w <= 0.0 || w >= 1.0 {
                    self.accept(f64::NEG_INFINITY);
                    return Ok(Some(false));
                }
                let log_q = ordered_exp_log_density(lam, birth_mu) + log_orientation_prior();
                let mut alpha: Vec<f64> = self.state.alpha().iter().map(|a| a * (1.0 - w)).collect();
                alpha.insert(pos, w);
                renormalize(&mut alpha);
                let mut comps = self.state.components().to_vec();
                comps.insert(pos, comp.clone());
                let mut cache = self.cache.clone();
                cache.insert(pos, target.densities(&comp)?);
                let can = MixtureState::from_parts(alpha, comps, self.state.forced_uniform());
                (can, cache, -(m as f64).ln() - log_q)
            }
            (DimensionMoves::Corrected, false) => {
                let idx = self.rng.random_range(0..self.state.free());
                let w = self.state.alpha()[idx];
                if w >= 1.0 {
                    self.accept(f64::NEG_INFINITY);
                    return Ok(Some(false));
                }
                let removed = &self.state.components()[idx];
                let log_q = ordered_exp_log_density(removed.lambda3(), birth_mu) + log_orientation_prior();
                let mut alpha = self.state.alpha().to_vec();
                alpha.remove(idx);
                for a in alpha.iter_mut() {
                    *a /= 1.0 - w;
                }
                renormalize(&mut alpha);
                let mut comps = self.state.components().to_vec();
                comps.remove(idx);
                let mut cache = self.cache.clone();
                cache.remove(idx);
                let can = MixtureState::from_parts(alpha, comps, self.state.forced_uniform());
                (can, cache, ((m - 1) as f64).ln() + log_q)
            }
            (DimensionMoves::Literal, true) => {
                let u: f64 = self.rng.random();
                let can = birth_map(&self.state, target.modal.get(m_can - 1), u);
                let slot = self.state.free();
                let mut cache = self.cache.clone();
                cache.insert(slot, target.densities(&can.components()[slot])?);
                (can, cache, 0.0)
            }
            (DimensionMoves::Literal, false) => {
                let removed = death_index(&self.state);
                let can = death_map(&self.state);
                let mut cache = self.cache.clone();
                cache.remove(removed);
                (can, cache, 0.0)
            }
        };
        let loglik = target.loglik(can.alpha(), &cache);
        let logprior = log_prior(&can, &target.hyper);
        let log_a = temp * (loglik + logprior - self.loglik - self.logprior) + p_ratio + extra;
        let ok = self.accept(log_a);
        if ok {
            if birth {
                self.stats.births_accepted += 1;
            } else {
                self.stats.deaths_accepted += 1;
            }
            self.state = can;
            self.cache = cache;
            self.loglik = loglik;
            self.logprior = logprior;
        }
        Ok(Some(ok))
    }

    fn weights_move(&mut self, target: &Target, cfg: &SamplerConfig, temp: f64) -> Option<bool> {
        if self.state.m() < 2 {
            return None;
        }
        self.stats.weights_proposed += 1;
        let Some(alpha) = propose_weights(self.state.alpha(), self.tuning.b, cfg.weights, &mut self.rng) else {
            self.tally(0, false);
            return Some(false);
        };
        let loglik = target.loglik(&alpha, &self.cache);
        let d_prior = dirichlet_log_density(&alpha, target.hyper.beta)
            - dirichlet_log_density(self.state.alpha(), target.hyper.beta);
        let log_a = temp * (loglik - self.loglik + d_prior);
        let ok = self.accept(log_a);
        self.tally(0, ok);
        if ok {
            self.stats.weights_accepted += 1;
            *self.state.alpha_mut() = alpha;
            self.loglik = loglik;
            self.logprior += d_prior;
        }
        Some(ok)
    }

    fn replace_component(
        &mut self,
        target: &Target,
        m: usize,
        comp: BinghamComponent,
        d_prior: f64,
        temp: f64,
    ) -> Result<bool> {
        let same_density = comp.is_uniform() && self.state.components()[m].is_uniform();
        let new_cache = if same_density || target.data().is_none() {
            None
        } else {
            Some(target.densities(&comp)?)
        };
        let loglik = match &new_cache {
            Some(v) => {
                let refs: Vec<&[f64]> = self
                    .cache
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if i == m { v.as_slice() } else { c.as_slice() })
                    .collect();
                mixture_loglik(self.state.alpha(), &refs)
            }
            None => self.loglik,
        };
        let log_a = temp * (loglik - self.loglik + d_prior);
        let ok = self.accept(log_a);
        if ok {
            self.state.components_mut()[m] = comp;
            if let Some(v) = new_cache {
                self.cache[m] = v;
            }
            self.loglik = loglik;
            self.logprior += d_prior;
        }
        Ok(ok)
    }

    fn orientation_move(&mut self, target: &Target, m: usize, temp: f64) -> Result<bool> {
        self.stats.orientation_proposed += 1;
        let comp = propose_orientation(&self.state.components()[m], self.tuning.d, &mut self.rng);
        let ok = self.replace_component(target, m, comp, 0.0, temp)?;
        self.tally(1, ok);
        if ok {
            self.stats.orientation_accepted += 1;
        }
        Ok(ok)
    }

    fn scales_move(&mut self, target: &Target, cfg: &SamplerConfig, m: usize, temp: f64) -> Result<bool> {
        self.stats.scales_proposed += 1;
        let cur = &self.state.components()[m];
        let Some(comp) = propose_scales(cur, self.tuning.c, cfg.scales, &mut self.rng) else {
            self.tally(2, false);
            return Ok(false);
        };
        if !target.in_support(&comp) {
            self.accept(f64::NEG_INFINITY);
            self.tally(2, false);
            return Ok(false);
        }
        let mu = target.hyper.mu;
        let d_prior = ordered_exp_log_density(comp.lambda3(), mu) - ordered_exp_log_density(cur.lambda3(), mu);
        let ok = self.replace_component(target, m, comp, d_prior, temp)?;
        self.tally(2, ok);
        if ok {
            self.stats.scales_accepted += 1;
        }
        Ok(ok)
    }

    /// Rescales proposal variances from the window acceptance rates.
    pub(crate) fn adapt(&mut self) {
        let w = std::mem::take(&mut self.window);
        let vars = [&mut self.tuning.b, &mut self.tuning.d, &mut self.tuning.c];
        let caps = [1.0, 10.0, 1e4];
        for (k, v) in vars.into_iter().enumerate() {
            if w.tried[k] > 0 {
                let rate = w.accepted[k] as f64 / w.tried[k] as f64;
                *v = (*v * (0.5 * (rate - 0.25)).exp()).clamp(MIN_VARIANCE, caps[k]);
            }
        }
    }

    pub(crate) fn reset_window(&mut self) {
        self.window = Window::default();
    }

    pub(crate) fn record(&self, iter: usize, flags: AcceptFlags) -> TraceRecord {
        TraceRecord::from_state(iter, &self.state, self.log_posterior(), flags)
    }

    #[cfg(test)]
    pub(crate) fn cached_loglik(&self) -> f64 {
        self.loglik
    }
}

fn renormalize(alpha: &mut [f64]) {
    let s: f64 = alpha.iter().sum();
    for a in alpha.iter_mut() {
        *a = (*a / s).clamp(0.0, 1.0);
    }
}

/// Whether iteration `iter` (0-based) is saved.
pub(crate) fn is_saved(cfg: &SamplerConfig, iter: usize) -> bool {
    iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0
}

/// Whether adaptation runs after iteration `iter`.
pub(crate) fn adapts_after(cfg: &SamplerConfig, iter: usize) -> bool {
    cfg.adapt && iter < cfg.burn_in && (iter + 1) % cfg.adapt_window == 0
}

/// Runs the sampler, calling `sink` on every saved record as it is produced.
pub fn run_streaming(
    target: &Target,
    cfg: &SamplerConfig,
    sink: &mut dyn FnMut(&TraceRecord) -> Result<()>,
) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut chain = Chain::new(target, cfg, 0)?;
    let initial = chain.record(0, AcceptFlags::default());
    let mut records = Vec::new();
    let mut adaptation = Vec::new();
    for iter in 0..cfg.n_iters {
        let flags = chain.step(target, cfg, 1.0)?;
        if adapts_after(cfg, iter) {
            chain.adapt();
            adaptation.push(chain.tuning);
        }
        if iter + 1 == cfg.burn_in {
            chain.reset_window();
        }
        if is_saved(cfg, iter) {
            let rec = chain.record(iter, flags);
            debug_assert!(rec.state().is_ok());
            sink(&rec)?;
            records.push(rec);
        }
    }
    Ok(ChainTrace {
        records,
        initial,
        adaptation,
        final_tuning: chain.tuning,
        stats: chain.stats,
    })
}

pub fn run(target: &Target, cfg: &SamplerConfig) -> Result<ChainTrace> {
    run_streaming(target, cfg, &mut |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{log_posterior, sample_prior};
    use crate::quat::SymmetryGroup;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn comp(l: [f64; 3], r: &mut ChaCha8Rng) -> BinghamComponent {
        BinghamComponent::from_v1(l, UnitQuaternion::random(r)).unwrap()
    }

    #[test]
    fn transition_matrix_pattern() {
        let p = TransitionMatrix::banded(5);
        assert_eq!(p.p(1, 1), 0.7);
        assert_eq!(p.p(1, 2), 0.3);
        assert_eq!(p.p(2, 1), 0.15);
        assert_eq!(p.p(2, 3), 0.15);
        assert_eq!(p.p(2, 2), 0.7);
        assert_eq!(p.p(5, 4), 0.3);
        for row in p.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(TransitionMatrix::banded(1).rows(), &[vec![1.0]]);
        let p2 = TransitionMatrix::banded(2);
        assert_eq!(p2.rows(), &[vec![0.7, 0.3], vec![0.3, 0.7]]);
    }

    #[test]
    fn death_map_examples() {
        let mut r = rng(1);
        let c = || BinghamComponent::uniform(UnitQuaternion::IDENTITY);
        let s = MixtureState::new(vec![0.5, 0.5], vec![c(), c()], false).unwrap();
        let d = death_map(&s);
        assert_eq!(d.alpha(), &[1.0]);

        let a = comp([3.0, 2.0, 1.0], &mut r);
        let b = comp([4.0, 2.0, 1.0], &mut r);
        let s = MixtureState::new(vec![0.6, 0.3, 0.1], vec![a.clone(), b.clone(), c()], false).unwrap();
        let d = death_map(&s);
        assert!((d.alpha()[0] - 0.65).abs() < 1e-15);
        assert!((d.alpha()[1] - 0.35).abs() < 1e-15);
        assert_eq!(d.components(), &[a, b]);

        for _ in 0..1000 {
            let s = sample_prior(&Hyperparams::default(), false, &mut r);
            if s.m() >= 2 {
                let d = death_map(&s);
                d.check().unwrap();
            }
        }
    }

    #[test]
    fn birth_map_examples() {
        let s = MixtureState::uniform(UnitQuaternion::IDENTITY, false);
        let g = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], 0.3).unwrap();
        let b = birth_map(&s, g, 0.4);
        assert!((b.alpha()[0] - 0.6).abs() < 1e-15);
        assert!((b.alpha()[1] - 0.4).abs() < 1e-15);
        assert!(b.components()[1].is_uniform());
        assert_eq!(b.components()[1].v1(), g);

        let mut r = rng(2);
        let h = Hyperparams::default();
        for _ in 0..1000 {
            let s = sample_prior(&h, false, &mut r);
            let u: f64 = r.random();
            let b = birth_map(&s, UnitQuaternion::random(&mut r), u);
            b.check().unwrap();
            assert_eq!(b.m(), s.m() + 1);
        }
        let forced = sample_prior(&h, true, &mut r);
        let b = birth_map(&forced, UnitQuaternion::IDENTITY, 0.5);
        b.check().unwrap();
        assert!(b.components().last().unwrap().is_uniform());
    }

    #[test]
    fn birth_of_uniform_leaves_uniform_density() {
        let table = NormalizerTable::build(20.0, 8).unwrap();
        let id = SymmetryGroup::identity();
        let mut r = rng(3);
        let s = MixtureState::uniform(UnitQuaternion::IDENTITY, false);
        let b = birth_map(&s, UnitQuaternion::random(&mut r), 0.3);
        for _ in 0..10 {
            let g = UnitQuaternion::random(&mut r);
            let x = crate::mixture::sbm_logpdf(g, &s, &id, &id, &table).unwrap();
            let y = crate::mixture::sbm_logpdf(g, &b, &id, &id, &table).unwrap();
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_proposals_are_valid() {
        let mut r = rng(4);
        let alpha = [0.2, 0.5, 0.3];
        for mode in [
            WeightsNormalization::Reflect,
            WeightsNormalization::Cumulative,
            WeightsNormalization::Literal,
        ] {
            for _ in 0..1000 {
                let a = propose_weights(&alpha, 0.01, mode, &mut r).unwrap();
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(a.iter().all(|x| *x >= 0.0));
            }
            let a = propose_weights(&alpha, 1e-24, mode, &mut r).unwrap();
            for (x, y) in a.iter().zip(alpha) {
                assert!((x - y).abs() < 1e-10);
            }
            assert_eq!(propose_weights(&[1.0], 0.1, mode, &mut r).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn reflect_proposal_is_symmetric() {
        // Forward and backward transition frequencies between two fixed cells.
        let mut r = rng(5);
        let a = [0.2, 0.3, 0.5];
        let b = [0.3, 0.35, 0.35];
        let cell = |x: &[f64], c: &[f64]| {
            cumulative(x)
                .iter()
                .zip(cumulative(c))
                .take(2)
                .all(|(p, q)| (p - q).abs() < 0.02)
        };
        let n = 400_000;
        let mut fwd = 0;
        let mut bwd = 0;
        for _ in 0..n {
            if cell(&propose_weights(&a, 0.01, WeightsNormalization::Reflect, &mut r).unwrap(), &b) {
                fwd += 1;
            }
            if cell(&propose_weights(&b, 0.01, WeightsNormalization::Reflect, &mut r).unwrap(), &a) {
                bwd += 1;
            }
        }
        let sd = ((fwd + bwd) as f64).sqrt();
        assert!(fwd > 100);
        assert!(((fwd - bwd) as f64).abs() < 4.0 * sd, "{fwd} {bwd}");
    }

    #[test]
    fn orientation_and_scale_proposals() {
        let mut r = rng(6);
        let c = comp([6.0, 3.0, 1.0], &mut r);
        let same = propose_orientation(&c, 1e-30, &mut r);
        assert!(same.v1().approx_eq_rotation(&c.v1(), 1e-12));
        for _ in 0..200 {
            let o = propose_orientation(&c, 0.05, &mut r);
            BinghamComponent::new(o.lambda(), *o.frame()).unwrap();
            for mode in [ScaleProposal::Fold, ScaleProposal::Resample] {
                let s = propose_scales(&c, 4.0, mode, &mut r).unwrap();
                BinghamComponent::new(s.lambda(), *s.frame()).unwrap();
            }
        }
        let s = propose_scales(&c, 1e-30, ScaleProposal::Fold, &mut r).unwrap();
        assert!((s.lambda()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_angle_matches_rejection_oracle() {
        // The angle of the normalized Gaussian rotation against draws of the
        // same construction by rejection from a uniform box.
        let d: f64 = 0.02;
        let mut r = rng(7);
        let n = 20000;
        let mut a: Vec<f64> = (0..n)
            .map(|_| 2.0 * random_rotation(d, &mut r)[0].abs().min(1.0).acos())
            .collect();
        let sd = d.sqrt();
        let mut b = Vec::with_capacity(n);
        while b.len() < n {
            let x: [f64; 4] = std::array::from_fn(|i| {
                let c = if i == 0 { 1.0 } else { 0.0 };
                c + 6.0 * sd * (2.0 * r.random::<f64>() - 1.0)
            });
            let e: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let c = if i == 0 { 1.0 } else { 0.0 };
                    (v - c).powi(2)
                })
                .sum::<f64>()
                / (2.0 * d);
            if r.random::<f64>() < (-e).exp() {
                let q = normalize4(x);
                b.push(2.0 * q[0].abs().min(1.0).acos());
            }
        }
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let ks = crate::stats::ks_two_sample(&a, &b);
        assert!(ks < 0.025, "{ks}");
    }

    #[test]
    fn accept_functions_match_brute_force() {
        let table = NormalizerTable::build(30.0, 8).unwrap();
        let qc = SymmetryGroup::named("tetragonal").unwrap();
        let qs = SymmetryGroup::identity();
        let mut r = rng(8);
        let obs: Vec<_> = (0..40).map(|_| UnitQuaternion::random(&mut r)).collect();
        let data = Dataset::new(obs, qc, qs).unwrap();
        let h = Hyperparams::default();
        let cur = MixtureState::new(vec![0.4, 0.6], vec![comp([5.0, 2.0, 1.0], &mut r), comp([1.0, 0.5, 0.0], &mut r)], false).unwrap();
        assert_eq!(accept_within(&data, &cur, &cur, &h, &table).unwrap(), 1.0);
        let can = MixtureState::new(vec![0.5, 0.5], cur.components().to_vec(), false).unwrap();
        let a = accept_within(&data, &cur, &can, &h, &table).unwrap();
        let direct = (log_posterior(&data, &can, &h, &table).unwrap()
            - log_posterior(&data, &cur, &h, &table).unwrap())
        .min(0.0)
        .exp();
        assert!((a - direct).abs() < 1e-10);
        let back = accept_within(&data, &can, &cur, &h, &table).unwrap();
        assert!(a == 1.0 || back == 1.0);

        // Uniform data, birth of a uniform component: only prior and proposal
        // terms remain.
        let p = TransitionMatrix::banded(h.m_max);
        let uni = MixtureState::uniform(UnitQuaternion::IDENTITY, false);
        let born = birth_map(&uni, UnitQuaternion::IDENTITY, 0.25);
        let am = accept_dimension(&data, &uni, &born, &h, &table, &p).unwrap();
        let hand = (6f64.ln() - 3.0 * h.mu.ln() - crate::normalizer::TWO_PI_SQ.ln()
            + h.nu.ln()
            + (0.15f64 / 0.3).ln())
        .min(0.0)
        .exp();
        assert!((am - hand).abs() < 1e-10, "{am} {hand}");
        assert_eq!(accept_dimension(&data, &uni, &uni, &h, &table, &p).unwrap(), 1.0);
    }

    #[test]
    fn chain_cache_matches_full_recomputation() {
        let table = NormalizerTable::build(30.0, 10).unwrap();
        let qc = SymmetryGroup::named("hexagonal").unwrap();
        let qs = SymmetryGroup::named("cyclic-2").unwrap();
        let mut r = rng(9);
        let truth = comp([12.0, 6.0, 2.0], &mut r);
        let obs: Vec<_> = (0..200)
            .map(|_| crate::bingham::sample_symmetric_bingham(&truth, &qc, &qs, &mut r))
            .collect();
        let data = Dataset::new(obs, qc, qs).unwrap();
        let h = Hyperparams {
            m_max: 3,
            ..Default::default()
        };
        for moves in [DimensionMoves::Corrected, DimensionMoves::Literal] {
            let target = Target::posterior(&data, &table, h, false).unwrap();
            let cfg = SamplerConfig {
                n_iters: 300,
                burn_in: 100,
                dimension_moves: moves,
                birth_mu: Some(3.0),
                ..Default::default()
            };
            let mut chain = Chain::new(&target, &cfg, 0).unwrap();
            for _ in 0..300 {
                chain.step(&target, &cfg, 1.0).unwrap();
                chain.state.check().unwrap();
                let full = crate::mixture::loglik(&data, &chain.state, &table).unwrap();
                assert!((full - chain.cached_loglik()).abs() < 1e-8 * full.abs().max(1.0));
                let lp = log_prior(&chain.state, &h);
                assert!((lp - chain.logprior).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_iterations_and_determinism() {
        let h = Hyperparams::default();
        let target = Target::prior_only(h, false).unwrap();
        let cfg = SamplerConfig {
            n_iters: 0,
            burn_in: 0,
            ..Default::default()
        };
        let t = run(&target, &cfg).unwrap();
        assert!(t.records.is_empty());
        let init = t.initial.state().unwrap();
        assert_eq!(init.m(), 1);
        assert!(init.components()[0].is_uniform());
        assert_eq!(init.alpha(), &[1.0]);

        let cfg = SamplerConfig {
            n_iters: 500,
            burn_in: 100,
            thin: 3,
            seed: 11,
            ..Default::default()
        };
        let a = run(&target, &cfg).unwrap();
        let b = run(&target, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 400usize.div_ceil(3));
        for rec in &a.records {
            rec.state().unwrap();
        }
        assert_eq!(a.adaptation.len(), 1);
    }

    #[test]
    fn forced_uniform_stays_uniform() {
        let h = Hyperparams {
            m_max: 4,
            ..Default::default()
        };
        let target = Target::prior_only(h, true).unwrap();
        let cfg = SamplerConfig {
            n_iters: 3000,
            burn_in: 500,
            seed: 3,
            ..Default::default()
        };
        let t = run(&target, &cfg).unwrap();
        let mut saw_big = false;
        for rec in &t.records {
            let s = rec.state().unwrap();
            assert!(s.components().last().unwrap().is_uniform());
            saw_big |= s.m() >= 3;
        }
        assert!(saw_big);
    }

    #[test]
    fn config_problems_are_listed() {
        let cfg = SamplerConfig {
            n_iters: 10,
            burn_in: 20,
            thin: 0,
            b: -1.0,
            ..Default::default()
        };
        assert_eq!(cfg.problems().len(), 3);
        assert!(SamplerConfig::default().validate().is_ok());
    }

    #[test]
    fn trace_record_round_trip() {
        let mut r = rng(10);
        let s = sample_prior(&Hyperparams::default(), false, &mut r);
        let rec = TraceRecord::from_state(5, &s, -12.5, AcceptFlags::default());
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"M\":"));
        let back: TraceRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.state().unwrap(), s);
    }
}
