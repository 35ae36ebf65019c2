//! Symmetric Bingham mixtures: density, likelihood, priors and posterior.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bingham::{
    inverse_orbit, log_kernel_orbit, log_normalizer, BinghamComponent,
};
use crate::error::{Error, Result};
use crate::normalizer::{NormalizerTable, TWO_PI_SQ};
use crate::quat::{SymmetryGroup, UnitQuaternion};

const CHUNK: usize = 256;
const WEIGHT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Mean of the exponential prior on each scale.
    pub mu: f64,
    /// Symmetric Dirichlet concentration of the weights.
    pub beta: f64,
    /// Poisson rate of `M − 1`.
    pub nu: f64,
    pub m_max: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            mu: 10.0,
            beta: 1.0,
            nu: 1.0,
            m_max: 5,
        }
    }
}

impl Hyperparams {
    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("mu", self.mu), ("beta", self.beta), ("nu", self.nu)] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("hyperparameter {name} = {v} must be positive"));
            }
        }
        if self.m_max < 1 {
            out.push("hyperparameter m_max must be at least 1".into());
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

/// A component stored by its scales and the first column of its frame; the
/// remaining columns follow from the deterministic completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub lambda: [f64; 4],
    pub v1: [f64; 4],
}

impl ComponentRecord {
    pub fn from_component(c: &BinghamComponent) -> Self {
        ComponentRecord {
            lambda: c.lambda(),
            v1: c.frame()[0],
        }
    }

    pub fn to_component(&self) -> Result<BinghamComponent> {
        if self.lambda[3] != 0.0 {
            return Err(Error::invalid("lambda4 must be 0"));
        }
        let norm2: f64 = self.v1.iter().map(|x| x * x).sum();
        let v1 = if (norm2 - 1.0).abs() < 1e-12 {
            self.v1
        } else {
            UnitQuaternion::from_array(self.v1)?.to_array()
        };
        let comp = BinghamComponent::from_parts_unchecked([self.lambda[0], self.lambda[1], self.lambda[2]], v1);
        BinghamComponent::new(comp.lambda(), *comp.frame())
    }
}

#[derive(Serialize, Deserialize)]
struct StateRecord {
    alpha: Vec<f64>,
    components: Vec<ComponentRecord>,
    forced_uniform: bool,
}

impl From<MixtureState> for StateRecord {
    fn from(s: MixtureState) -> Self {
        StateRecord {
            components: s.components.iter().map(ComponentRecord::from_component).collect(),
            alpha: s.alpha,
            forced_uniform: s.forced_uniform,
        }
    }
}

impl TryFrom<StateRecord> for MixtureState {
    type Error = Error;
    fn try_from(r: StateRecord) -> Result<Self> {
        let comps = r.components.iter().map(|c| c.to_component()).collect::<Result<Vec<_>>>()?;
        MixtureState::new(r.alpha, comps, r.forced_uniform)
    }
}

/// Mixture weights and components. With `forced_uniform`, the last component
/// is pinned to `Λ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "StateRecord", try_from = "StateRecord")]
pub struct MixtureState {
    alpha: Vec<f64>,
    components: Vec<BinghamComponent>,
    forced_uniform: bool,
}

impl MixtureState {
    pub fn new(
        alpha: Vec<f64>,
        components: Vec<BinghamComponent>,
        forced_uniform: bool,
    ) -> Result<Self> {
        let s = MixtureState {
            alpha,
            components,
            forced_uniform,
        };
        s.check()?;
        Ok(s)
    }

    pub(crate) fn from_parts(
        alpha: Vec<f64>,
        components: Vec<BinghamComponent>,
        forced_uniform: bool,
    ) -> Self {
        debug_assert_eq!(alpha.len(), components.len());
        MixtureState {
            alpha,
            components,
            forced_uniform,
        }
    }

    /// `M = 1`, `Λ = 0`, `α = (1)`.
    pub fn uniform(v1: UnitQuaternion, forced_uniform: bool) -> Self {
        MixtureState {
            alpha: vec![1.0],
            components: vec![BinghamComponent::uniform(v1)],
            forced_uniform,
        }
    }

    /// Verifies the type invariants.
    pub fn check(&self) -> Result<()> {
        let m = self.alpha.len();
        if m == 0 || m != self.components.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} components",
                m,
                self.components.len()
            )));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid(format!("weights {:?} outside [0, 1]", self.alpha)));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::invalid(format!("weights sum to {sum}")));
        }
        for c in &self.components {
            BinghamComponent::new(c.lambda(), *c.frame())?;
        }
        if self.forced_uniform && !self.components[m - 1].is_uniform() {
            return Err(Error::invalid("forced uniform component has nonzero scales"));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn components(&self) -> &[BinghamComponent] {
        &self.components
    }

    pub fn forced_uniform(&self) -> bool {
        self.forced_uniform
    }

    /// Number of components with free parameters.
    pub fn free(&self) -> usize {
        self.m() - usize::from(self.forced_uniform)
    }

    pub(crate) fn alpha_mut(&mut self) -> &mut Vec<f64> {
        &mut self.alpha
    }

    pub(crate) fn components_mut(&mut self) -> &mut Vec<BinghamComponent> {
        &mut self.components
    }

    /// Reorders components by `λ1` descending (stable), keeping any forced
    /// uniform component last.
    pub fn sorted_by_concentration(&self) -> MixtureState {
        let free = self.free();
        let mut idx: Vec<usize> = (0..free).collect();
        idx.sort_by(|&a, &b| {
            self.components[b].lambda()[0].total_cmp(&self.components[a].lambda()[0])
        });
        idx.extend(free..self.m());
        MixtureState {
            alpha: idx.iter().map(|&i| self.alpha[i]).collect(),
            components: idx.iter().map(|&i| self.components[i].clone()).collect(),
            forced_uniform: self.forced_uniform,
        }
    }
}

/// Observations with their symmetry groups. The inverse orbit of every
/// observation is cached for density evaluation.
#[derive(Clone, Debug)]
pub struct Dataset {
    observations: Vec<UnitQuaternion>,
    qc: SymmetryGroup,
    qs: SymmetryGroup,
    orbits: Vec<[f64; 4]>,
}

impl Dataset {
    pub fn new(observations: Vec<UnitQuaternion>, qc: SymmetryGroup, qs: SymmetryGroup) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::invalid("dataset has no observations"));
        }
        let orbits = observations
            .par_iter()
            .flat_map_iter(|g| inverse_orbit(*g, &qc, &qs))
            .collect();
        Ok(Dataset {
            observations,
            qc,
            qs,
            orbits,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[UnitQuaternion] {
        &self.observations
    }

    pub fn qc(&self) -> &SymmetryGroup {
        &self.qc
    }

    pub fn qs(&self) -> &SymmetryGroup {
        &self.qs
    }

    fn orbit_len(&self) -> usize {
        self.qc.len() * self.qs.len()
    }

    /// Concatenation (groups taken from `self`).
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut obs = self.observations.clone();
        obs.extend_from_slice(&other.observations);
        Dataset::new(obs, self.qc.clone(), self.qs.clone())
    }
}

/// `ln SB(g_i | comp)` for every observation.
pub fn component_log_densities(
    data: &Dataset,
    comp: &BinghamComponent,
    table: &NormalizerTable,
) -> Result<Vec<f64>> {
    let log_f = log_normalizer(comp, table)?;
    let n = data.len();
    if comp.is_uniform() {
        return Ok(vec![-log_f; n]);
    }
    let jk = data.orbit_len();
    let mut out = vec![0.0; n];
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let start = c * CHUNK;
            for (i, o) in chunk.iter_mut().enumerate() {
                let k = (start + i) * jk;
                *o = log_kernel_orbit(comp, &data.orbits[k..k + jk]) - log_f;
            }
        });
    Ok(out)
}

/// `Σ_i ln Σ_m α_m exp(ℓ_{mi})` from per-component log densities.
pub fn mixture_loglik(alpha: &[f64], per_component: &[&[f64]]) -> f64 {
    let n = per_component[0].len();
    let log_alpha: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    let chunks: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut max = f64::NEG_INFINITY;
                for (m, l) in per_component.iter().enumerate() {
                    max = max.max(log_alpha[m] + l[i]);
                }
                let mut s = 0.0;
                for (m, l) in per_component.iter().enumerate() {
                    s += (log_alpha[m] + l[i] - max).exp();
                }
                acc += max + s.ln();
            }
            acc
        })
        .collect();
    chunks.iter().sum()
}

/// Log mixture density at `g`.
pub fn sbm_logpdf(
    g: UnitQuaternion,
    state: &MixtureState,
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    table: &NormalizerTable,
) -> Result<f64> {
    let orbit = inverse_orbit(g, qc, qs);
    let terms = state
        .components
        .iter()
        .zip(&state.alpha)
        .map(|(c, a)| Ok(a.ln() + log_kernel_orbit(c, &orbit) - log_normalizer(c, table)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_sum_exp(&terms))
}

/// An orientation density on `S³` that can be evaluated pointwise.
pub trait Odf: Sync {
    fn density(&self, g: UnitQuaternion) -> f64;
}

/// Mixture density with precomputed normalizing constants.
#[derive(Clone, Debug)]
pub struct MixtureOdf {
    state: MixtureState,
    log_weights: Vec<f64>,
    qc: SymmetryGroup,
    qs: SymmetryGroup,
}

impl MixtureOdf {
    pub fn new(state: MixtureState, qc: SymmetryGroup, qs: SymmetryGroup, table: &NormalizerTable) -> Result<Self> {
        let log_weights = state
            .components
            .iter()
            .zip(&state.alpha)
            .map(|(c, a)| Ok(a.ln() - log_normalizer(c, table)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(MixtureOdf {
            state,
            log_weights,
            qc,
            qs,
        })
    }

    pub fn state(&self) -> &MixtureState {
        &self.state
    }

    pub fn log_density(&self, g: UnitQuaternion) -> f64 {
        let orbit = inverse_orbit(g, &self.qc, &self.qs);
        let terms: Vec<f64> = self
            .state
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + log_kernel_orbit(c, &orbit))
            .collect();
        log_sum_exp(&terms)
    }
}

impl Odf for MixtureOdf {
    fn density(&self, g: UnitQuaternion) -> f64 {
        self.log_density(g).exp()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn loglik(data: &Dataset, state: &MixtureState, table: &NormalizerTable) -> Result<f64> {
    let per = state
        .components
        .iter()
        .map(|c| component_log_densities(data, c, table))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = per.iter().map(|v| v.as_slice()).collect();
    Ok(mixture_loglik(&state.alpha, &refs))
}

/// Log density of three iid Exponential(mean `mu`) scales restricted to
/// `λ1 ≥ λ2 ≥ λ3 ≥ 0` (normalized by `3!`).
pub fn ordered_exp_log_density(lambda: [f64; 3], mu: f64) -> f64 {
    6f64.ln() - 3.0 * mu.ln() - (lambda[0] + lambda[1] + lambda[2]) / mu
}

pub fn sample_ordered_exp<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> [f64; 3] {
    let e = Exp::new(1.0 / mu).expect("positive mean");
    let mut l = [e.sample(rng), e.sample(rng), e.sample(rng)];
    l.sort_by(|a, b| b.total_cmp(a));
    l
}

/// Uniform orientation density of the first frame column.
pub fn log_orientation_prior() -> f64 {
    -TWO_PI_SQ.ln()
}

/// Symmetric Dirichlet(`beta`) log density, with respect to Lebesgue measure on
/// the first `M − 1` weights.
pub fn dirichlet_log_density(alpha: &[f64], beta: f64) -> f64 {
    let m = alpha.len() as f64;
    let mut v = ln_gamma(m * beta) - m * ln_gamma(beta);
    if beta != 1.0 {
        v += (beta - 1.0) * alpha.iter().map(|a| a.ln()).sum::<f64>();
    }
    v
}

/// Log pmf of `M` when `M − 1 ~ Poisson(nu)` truncated to `M ≤ m_max`.
pub fn truncated_poisson_log_pmf(m: usize, nu: f64, m_max: usize) -> f64 {
    if m < 1 || m > m_max {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = (0..m_max)
        .map(|k| k as f64 * nu.ln() - ln_gamma(k as f64 + 1.0))
        .collect();
    terms[m - 1] - log_sum_exp(&terms)
}

/// Prior terms of one free component.
pub fn component_log_prior(comp: &BinghamComponent, h: &Hyperparams) -> f64 {
    ordered_exp_log_density(comp.lambda3(), h.mu) + log_orientation_prior()
}

pub fn log_prior(state: &MixtureState, h: &Hyperparams) -> f64 {
    let free: f64 = state.components[..state.free()]
        .iter()
        .map(|c| component_log_prior(c, h))
        .sum();
    free + dirichlet_log_density(&state.alpha, h.beta) + truncated_poisson_log_pmf(state.m(), h.nu, h.m_max)
}

pub fn log_posterior(
    data: &Dataset,
    state: &MixtureState,
    h: &Hyperparams,
    table: &NormalizerTable,
) -> Result<f64> {
    Ok(loglik(data, state, table)? + log_prior(state, h))
}

pub fn sample_dirichlet<R: Rng + ?Sized>(m: usize, beta: f64, rng: &mut R) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    let g = Gamma::new(beta, 1.0).expect("positive shape");
    loop {
        let draws: Vec<f64> = (0..m).map(|_| g.sample(rng)).collect();
        let s: f64 = draws.iter().sum();
        if s > 0.0 {
            let mut a: Vec<f64> = draws.iter().map(|d| d / s).collect();
            let last = 1.0 - a[..m - 1].iter().sum::<f64>();
            a[m - 1] = last.max(0.0);
            return a;
        }
    }
}

/// Draw from the truncated shifted Poisson by rejection.
pub fn sample_m<R: Rng + ?Sized>(h: &Hyperparams, rng: &mut R) -> usize {
    let p = Poisson::new(h.nu).expect("positive rate");
    loop {
        let k: f64 = p.sample(rng);
        let m = k as usize + 1;
        if m <= h.m_max {
            return m;
        }
    }
}

/// One draw of the full state from the prior.
pub fn sample_prior<R: Rng + ?Sized>(h: &Hyperparams, forced_uniform: bool, rng: &mut R) -> MixtureState {
    let m = sample_m(h, rng);
    let alpha = sample_dirichlet(m, h.beta, rng);
    let free = m - usize::from(forced_uniform);
    let mut components: Vec<BinghamComponent> = (0..free)
        .map(|_| {
            let l = sample_ordered_exp(h.mu, rng);
            BinghamComponent::from_v1(l, UnitQuaternion::random(rng)).expect("ordered scales")
        })
        .collect();
    if forced_uniform {
        components.push(BinghamComponent::uniform(UnitQuaternion::IDENTITY));
    }
    MixtureState {
        alpha,
        components,
        forced_uniform,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (NormalizerTable, SymmetryGroup, SymmetryGroup) {
        (
            NormalizerTable::build(30.0, 8).unwrap(),
            SymmetryGroup::named("cubic-24").unwrap(),
            SymmetryGroup::named("cyclic-2").unwrap(),
        )
    }

    fn two_component(r: &mut ChaCha8Rng) -> MixtureState {
        MixtureState::new(
            vec![0.3, 0.7],
            vec![
                BinghamComponent::from_v1([20.0, 10.0, 4.0], UnitQuaternion::random(r)).unwrap(),
                BinghamComponent::from_v1([3.0, 1.0, 0.5], UnitQuaternion::random(r)).unwrap(),
            ],
            false,
        )
        .unwrap()
    }

    #[test]
    fn mixture_reduces_and_matches_direct_sum() {
        let (table, qc, qs) = setup();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let st = two_component(&mut r);
        for _ in 0..20 {
            let g = UnitQuaternion::random(&mut r);
            let a = crate::bingham::sb_logpdf(g, &st.components[0], &qc, &qs, &table).unwrap();
            let b = crate::bingham::sb_logpdf(g, &st.components[1], &qc, &qs, &table).unwrap();
            let direct = (0.3 * a.exp() + 0.7 * b.exp()).ln();
            let v = sbm_logpdf(g, &st, &qc, &qs, &table).unwrap();
            assert!((v - direct).abs() < 1e-12);
            let single = MixtureState::new(vec![1.0], vec![st.components[0].clone()], false).unwrap();
            assert_eq!(sbm_logpdf(g, &single, &qc, &qs, &table).unwrap(), a);
        }
    }

    #[test]
    fn uniform_mixture_and_label_symmetry() {
        let (table, qc, qs) = setup();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let uni = MixtureState::new(
            vec![0.2, 0.8],
            vec![
                BinghamComponent::uniform(UnitQuaternion::random(&mut r)),
                BinghamComponent::uniform(UnitQuaternion::random(&mut r)),
            ],
            false,
        )
        .unwrap();
        let g = UnitQuaternion::random(&mut r);
        let v = sbm_logpdf(g, &uni, &qc, &qs, &table).unwrap();
        assert!((v + TWO_PI_SQ.ln()).abs() < 1e-12);

        let st = two_component(&mut r);
        let swapped = MixtureState::new(
            vec![0.7, 0.3],
            vec![st.components[1].clone(), st.components[0].clone()],
            false,
        )
        .unwrap();
        let a = sbm_logpdf(g, &st, &qc, &qs, &table).unwrap();
        let b = sbm_logpdf(g, &swapped, &qc, &qs, &table).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn loglik_is_additive() {
        let (table, qc, qs) = setup();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let st = two_component(&mut r);
        let a: Vec<_> = (0..300).map(|_| UnitQuaternion::random(&mut r)).collect();
        let b: Vec<_> = (0..517).map(|_| UnitQuaternion::random(&mut r)).collect();
        let da = Dataset::new(a.clone(), qc.clone(), qs.clone()).unwrap();
        let db = Dataset::new(b, qc.clone(), qs.clone()).unwrap();
        let dab = da.concat(&db).unwrap();
        let la = loglik(&da, &st, &table).unwrap();
        let lb = loglik(&db, &st, &table).unwrap();
        let lab = loglik(&dab, &st, &table).unwrap();
        assert!((lab - la - lb).abs() < 1e-10 * lab.abs().max(1.0));

        let one = Dataset::new(vec![a[0]], qc.clone(), qs.clone()).unwrap();
        let l1 = loglik(&one, &st, &table).unwrap();
        assert!((l1 - sbm_logpdf(a[0], &st, &qc, &qs, &table).unwrap()).abs() < 1e-12);

        let uni = MixtureState::uniform(a[1], false);
        let lu = loglik(&da, &uni, &table).unwrap();
        assert!((lu - 300.0 * (-TWO_PI_SQ.ln())).abs() < 1e-9);
    }

    #[test]
    fn prior_closed_form_at_zero() {
        let h = Hyperparams::default();
        let st = MixtureState::uniform(UnitQuaternion::IDENTITY, false);
        let expected = 6f64.ln() - 3.0 * h.mu.ln() - TWO_PI_SQ.ln()
            + truncated_poisson_log_pmf(1, h.nu, h.m_max);
        assert!((log_prior(&st, &h) - expected).abs() < 1e-12);
        let forced = MixtureState::uniform(UnitQuaternion::IDENTITY, true);
        assert!((log_prior(&forced, &h) - truncated_poisson_log_pmf(1, h.nu, h.m_max)).abs() < 1e-12);
    }

    #[test]
    fn truncated_poisson_normalizes() {
        for (nu, m_max) in [(1.0, 5), (0.3, 1), (4.0, 3), (2.5, 12)] {
            let s: f64 = (1..=m_max)
                .map(|m| truncated_poisson_log_pmf(m, nu, m_max).exp())
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(truncated_poisson_log_pmf(6, 1.0, 5), f64::NEG_INFINITY);
    }

    #[test]
    fn dirichlet_density_integrates() {
        // Beta(2, 2) on (0, 1) is Dirichlet_2(2).
        let n = 20000;
        let s: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                dirichlet_log_density(&[x, 1.0 - x], 2.0).exp()
            })
            .sum::<f64>()
            / n as f64;
        assert!((s - 1.0).abs() < 1e-6);
        assert!((dirichlet_log_density(&[0.2, 0.3, 0.5], 1.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn prior_draws_are_valid_and_match_moments() {
        let h = Hyperparams {
            m_max: 4,
            ..Default::default()
        };
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 4];
        let mut lambda1 = Vec::new();
        let mut alpha_sum = [0.0; 4];
        for _ in 0..10000 {
            let s = sample_prior(&h, false, &mut r);
            s.check().unwrap();
            assert!(log_prior(&s, &h).is_finite());
            counts[s.m() - 1] += 1;
            alpha_sum[s.m() - 1] += s.alpha[0];
            lambda1.push(s.components[0].lambda()[0]);
        }
        let mean = lambda1.iter().sum::<f64>() / lambda1.len() as f64;
        let analytic = h.mu * (1.0 + 0.5 + 1.0 / 3.0);
        assert!((mean / analytic - 1.0).abs() < 0.03, "{mean}");
        let mut chi2 = 0.0;
        for m in 1..=4 {
            let e = 10000.0 * truncated_poisson_log_pmf(m, h.nu, h.m_max).exp();
            chi2 += (counts[m - 1] as f64 - e).powi(2) / e;
            if counts[m - 1] > 200 {
                let am = alpha_sum[m - 1] / counts[m - 1] as f64;
                assert!((am - 1.0 / m as f64).abs() < 0.03, "m={m} {am}");
            }
        }
        // 99th percentile of chi-square with 3 dof
        assert!(chi2 < 11.34, "{chi2}");
        let forced = sample_prior(&h, true, &mut r);
        forced.check().unwrap();
        assert!(forced.components.last().unwrap().is_uniform());
    }

    #[test]
    fn posterior_is_sum_and_rewards_fit() {
        let (table, qc, qs) = setup();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let st = two_component(&mut r);
        let h = Hyperparams::default();
        let obs: Vec<_> = (0..50).map(|_| UnitQuaternion::random(&mut r)).collect();
        let d = Dataset::new(obs.clone(), qc.clone(), qs.clone()).unwrap();
        let lp = log_posterior(&d, &st, &h, &table).unwrap();
        let parts = loglik(&d, &st, &table).unwrap() + log_prior(&st, &h);
        assert!((lp - parts).abs() < 1e-12);

        let id = SymmetryGroup::identity();
        let sharp = MixtureState::new(
            vec![1.0],
            vec![BinghamComponent::from_v1([25.0, 25.0, 25.0], UnitQuaternion::random(&mut r)).unwrap()],
            false,
        )
        .unwrap();
        let mode = UnitQuaternion::from_array(sharp.components[0].frame()[3]).unwrap();
        assert!(sbm_logpdf(mode, &sharp, &id, &id, &table).unwrap() > 0.0);
        let d1 = Dataset::new(obs.clone(), id.clone(), id.clone()).unwrap();
        let mut more = obs;
        more.push(mode);
        let d2 = Dataset::new(more, id.clone(), id).unwrap();
        assert!(
            log_posterior(&d2, &sharp, &h, &table).unwrap()
                > log_posterior(&d1, &sharp, &h, &table).unwrap()
        );
    }

    #[test]
    fn state_validation() {
        let c = BinghamComponent::uniform(UnitQuaternion::IDENTITY);
        assert!(MixtureState::new(vec![0.5, 0.6], vec![c.clone(), c.clone()], false).is_err());
        assert!(MixtureState::new(vec![1.0], vec![c.clone(), c.clone()], false).is_err());
        let conc = BinghamComponent::from_v1([2.0, 1.0, 0.0], UnitQuaternion::IDENTITY).unwrap();
        assert!(MixtureState::new(vec![0.5, 0.5], vec![c.clone(), conc.clone()], true).is_err());
        assert!(MixtureState::new(vec![0.5, 0.5], vec![conc, c], true).is_ok());
    }
}
