use bodf::bingham::{sb_logpdf, BinghamComponent};
use bodf::kde::{kde_estimate, KernelSpec};
use bodf::mixture::{sample_ordered_exp, sample_prior, Hyperparams, MixtureOdf, Odf};
use bodf::normalizer::NormalizerTable;
use bodf::quat::{canonicalize, equivalence_class, quat_to_euler, euler_to_quat};
use bodf::rjmcmc::{propose_scales, propose_weights, AcceptFlags, ScaleProposal, TraceRecord, WeightsNormalization};
use bodf::{SymmetryGroup, UnitQuaternion};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn table() -> &'static NormalizerTable {
    static T: OnceLock<NormalizerTable> = OnceLock::new();
    T.get_or_init(|| NormalizerTable::build(50.0, 16).unwrap())
}

fn groups(i: usize) -> (SymmetryGroup, SymmetryGroup) {
    let names = ["cubic-24", "hexagonal", "tetragonal", "orthorhombic"];
    (
        SymmetryGroup::named(names[i % names.len()]).unwrap(),
        SymmetryGroup::named(if i % 2 == 0 { "cyclic-2" } else { "identity" }).unwrap(),
    )
}

fn quat() -> impl Strategy<Value = UnitQuaternion> {
    proptest::array::uniform4(-1.0f64..1.0)
        .prop_filter("nonzero", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|a| UnitQuaternion::from_array(a).unwrap())
}

fn lambda() -> impl Strategy<Value = [f64; 3]> {
    proptest::array::uniform3(0.0f64..40.0).prop_map(|mut l| {
        l.sort_by(|a, b| b.total_cmp(a));
        l
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_density_is_class_invariant(g in quat(), v1 in quat(), l in lambda(), k in 0usize..8) {
        let (qc, qs) = groups(k);
        let comp = BinghamComponent::from_v1(l, v1).unwrap();
        let base = sb_logpdf(g, &comp, &qc, &qs, table()).unwrap();
        for e in equivalence_class(g, &qc, &qs) {
            prop_assert!((sb_logpdf(e, &comp, &qc, &qs, table()).unwrap() - base).abs() < 1e-12);
            prop_assert!((sb_logpdf(-e, &comp, &qc, &qs, table()).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_form_is_class_invariant(g in quat(), k in 0usize..8) {
        let (qc, qs) = groups(k);
        let c = canonicalize(g, &qc, &qs);
        for e in equivalence_class(g, &qc, &qs) {
            prop_assert!(canonicalize(e, &qc, &qs).approx_eq_rotation(&c, 1e-9));
        }
    }

    #[test]
    fn euler_round_trip(g in quat()) {
        prop_assert!(euler_to_quat(quat_to_euler(g)).approx_eq_rotation(&g, 1e-9));
    }

    #[test]
    fn kde_is_permutation_invariant(seed in 0u64..1000, g in quat(), kappa in 0.0f64..100.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (qc, qs) = groups(seed as usize);
        let obs: Vec<_> = (0..12).map(|_| UnitQuaternion::random(&mut r)).collect();
        let mut rev = obs.clone();
        rev.reverse();
        let spec = KernelSpec::new(kappa).unwrap();
        let a = kde_estimate(&obs, spec, &qc, &qs).unwrap().density(g);
        let b = kde_estimate(&rev, spec, &qc, &qs).unwrap().density(g);
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn weight_proposals_stay_on_simplex(seed in 0u64..10_000, m in 2usize..6, mode in 0usize..3) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let alpha = bodf::mixture::sample_dirichlet(m, 1.0, &mut r);
        let mode = [WeightsNormalization::Reflect, WeightsNormalization::Cumulative, WeightsNormalization::Literal][mode];
        if let Some(a) = propose_weights(&alpha, 0.01, mode, &mut r) {
            prop_assert_eq!(a.len(), m);
            prop_assert!(a.iter().all(|x| *x >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_proposals_stay_ordered(seed in 0u64..10_000, l in lambda(), v1 in quat(), fold in any::<bool>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let comp = BinghamComponent::from_v1(l, v1).unwrap();
        let mode = if fold { ScaleProposal::Fold } else { ScaleProposal::Resample };
        if let Some(c) = propose_scales(&comp, 4.0, mode, &mut r) {
            let p = c.lambda();
            prop_assert!(p[0] >= p[1] && p[1] >= p[2] && p[2] >= 0.0 && p[3] == 0.0);
        }
        let ordered = sample_ordered_exp(10.0, &mut r);
        prop_assert!(ordered[0] >= ordered[1] && ordered[1] >= ordered[2] && ordered[2] >= 0.0);
    }

    #[test]
    fn relabeling_preserves_the_mixture(seed in 0u64..10_000, g in quat()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let h = Hyperparams { mu: 3.0, m_max: 4, ..Default::default() };
        let state = sample_prior(&h, false, &mut r);
        let (qc, qs) = groups(seed as usize);
        let a = MixtureOdf::new(state.clone(), qc.clone(), qs.clone(), table()).unwrap().log_density(g);
        let b = MixtureOdf::new(state.sorted_by_concentration(), qc, qs, table()).unwrap().log_density(g);
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn trace_records_round_trip_exactly(seed in 0u64..10_000, lp in -1e6f64..1e6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let state = sample_prior(&Hyperparams::default(), seed % 2 == 0, &mut r);
        let rec = TraceRecord::from_state(seed as usize, &state, lp, AcceptFlags::default());
        let back: TraceRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(back.state().unwrap(), state);
    }
}
