mod common;

use mtl_rank::kernels::{
    assemble_gram, augmented_points, cross_kernel, mtl_kernel_gc, mtl_kernel_ts, Coupling, Feature, KernelPoint,
    KernelSpec, MultiTaskKernel, PseudoKernel,
};
use mtl_rank::linalg::dot;
use mtl_rank::ranking::{build_rank_pairs, materialize_pseudo_examples, PairStrategy};
use proptest::prelude::*;

use common::{min_eigenvalue, synthetic};

fn base_strategy() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![Just(KernelSpec::Linear), (0.05f64..2.0).prop_map(|gamma| KernelSpec::Rbf { gamma })]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn multi_task_grams_are_psd(
        seed in 0u64..10_000,
        tasks in 1usize..4,
        m in 2usize..6,
        mu in prop::sample::select(vec![1e-3, 0.1, 1.0, 10.0, 1e4]),
        base in base_strategy(),
        raw in any::<bool>(),
    ) {
        let data = synthetic(tasks, m, 3, seed);
        let pairs = build_rank_pairs(&data, PairStrategy::All, 0.0, 0).unwrap();
        let pseudos = materialize_pseudo_examples(&data, &pairs, 1e-12);
        let points = augmented_points(&data, &pseudos);
        let resolved: Vec<_> = points.iter().map(|p| p.resolve(&data, &pseudos)).collect();
        let mode = if raw { PseudoKernel::RawDelta } else { PseudoKernel::FeatureSpace };
        for coupling in [Coupling::Global, Coupling::TaskSpecific] {
            let kernel = MultiTaskKernel::new(coupling, mu, base, mode).unwrap();
            let gram = assemble_gram(&resolved, &kernel);
            prop_assert_eq!(gram.asymmetry(), 0.0);
            prop_assert!(min_eigenvalue(&gram) >= -1e-8 * gram.norm());
        }
    }

    #[test]
    fn variants_agree_on_instance_pairs(
        x in prop::collection::vec(-3.0f64..3.0, 3),
        y in prop::collection::vec(-3.0f64..3.0, 3),
        same_task in any::<bool>(),
        mu in 1e-3f64..1e3,
        base in base_strategy(),
    ) {
        let a = KernelPoint::instance(Some(0), &x);
        let b = KernelPoint::instance(Some(if same_task { 0 } else { 1 }), &y);
        let gc = mtl_kernel_gc(&a, &b, mu, &base, PseudoKernel::FeatureSpace).unwrap();
        let ts = mtl_kernel_ts(&a, &b, mu, &base, PseudoKernel::FeatureSpace).unwrap();
        prop_assert_eq!(gc, ts);
    }

    #[test]
    fn linear_pseudo_kernel_is_the_delta_dot_product(
        v in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let (p1, q1, p2, q2) = (&v[0..3], &v[3..6], &v[6..9], &v[9..12]);
        let d1: Vec<f64> = p1.iter().zip(q1).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = p2.iter().zip(q2).map(|(a, b)| a - b).collect();
        let f1 = Feature::Pseudo { upper: p1, lower: q1, delta: &d1 };
        let f2 = Feature::Pseudo { upper: p2, lower: q2, delta: &d2 };
        let inst = Feature::Instance(p2);
        for mode in [PseudoKernel::FeatureSpace, PseudoKernel::RawDelta] {
            prop_assert_eq!(cross_kernel(&f1, &f2, &KernelSpec::Linear, mode), dot(&d1, &d2));
            prop_assert_eq!(cross_kernel(&f1, &inst, &KernelSpec::Linear, mode), dot(&d1, p2));
        }
    }

    #[test]
    fn large_mu_approaches_block_diagonal(seed in 0u64..1000, base in base_strategy()) {
        let data = synthetic(2, 4, 3, seed);
        let pairs = build_rank_pairs(&data, PairStrategy::Adjacent, 0.0, 0).unwrap();
        let pseudos = materialize_pseudo_examples(&data, &pairs, 1e-12);
        let points = augmented_points(&data, &pseudos);
        let resolved: Vec<_> = points.iter().map(|p| p.resolve(&data, &pseudos)).collect();
        for coupling in [Coupling::Global, Coupling::TaskSpecific] {
            let kernel = MultiTaskKernel::new(coupling, 1e12, base, PseudoKernel::FeatureSpace).unwrap();
            let gram = assemble_gram(&resolved, &kernel);
            for (i, a) in resolved.iter().enumerate() {
                for (j, b) in resolved.iter().enumerate() {
                    let within = if a.task == b.task { cross_kernel(&a.feature, &b.feature, &base, PseudoKernel::FeatureSpace) } else { 0.0 };
                    prop_assert!((gram.get(i, j) - within).abs() <= 1e-10 * (1.0 + within.abs()));
                }
            }
        }
    }
}

#[test]
fn rbf_pseudo_modes_differ() {
    let (p, q, x) = ([0.0], [1.0], [0.0]);
    let delta = [-1.0];
    let pseudo = Feature::Pseudo { upper: &p, lower: &q, delta: &delta };
    let inst = Feature::Instance(&x);
    let spec = KernelSpec::Rbf { gamma: 1.0 };
    let feature_space = cross_kernel(&inst, &pseudo, &spec, PseudoKernel::FeatureSpace);
    let raw = cross_kernel(&inst, &pseudo, &spec, PseudoKernel::RawDelta);
    assert!((feature_space - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    assert!((raw - (-1.0f64).exp()).abs() < 1e-15);
}

#[test]
fn unseen_task_only_meets_the_shared_term() {
    let (x, y) = ([1.0, 2.0], [0.5, -1.0]);
    let delta = [1.0, 1.0];
    let query = KernelPoint::instance(None, &x);
    let inst = KernelPoint::instance(Some(0), &y);
    let pseudo = KernelPoint { task: Some(0), feature: Feature::Pseudo { upper: &x, lower: &y, delta: &delta } };
    let mu = 4.0;
    let gc = MultiTaskKernel::new(Coupling::Global, mu, KernelSpec::Linear, PseudoKernel::FeatureSpace).unwrap();
    let ts = MultiTaskKernel::new(Coupling::TaskSpecific, mu, KernelSpec::Linear, PseudoKernel::FeatureSpace).unwrap();
    assert_eq!(gc.eval(&query, &inst), dot(&x, &y) / mu);
    assert_eq!(ts.eval(&query, &inst), dot(&x, &y) / mu);
    assert_eq!(gc.eval(&query, &pseudo), dot(&x, &delta) / mu);
    assert_eq!(ts.eval(&query, &pseudo), 0.0);
}
