use std::collections::BTreeSet;

use mtl_rank::data::{MultiTaskDataset, TaskDataset};
use mtl_rank::ranking::{build_rank_pairs, materialize_pseudo_examples, PairStrategy, PseudoExample};
use proptest::prelude::*;

fn dataset(score_sets: &[Vec<f64>]) -> MultiTaskDataset {
    let tasks = score_sets
        .iter()
        .enumerate()
        .map(|(t, scores)| {
            let xs = (0..scores.len()).map(|i| vec![i as f64, (t + 1) as f64]).collect();
            let ys = (0..scores.len()).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
            TaskDataset::new(format!("t{t}"), xs, ys, Some(scores.clone())).unwrap()
        })
        .collect();
    MultiTaskDataset::new(tasks).unwrap()
}

fn pair_set(data: &MultiTaskDataset, strategy: PairStrategy, eps: f64, seed: u64) -> Vec<(usize, usize, usize)> {
    build_rank_pairs(data, strategy, eps, seed)
        .unwrap()
        .pairs()
        .iter()
        .map(|p| (p.task, p.p, p.q))
        .collect()
}

fn closure(pairs: &[(usize, usize, usize)]) -> BTreeSet<(usize, usize, usize)> {
    let mut set: BTreeSet<_> = pairs.iter().copied().collect();
    loop {
        let extra: Vec<_> = set
            .iter()
            .flat_map(|&(t, a, b)| set.iter().filter(move |&&(s, c, _)| s == t && c == b).map(move |&(_, _, d)| (t, a, d)))
            .filter(|p| !set.contains(p))
            .collect();
        if extra.is_empty() {
            return set;
        }
        set.extend(extra);
    }
}

/// Scores drawn from a small grid so that ties are common.
fn tied_scores() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((0i32..6).prop_map(|v| v as f64 * 0.5), 1..9), 1..4)
}

fn distinct_scores() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        (1usize..9).prop_flat_map(|m| Just((0..m).map(|i| i as f64).collect::<Vec<_>>()).prop_shuffle()),
        1..4,
    )
}

proptest! {
    #[test]
    fn pairs_are_strict_within_task_and_unique(
        scores in tied_scores(),
        eps in prop::sample::select(vec![0.0, 0.4, 0.6, 2.0]),
        k in 0usize..20,
        seed in any::<u64>(),
    ) {
        let data = dataset(&scores);
        for strategy in [PairStrategy::All, PairStrategy::Adjacent, PairStrategy::Sampled(k)] {
            let pairs = pair_set(&data, strategy, eps, seed);
            let unique: BTreeSet<_> = pairs.iter().collect();
            prop_assert_eq!(unique.len(), pairs.len());
            for &(t, p, q) in &pairs {
                prop_assert!(p != q);
                prop_assert!(scores[t][p] > scores[t][q] + eps);
            }
        }
    }

    #[test]
    fn adjacent_closure_equals_all_without_ties(scores in distinct_scores()) {
        let data = dataset(&scores);
        let adjacent = pair_set(&data, PairStrategy::Adjacent, 0.0, 0);
        let all: BTreeSet<_> = pair_set(&data, PairStrategy::All, 0.0, 0).into_iter().collect();
        for (t, s) in scores.iter().enumerate() {
            prop_assert_eq!(adjacent.iter().filter(|p| p.0 == t).count(), s.len() - 1);
        }
        prop_assert_eq!(closure(&adjacent), all);
    }

    #[test]
    fn order_preserving_maps_keep_pairs(scores in tied_scores(), slope in 0.1f64..10.0, shift in -5.0f64..5.0, seed in any::<u64>()) {
        let data = dataset(&scores);
        let affine: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|v| slope * v + shift).collect()).collect();
        let exp: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|v| v.exp()).collect()).collect();
        for strategy in [PairStrategy::All, PairStrategy::Adjacent, PairStrategy::Sampled(3)] {
            let base = pair_set(&data, strategy, 0.0, seed);
            prop_assert_eq!(&pair_set(&dataset(&affine), strategy, 0.0, seed), &base);
            prop_assert_eq!(&pair_set(&dataset(&exp), strategy, 0.0, seed), &base);
        }
    }

    #[test]
    fn sampled_pairs_come_from_all(scores in tied_scores(), k in 0usize..12, seed in any::<u64>()) {
        let data = dataset(&scores);
        let all: BTreeSet<_> = pair_set(&data, PairStrategy::All, 0.0, 0).into_iter().collect();
        let sampled = pair_set(&data, PairStrategy::Sampled(k), 0.0, seed);
        prop_assert_eq!(&sampled, &pair_set(&data, PairStrategy::Sampled(k), 0.0, seed));
        for t in 0..scores.len() {
            let available = all.iter().filter(|p| p.0 == t).count();
            prop_assert_eq!(sampled.iter().filter(|p| p.0 == t).count(), k.min(available));
        }
        prop_assert!(sampled.iter().all(|p| all.contains(p)));
    }

    #[test]
    fn pseudo_examples_are_differences(scores in tied_scores()) {
        let data = dataset(&scores);
        let pairs = build_rank_pairs(&data, PairStrategy::All, 0.0, 0).unwrap();
        let set = materialize_pseudo_examples(&data, &pairs, 1e-12);
        prop_assert_eq!(set.len() + set.dropped, pairs.len());
        for ex in &set.examples {
            let xs = data.task(ex.task).instances();
            let expect: Vec<f64> = xs[ex.p].iter().zip(&xs[ex.q]).map(|(a, b)| a - b).collect();
            prop_assert_eq!(&ex.delta, &expect);
            prop_assert!(ex.delta.iter().any(|v| v.abs() > 1e-12));
        }
        prop_assert_eq!(PseudoExample::Z, 1.0);
    }
}

#[test]
fn duplicate_instances_are_dropped() {
    let task = TaskDataset::new("t", vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 2.0]], vec![1, -1, 1], Some(vec![3.0, 2.0, 1.0])).unwrap();
    let data = MultiTaskDataset::new(vec![task]).unwrap();
    let pairs = build_rank_pairs(&data, PairStrategy::All, 0.0, 0).unwrap();
    let set = materialize_pseudo_examples(&data, &pairs, 1e-12);
    assert_eq!(pairs.len(), 3);
    assert_eq!(set.dropped, 1);
    assert!(set.examples.iter().all(|e| !(e.p == 0 && e.q == 1)));
}

#[test]
fn pairs_export_as_jsonl() {
    let data = dataset(&[vec![3.0, 1.0, 2.0]]);
    let pairs = build_rank_pairs(&data, PairStrategy::Adjacent, 0.0, 0).unwrap();
    let mut out = Vec::new();
    pairs.write_jsonl(&data, &mut out).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["task_id"], "t0");
    assert_eq!((lines[0]["p"].as_u64(), lines[0]["q"].as_u64()), (Some(0), Some(2)));
}
