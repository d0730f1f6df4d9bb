//! Pairwise rank constraints derived from auxiliary scores.
//!
//! Pairs never cross tasks. A pair `(p, q)` states that instance `p` of a task
//! should score above instance `q`; its pseudo-example is `x_p - x_q` with
//! label `z = +1`.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultiTaskDataset;
use crate::error::{invalid, Error, Result};

/// Which strictly ordered pairs become constraints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairStrategy {
    /// Every strictly ordered pair; quadratic in the task size.
    All,
    /// Consecutive instances after sorting by descending score.
    #[default]
    Adjacent,
    /// `K` pairs per task drawn uniformly from the `All` set.
    Sampled(usize),
}

impl std::fmt::Display for PairStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PairStrategy::All => write!(f, "all"),
            PairStrategy::Adjacent => write!(f, "adjacent"),
            PairStrategy::Sampled(k) => write!(f, "sampled:{k}"),
        }
    }
}

impl std::str::FromStr for PairStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(PairStrategy::All),
            "adjacent" => Ok(PairStrategy::Adjacent),
            other => {
                let k = other
                    .strip_prefix("sampled:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| {
                        invalid(format!(
                            "unknown pair strategy `{other}` (expected all, adjacent or sampled:K)"
                        ))
                    })?;
                Ok(PairStrategy::Sampled(k))
            }
        }
    }
}

/// Instance `p` of task `task` ranks strictly above instance `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankPair {
    pub task: usize,
    pub p: usize,
    pub q: usize,
}

/// Rank pairs grouped by ascending task index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankPairSet {
    pairs: Vec<RankPair>,
    strategy: PairStrategy,
    tie_epsilon: f64,
}

impl RankPairSet {
    pub fn empty() -> Self {
        RankPairSet {
            pairs: Vec::new(),
            strategy: PairStrategy::default(),
            tie_epsilon: 0.0,
        }
    }

    pub fn pairs(&self) -> &[RankPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn strategy(&self) -> PairStrategy {
        self.strategy
    }

    pub fn tie_epsilon(&self) -> f64 {
        self.tie_epsilon
    }

    pub fn for_task(&self, task: usize) -> impl Iterator<Item = &RankPair> {
        self.pairs.iter().filter(move |p| p.task == task)
    }

    /// One JSON object per line with `task_id`, `p` and `q`.
    pub fn write_jsonl<W: Write>(&self, dataset: &MultiTaskDataset, mut out: W) -> Result<()> {
        for pair in &self.pairs {
            let line = serde_json::json!({
                "task_id": dataset.task(pair.task).task_id(),
                "p": pair.p,
                "q": pair.q,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn all_pairs(task: usize, scores: &[f64], tie_epsilon: f64) -> Vec<RankPair> {
    let mut out = Vec::new();
    for (p, &rp) in scores.iter().enumerate() {
        for (q, &rq) in scores.iter().enumerate() {
            if rp > rq + tie_epsilon {
                out.push(RankPair { task, p, q });
            }
        }
    }
    out
}

fn adjacent_pairs(task: usize, scores: &[f64], tie_epsilon: f64) -> Vec<RankPair> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .windows(2)
        .filter(|w| scores[w[0]] > scores[w[1]] + tie_epsilon)
        .map(|w| RankPair {
            task,
            p: w[0],
            q: w[1],
        })
        .collect()
}

/// Build the rank constraints of every task from its auxiliary scores.
///
/// Ties (`|r_p - r_q| <= tie_epsilon`) never produce a pair. `Sampled(K)` with
/// `K` above the number of available pairs is clamped with a warning.
pub fn build_rank_pairs(
    dataset: &MultiTaskDataset,
    strategy: PairStrategy,
    tie_epsilon: f64,
    seed: u64,
) -> Result<RankPairSet> {
    if !(tie_epsilon >= 0.0 && tie_epsilon.is_finite()) {
        return Err(invalid(format!("tie_epsilon must be non-negative, got {tie_epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for (t, task) in dataset.tasks().iter().enumerate() {
        let scores = task.scores().ok_or_else(|| Error::MissingScores {
            task_id: task.task_id().to_string(),
            variant: "rank pair construction".into(),
        })?;
        match strategy {
            PairStrategy::All => pairs.extend(all_pairs(t, scores, tie_epsilon)),
            PairStrategy::Adjacent => pairs.extend(adjacent_pairs(t, scores, tie_epsilon)),
            PairStrategy::Sampled(k) => {
                let candidates = all_pairs(t, scores, tie_epsilon);
                if k > candidates.len() {
                    log::warn!(
                        "task `{}`: requested {k} rank pairs but only {} exist; using all",
                        task.task_id(),
                        candidates.len()
                    );
                }
                let k = k.min(candidates.len());
                let mut picked = sample(&mut rng, candidates.len(), k).into_vec();
                picked.sort_unstable();
                pairs.extend(picked.into_iter().map(|i| candidates[i]));
            }
        }
    }
    Ok(RankPairSet {
        pairs,
        strategy,
        tie_epsilon,
    })
}

/// Difference vector `x_p - x_q` standing for the constraint "p above q".
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoExample {
    pub task: usize,
    pub p: usize,
    pub q: usize,
    pub delta: Vec<f64>,
}

impl PseudoExample {
    /// Pseudo-example label; rank constraints are always positive examples.
    pub const Z: f64 = 1.0;
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoSet {
    pub examples: Vec<PseudoExample>,
    /// Pairs discarded because their difference vector was numerically zero.
    pub dropped: usize,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Turn rank pairs into pseudo-examples, dropping pairs with `max|delta| <= drop_epsilon`.
pub fn materialize_pseudo_examples(
    dataset: &MultiTaskDataset,
    pairs: &RankPairSet,
    drop_epsilon: f64,
) -> PseudoSet {
    let mut out = PseudoSet::default();
    for pair in pairs.pairs() {
        let task = dataset.task(pair.task);
        let xp = &task.instances()[pair.p];
        let xq = &task.instances()[pair.q];
        let delta: Vec<f64> = xp.iter().zip(xq).map(|(a, b)| a - b).collect();
        if delta.iter().all(|d| d.abs() <= drop_epsilon) {
            out.dropped += 1;
            continue;
        }
        out.examples.push(PseudoExample {
            task: pair.task,
            p: pair.p,
            q: pair.q,
            delta,
        });
    }
    if out.dropped > 0 {
        log::info!("dropped {} degenerate rank pairs", out.dropped);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskDataset;
    use std::collections::HashSet;

    fn scored(scores: &[f64]) -> MultiTaskDataset {
        let instances = (0..scores.len()).map(|i| vec![i as f64, 1.0]).collect();
        let labels = vec![1; scores.len()];
        MultiTaskDataset::new(vec![TaskDataset::new("t", instances, labels, Some(scores.to_vec())).unwrap()])
            .unwrap()
    }

    fn as_set(set: &RankPairSet) -> HashSet<(usize, usize)> {
        set.pairs().iter().map(|p| (p.p, p.q)).collect()
    }

    #[test]
    fn all_pairs_of_three() {
        let set = build_rank_pairs(&scored(&[3.0, 1.0, 2.0]), PairStrategy::All, 0.0, 0).unwrap();
        assert_eq!(as_set(&set), HashSet::from([(0, 2), (0, 1), (2, 1)]));
    }

    #[test]
    fn adjacent_pairs_follow_sorted_chain() {
        let set = build_rank_pairs(&scored(&[3.0, 1.0, 2.0]), PairStrategy::Adjacent, 0.0, 0).unwrap();
        assert_eq!(set.pairs().iter().map(|p| (p.p, p.q)).collect::<Vec<_>>(), vec![(0, 2), (2, 1)]);
    }

    #[test]
    fn ties_produce_nothing() {
        for strategy in [PairStrategy::All, PairStrategy::Adjacent, PairStrategy::Sampled(3)] {
            let set = build_rank_pairs(&scored(&[1.0, 1.0]), strategy, 0.0, 0).unwrap();
            assert!(set.is_empty());
        }
        let set = build_rank_pairs(&scored(&[1.0, 1.05]), PairStrategy::All, 0.1, 0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn sampled_is_subset_and_clamped() {
        let ds = scored(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let all = as_set(&build_rank_pairs(&ds, PairStrategy::All, 0.0, 0).unwrap());
        let s = build_rank_pairs(&ds, PairStrategy::Sampled(4), 0.0, 9).unwrap();
        assert_eq!(s.len(), 4);
        assert!(as_set(&s).is_subset(&all));
        assert_eq!(as_set(&s).len(), 4);
        let again = build_rank_pairs(&ds, PairStrategy::Sampled(4), 0.0, 9).unwrap();
        assert_eq!(s, again);
        let clamped = build_rank_pairs(&ds, PairStrategy::Sampled(100), 0.0, 9).unwrap();
        assert_eq!(clamped.len(), 10);
    }

    #[test]
    fn missing_scores_fail() {
        let task = TaskDataset::new("t", vec![vec![1.0]], vec![1], None).unwrap();
        let ds = MultiTaskDataset::new(vec![task]).unwrap();
        assert!(matches!(
            build_rank_pairs(&ds, PairStrategy::All, 0.0, 0),
            Err(Error::MissingScores { .. })
        ));
    }

    #[test]
    fn pseudo_examples_and_drops() {
        let task = TaskDataset::new(
            "t",
            vec![vec![2.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.0]],
            vec![1, -1, 1],
            Some(vec![3.0, 1.0, 2.0]),
        )
        .unwrap();
        let ds = MultiTaskDataset::new(vec![task]).unwrap();
        let pairs = RankPairSet {
            pairs: vec![RankPair { task: 0, p: 0, q: 1 }, RankPair { task: 0, p: 0, q: 2 }],
            strategy: PairStrategy::All,
            tie_epsilon: 0.0,
        };
        let set = materialize_pseudo_examples(&ds, &pairs, 1e-12);
        assert_eq!(set.len(), 1);
        assert_eq!(set.dropped, 1);
        assert_eq!(set.examples[0].delta, vec![1.0, -1.0]);
        assert!(materialize_pseudo_examples(&ds, &RankPairSet::empty(), 1e-12).is_empty());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("sampled:7".parse::<PairStrategy>().unwrap(), PairStrategy::Sampled(7));
        assert_eq!("all".parse::<PairStrategy>().unwrap(), PairStrategy::All);
        assert!("sampled:x".parse::<PairStrategy>().is_err());
    }
}
