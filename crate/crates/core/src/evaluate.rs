//! Prediction, ranking metrics, leave-one-task-out validation and grid search.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::MultiTaskDataset;
use crate::error::{invalid, Error, Result};
use crate::kernels::{KernelPoint, KernelSpec};
use crate::parallel::map_indexed;
use crate::trainer::{train, Hyperparameters, TrainOptions, TrainedModel, Variant};

fn expand(model: &TrainedModel, query: &KernelPoint<'_>) -> f64 {
    let kernel = model.kernel();
    let mut score = 0.0;
    for sv in &model.support {
        let point = sv.point();
        if kernel.coefficient(&point, query) == 0.0 {
            continue;
        }
        score += sv.coef * kernel.eval(&point, query);
    }
    score
}

/// Score `(w0 + v_t) . phi(x)` for a task seen during training.
pub fn predict_in_task(model: &TrainedModel, task_id: &str, x: &[f64]) -> Result<f64> {
    let t = model
        .task_index(task_id)
        .ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
    let x = model.prepare_input(x)?;
    Ok(expand(model, &KernelPoint::instance(Some(t), &x)))
}

/// Score `w0 . phi(x)` for an instance of an unseen task.
///
/// Task-specific components are discarded. Under the task-specific ranking
/// variant rank multipliers do not contribute at all.
pub fn predict_out_of_task(model: &TrainedModel, x: &[f64]) -> Result<f64> {
    let x = model.prepare_input(x)?;
    Ok(expand(model, &KernelPoint::instance(None, &x)))
}

/// Area under the ROC curve as the Mann-Whitney statistic (ties count one half).
pub fn auc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] > 0).count();
        rank_sum += mid_rank * positives as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Recall over positive-labelled instances and false positive rate over controls.
pub fn recall_fpr(patient_scores: &[f64], patient_labels: &[i8], control_scores: &[f64], threshold: f64) -> (f64, f64) {
    let (hits, positives) = patient_scores
        .iter()
        .zip(patient_labels)
        .filter(|(_, &y)| y > 0)
        .fold((0usize, 0usize), |(h, n), (s, _)| (h + usize::from(*s >= threshold), n + 1));
    let recall = if positives == 0 { 0.0 } else { hits as f64 / positives as f64 };
    let false_pos = control_scores.iter().filter(|&&s| s >= threshold).count();
    let fpr = if control_scores.is_empty() {
        0.0
    } else {
        false_pos as f64 / control_scores.len() as f64
    };
    (recall, fpr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when the task has a single class.
    pub auc: Option<f64>,
    pub recall: f64,
    pub fpr: f64,
    pub detected: bool,
    pub threshold: f64,
}

/// Metrics of one task: positives play the patient region, negatives the control.
pub fn task_metrics(scores: &[f64], labels: &[i8], threshold: f64) -> MetricsReport {
    let controls: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y < 0)
        .map(|(s, _)| *s)
        .collect();
    let (recall, fpr) = recall_fpr(scores, labels, &controls, threshold);
    MetricsReport {
        auc: auc(scores, labels).ok(),
        recall,
        fpr,
        detected: recall > 0.0,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub variant: Variant,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub tasks: Vec<TaskReport>,
    /// Mean over tasks with a defined AUC.
    pub mean_auc: f64,
    pub mean_recall: f64,
    pub mean_fpr: f64,
    /// Fraction of held-out tasks with positive recall.
    pub detection_rate: f64,
}

impl CvReport {
    pub fn from_tasks(tasks: Vec<TaskReport>) -> CvReport {
        let n = tasks.len() as f64;
        let aucs: Vec<f64> = tasks.iter().filter_map(|t| t.metrics.auc).collect();
        CvReport {
            mean_auc: if aucs.is_empty() {
                f64::NAN
            } else {
                aucs.iter().sum::<f64>() / aucs.len() as f64
            },
            mean_recall: tasks.iter().map(|t| t.metrics.recall).sum::<f64>() / n,
            mean_fpr: tasks.iter().map(|t| t.metrics.fpr).sum::<f64>() / n,
            detection_rate: tasks.iter().filter(|t| t.metrics.detected).count() as f64 / n,
            tasks,
        }
    }

    /// One JSON record per task.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tasks {
            out.push_str(&serde_json::to_string(t).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.tasks.iter().map(|t| t.task_id.len()).max().unwrap_or(7).max(7);
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}", "task_id", "auc", "recall", "fpr", "detected");
        for t in &self.tasks {
            let auc = t.metrics.auc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>8.4}  {:>8.4}  {:>8}",
                t.task_id, auc, t.metrics.recall, t.metrics.fpr, t.metrics.detected
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
            "mean", self.mean_auc, self.mean_recall, self.mean_fpr, self.detection_rate
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    /// Worker threads for independent folds or grid cells.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { threshold: 0.0, jobs: 1 }
    }
}

/// Out-of-task scores for every instance of `task`.
pub fn score_task_out_of_task(model: &TrainedModel, dataset: &MultiTaskDataset, task: usize) -> Result<Vec<f64>> {
    dataset
        .task(task)
        .instances()
        .iter()
        .map(|x| predict_out_of_task(model, x))
        .collect()
}

/// Leave-one-task-out: train on the remaining tasks and score the held-out one
/// through the shared component only.
pub fn loto_cv(
    dataset: &MultiTaskDataset,
    hyper: &Hyperparameters,
    train_options: &TrainOptions,
    options: &EvalOptions,
) -> Result<CvReport> {
    if dataset.num_tasks() < 2 {
        return Err(invalid("leave-one-task-out needs at least two tasks"));
    }
    let folds = map_indexed(dataset.num_tasks(), options.jobs, |held_out| -> Result<TaskReport> {
        let train_set = dataset.without_task(held_out)?;
        let model = train(&train_set, hyper, train_options)?;
        let scores = score_task_out_of_task(&model, dataset, held_out)?;
        let task = dataset.task(held_out);
        Ok(TaskReport {
            task_id: task.task_id().to_string(),
            variant: hyper.variant,
            metrics: task_metrics(&scores, task.labels(), options.threshold),
        })
    });
    Ok(CvReport::from_tasks(folds.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Hyperparameter ranges searched by [`grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu_values: Vec<f64>,
    #[serde(rename = "C_values")]
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
    pub a_values: Vec<f64>,
}

/// `1e(k), 5e(k+1)` for `k = first..last`, then `1e(last)`; the interleaving as
/// printed in the published search ranges.
fn interleaved_decades(first: i32, last: i32) -> Vec<f64> {
    let mut out = Vec::new();
    for k in first..last {
        out.push(format!("1e{k}").parse().expect("literal"));
        out.push(format!("5e{}", k + 1).parse().expect("literal"));
    }
    out.push(format!("1e{last}").parse().expect("literal"));
    out
}

fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(k)).collect()
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mu_values: interleaved_decades(-7, 3),
            c_values: powers_of_two(-10, 10),
            gamma_values: powers_of_two(-10, 10),
            a_values: interleaved_decades(-6, 3),
        }
    }
}

impl GridSpec {
    pub fn single(mu: f64, c: f64, gamma: f64, a: f64) -> GridSpec {
        GridSpec {
            mu_values: vec![mu],
            c_values: vec![c],
            gamma_values: vec![gamma],
            a_values: vec![a],
        }
    }

    /// All hyperparameter combinations for a variant and kernel family.
    /// `gamma` is dropped for linear kernels and `a` for the plain variant.
    pub fn cells(&self, variant: Variant, kernel: KernelSpec, template: &Hyperparameters) -> Vec<Hyperparameters> {
        let gammas: Vec<Option<f64>> = if kernel.is_linear() {
            vec![None]
        } else {
            self.gamma_values.iter().copied().map(Some).collect()
        };
        let a_values: Vec<f64> = if variant.uses_ranks() { self.a_values.clone() } else { vec![0.0] };
        let mut out = Vec::new();
        for &mu in &self.mu_values {
            for &c in &self.c_values {
                for gamma in &gammas {
                    for &a in &a_values {
                        out.push(Hyperparameters {
                            variant,
                            mu,
                            c,
                            a,
                            kernel: match gamma {
                                None => KernelSpec::Linear,
                                Some(g) => KernelSpec::Rbf { gamma: *g },
                            },
                            pseudo_kernel: template.pseudo_kernel,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub variant: Variant,
    pub mu: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub a: f64,
    pub gamma: Option<f64>,
    /// Validation AUC; `None` if training failed.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: Hyperparameters,
    pub best_auc: f64,
    pub table: Vec<GridCell>,
}

impl GridResult {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for cell in &self.table {
            out.push_str(&serde_json::to_string(cell).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>8}  {:>12}  {:>12}  {:>12}  {:>12}  {:>8}", "variant", "mu", "C", "a", "gamma", "auc");
        for c in &self.table {
            let gamma = c.gamma.map_or_else(|| "-".to_string(), |g| format!("{g:e}"));
            let auc = c.auc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                out,
                "{:>8}  {:>12e}  {:>12e}  {:>12e}  {:>12}  {:>8}",
                c.variant, c.mu, c.c, c.a, gamma, auc
            );
        }
        out
    }
}

/// `true` when `a` should win over `b`: higher AUC, then smaller C, smaller a,
/// larger mu, smaller gamma.
fn better(a: &GridCell, b: &GridCell) -> bool {
    use std::cmp::Ordering;
    let auc_a = a.auc.unwrap_or(f64::NEG_INFINITY);
    let auc_b = b.auc.unwrap_or(f64::NEG_INFINITY);
    let order = auc_a
        .total_cmp(&auc_b)
        .then(b.c.total_cmp(&a.c))
        .then(b.a.total_cmp(&a.a))
        .then(a.mu.total_cmp(&b.mu))
        .then(b.gamma.unwrap_or(0.0).total_cmp(&a.gamma.unwrap_or(0.0)));
    order == Ordering::Greater
}

/// Exhaustive search maximizing the pooled out-of-task AUC on `validation`.
pub fn grid_search(
    train_set: &MultiTaskDataset,
    validation: &MultiTaskDataset,
    grid: &GridSpec,
    template: &Hyperparameters,
    train_options: &TrainOptions,
    options: &EvalOptions,
) -> Result<GridResult> {
    let labels: Vec<i8> = validation.tasks().iter().flat_map(|t| t.labels().iter().copied()).collect();
    if !(labels.iter().any(|&y| y > 0) && labels.iter().any(|&y| y < 0)) {
        return Err(Error::SingleClass);
    }
    let cells = grid.cells(template.variant, template.kernel, template);
    if cells.is_empty() {
        return Err(invalid("hyperparameter grid is empty"));
    }
    let aucs = map_indexed(cells.len(), options.jobs, |i| -> Option<f64> {
        let model = match train(train_set, &cells[i], train_options) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("grid cell {i} failed to train: {e}");
                return None;
            }
        };
        let mut scores = Vec::with_capacity(labels.len());
        for t in 0..validation.num_tasks() {
            scores.extend(score_task_out_of_task(&model, validation, t).ok()?);
        }
        auc(&scores, &labels).ok()
    });
    let table: Vec<GridCell> = cells
        .iter()
        .zip(aucs)
        .map(|(h, auc)| GridCell {
            variant: h.variant,
            mu: h.mu,
            c: h.c,
            a: h.a,
            gamma: h.kernel.gamma(),
            auc,
        })
        .collect();
    let mut best = 0;
    for i in 1..table.len() {
        if better(&table[i], &table[best]) {
            best = i;
        }
    }
    if table[best].auc.is_none() {
        return Err(invalid("no grid cell could be trained"));
    }
    Ok(GridResult {
        best: cells[best],
        best_auc: table[best].auc.expect("checked"),
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{BetaEntry, DualSolution, LinearWeights, SupportKind, SupportVector, TrainDiagnostics};

    fn auc_brute(scores: &[f64], labels: &[i8]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi > 0 && yj < 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        total += 1.0;
                    } else if scores[i] == scores[j] {
                        total += 0.5;
                    }
                }
            }
        }
        total / pairs
    }

    #[test]
    fn auc_basic_cases() {
        let labels = [1, 1, -1, -1];
        assert_eq!(auc(&[4.0, 3.0, 2.0, 1.0], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &labels).unwrap(), 0.0);
        assert_eq!(auc(&[1.0; 4], &labels).unwrap(), 0.5);
        assert!(matches!(auc(&[1.0, 2.0], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn auc_matches_pair_count_with_ties() {
        let scores = [0.3, 0.3, 0.1, 0.9, 0.3, 0.5, 0.1, 0.7];
        let labels = [1, -1, -1, 1, 1, -1, 1, -1];
        assert!((auc(&scores, &labels).unwrap() - auc_brute(&scores, &labels)).abs() < 1e-15);
    }

    #[test]
    fn recall_fpr_cases() {
        assert_eq!(recall_fpr(&[1.0, 2.0], &[1, 1], &[0.5], 0.0), (1.0, 1.0));
        assert_eq!(recall_fpr(&[1.0, 2.0], &[1, 1], &[0.5], 10.0), (0.0, 0.0));
        assert_eq!(recall_fpr(&[1.0, -1.0], &[1, 1], &[-1.0], 0.0), (0.5, 0.0));
    }

    fn linear_model(variant: Variant, mu: f64, support: Vec<SupportVector>, w: LinearWeights) -> TrainedModel {
        TrainedModel {
            hyper: Hyperparameters::linear(variant, mu, 1.0, 1.0),
            input_transform: None,
            bias: false,
            dim: 2,
            task_ids: vec!["t".into()],
            dual: DualSolution {
                alpha: vec![vec![]],
                beta: Vec::<BetaEntry>::new(),
                objective: 0.0,
                kkt_residual: 0.0,
                converged: true,
                iterations: 0,
            },
            support,
            linear_weights: Some(w),
            diagnostics: TrainDiagnostics {
                instance_vars: 0,
                rank_vars: 0,
                dropped_pairs: 0,
                support_instances: 0,
                support_pairs: 0,
            },
        }
    }

    #[test]
    fn in_task_and_shared_scores() {
        // one instance term with coefficient 1 at x=[1,0], mu = 1: w0 = [1,0], v = [1,0]
        let sv = SupportVector {
            task: 0,
            coef: 1.0,
            kind: SupportKind::Instance(vec![1.0, 0.0]),
        };
        let w = LinearWeights { w0: vec![1.0, 0.0], v: vec![vec![1.0, 0.0]] };
        let model = linear_model(Variant::Gc, 1.0, vec![sv], w);
        assert_eq!(predict_in_task(&model, "t", &[2.0, 0.0]).unwrap(), 4.0);
        assert_eq!(predict_out_of_task(&model, &[3.0, 0.0]).unwrap(), 3.0);
        assert!(matches!(predict_in_task(&model, "zz", &[1.0, 0.0]), Err(Error::UnknownTask(_))));
        assert!(predict_out_of_task(&model, &[1.0]).is_err());

        let empty = linear_model(Variant::Gc, 1.0, vec![], LinearWeights { w0: vec![0.0; 2], v: vec![vec![0.0; 2]] });
        assert_eq!(predict_in_task(&empty, "t", &[5.0, -1.0]).unwrap(), 0.0);
        assert_eq!(predict_out_of_task(&empty, &[5.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_rank_term_out_of_task() {
        let sv = SupportVector {
            task: 0,
            coef: 1.0,
            kind: SupportKind::Pseudo {
                upper: vec![0.0, 1.0],
                lower: vec![0.0, 0.0],
                delta: vec![0.0, 1.0],
            },
        };
        let w = LinearWeights { w0: vec![0.0, 0.5], v: vec![vec![0.0, 1.0]] };
        let gc = linear_model(Variant::Gc, 2.0, vec![sv.clone()], w.clone());
        assert_eq!(predict_out_of_task(&gc, &[0.0, 4.0]).unwrap(), 2.0);
        let ts = linear_model(Variant::Ts, 2.0, vec![sv], w);
        assert_eq!(predict_out_of_task(&ts, &[0.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn default_grid_matches_published_ranges() {
        let g = GridSpec::default();
        assert_eq!(g.c_values.len(), 21);
        assert_eq!(g.gamma_values.len(), 21);
        assert_eq!(g.c_values[0], 2f64.powi(-10));
        assert_eq!(g.c_values[20], 1024.0);
        assert_eq!(&g.mu_values[..5], &[1e-7, 5e-6, 1e-6, 5e-5, 1e-5]);
        assert_eq!(*g.mu_values.last().unwrap(), 1e3);
        assert_eq!(g.mu_values.len(), 21);
        assert_eq!(&g.a_values[..3], &[1e-6, 5e-5, 1e-5]);
        assert_eq!(*g.a_values.last().unwrap(), 1e3);
        assert_eq!(g.a_values.len(), 19);
    }

    #[test]
    fn tie_break_prefers_smaller_c() {
        let cell = |c: f64| GridCell {
            variant: Variant::Mtl,
            mu: 1.0,
            c,
            a: 0.0,
            gamma: None,
            auc: Some(0.8),
        };
        assert!(better(&cell(1.0), &cell(2.0)));
        assert!(!better(&cell(2.0), &cell(1.0)));
    }
}
