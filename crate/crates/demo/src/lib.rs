//! Browser bindings: train toy 2-D multi-task models, compare the variants by
//! leave-one-task-out AUC, and inspect multi-task Gram matrices.
//!
//! Every export returns a JSON string; the page in `www/` renders it.

use mtl_rank::data::{generate_synthetic, MultiTaskDataset, SyntheticConfig};
use mtl_rank::evaluate::{auc, loto_cv, score_task_out_of_task, EvalOptions};
use mtl_rank::kernels::{assemble_gram, augmented_points, KernelSpec, MultiTaskKernel, PointKind, PseudoKernel};
use mtl_rank::ranking::{build_rank_pairs, materialize_pseudo_examples, PairStrategy};
use mtl_rank::trainer::train;
use mtl_rank::{Hyperparameters, TrainOptions, Variant};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct ToyTask {
    id: String,
    /// `[x, y, label, score]` rows.
    points: Vec<[f64; 4]>,
    /// Full task weight `w0 + v_t`.
    weight: Vec<f64>,
}

#[derive(Serialize)]
struct ToyResult {
    variant: String,
    tasks: Vec<ToyTask>,
    w0: Vec<f64>,
    true_w0: Vec<f64>,
    held_out_auc: Option<f64>,
    support_instances: usize,
    support_pairs: usize,
    converged: bool,
}

fn parse_variant(name: &str) -> Result<Variant, String> {
    name.parse().map_err(|e: mtl_rank::Error| e.to_string())
}

fn toy_config(flip_prob: f64, seed: u64, tasks: usize, m: usize, d: usize) -> SyntheticConfig {
    SyntheticConfig {
        tasks,
        m,
        d,
        task_spread: 0.6,
        noise_band: 0.5,
        flip_prob,
        score_noise: 0.1,
        seed,
    }
}

/// Four 2-D tasks plus one held-out task scored with the shared weights only.
pub fn toy_tasks_json(variant: &str, mu: f64, c: f64, a: f64, flip_prob: f64, seed: u64) -> Result<String, String> {
    let variant = parse_variant(variant)?;
    let (all, truth) = generate_synthetic(&toy_config(flip_prob, seed, 5, 40, 2)).map_err(|e| e.to_string())?;
    let train_set = all.select(&[0, 1, 2, 3]).map_err(|e| e.to_string())?;
    let hyper = Hyperparameters::linear(variant, mu, c, a);
    let model = train(&train_set, &hyper, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let weights = model.linear_weights.clone().expect("linear kernel");
    let held_out_scores = score_task_out_of_task(&model, &all, 4).map_err(|e| e.to_string())?;
    let tasks = train_set
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| ToyTask {
            id: task.task_id().to_string(),
            points: task
                .instances()
                .iter()
                .zip(task.labels())
                .zip(task.scores().unwrap_or(&[]))
                .map(|((x, &y), &r)| [x[0], x[1], f64::from(y), r])
                .collect(),
            weight: weights.task_weight(t),
        })
        .collect();
    let result = ToyResult {
        variant: variant.to_string(),
        tasks,
        w0: weights.w0,
        true_w0: truth.w0,
        held_out_auc: auc(&held_out_scores, all.task(4).labels()).ok(),
        support_instances: model.diagnostics.support_instances,
        support_pairs: model.diagnostics.support_pairs,
        converged: model.dual.converged,
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct VariantScore {
    variant: String,
    mean_auc: f64,
    detection_rate: f64,
}

/// Leave-one-task-out AUC of the three variants on one noisy dataset.
pub fn compare_variants_json(mu: f64, c: f64, a: f64, flip_prob: f64, seed: u64) -> Result<String, String> {
    let (data, _) = generate_synthetic(&toy_config(flip_prob, seed, 6, 30, 5)).map_err(|e| e.to_string())?;
    let scores = [Variant::Mtl, Variant::Gc, Variant::Ts]
        .into_iter()
        .map(|variant| {
            let hyper = Hyperparameters::linear(variant, mu, c, a);
            let report = loto_cv(&data, &hyper, &TrainOptions::default(), &EvalOptions::default())
                .map_err(|e| e.to_string())?;
            Ok(VariantScore {
                variant: variant.to_string(),
                mean_auc: report.mean_auc,
                detection_rate: report.detection_rate,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&scores).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct GramView {
    labels: Vec<String>,
    /// Row-major entries.
    values: Vec<f64>,
    n: usize,
}

fn small_ranked_dataset(seed: u64) -> Result<MultiTaskDataset, String> {
    generate_synthetic(&toy_config(0.0, seed, 2, 4, 2))
        .map(|(d, _)| d)
        .map_err(|e| e.to_string())
}

/// Gram matrix over the instances and adjacent-pair pseudo-examples of two tiny tasks.
/// `gamma <= 0` selects the linear base kernel.
pub fn gram_json(variant: &str, mu: f64, gamma: f64, seed: u64) -> Result<String, String> {
    let variant = parse_variant(variant)?;
    let data = small_ranked_dataset(seed)?;
    let pairs = build_rank_pairs(&data, PairStrategy::Adjacent, 0.0, 0).map_err(|e| e.to_string())?;
    let pseudos = materialize_pseudo_examples(&data, &pairs, 1e-12);
    let points = augmented_points(&data, &pseudos);
    let resolved: Vec<_> = points.iter().map(|p| p.resolve(&data, &pseudos)).collect();
    let base = if gamma > 0.0 { KernelSpec::Rbf { gamma } } else { KernelSpec::Linear };
    let kernel = MultiTaskKernel::new(variant.coupling(), mu, base, PseudoKernel::FeatureSpace).map_err(|e| e.to_string())?;
    let gram = assemble_gram(&resolved, &kernel);
    let labels = points
        .iter()
        .map(|p| match p.kind {
            PointKind::Instance(i) => format!("t{} x{i}", p.task),
            PointKind::Pseudo(k) => {
                let ex = &pseudos.examples[k];
                format!("t{} d{}-{}", p.task, ex.p, ex.q)
            }
        })
        .collect();
    serde_json::to_string(&GramView {
        labels,
        values: gram.as_slice().to_vec(),
        n: gram.dim(),
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn toy_tasks(variant: &str, mu: f64, c: f64, a: f64, flip_prob: f64, seed: u32) -> Result<String, JsError> {
    toy_tasks_json(variant, mu, c, a, flip_prob, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare_variants(mu: f64, c: f64, a: f64, flip_prob: f64, seed: u32) -> Result<String, JsError> {
    compare_variants_json(mu, c, a, flip_prob, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gram(variant: &str, mu: f64, gamma: f64, seed: u32) -> Result<String, JsError> {
    gram_json(variant, mu, gamma, u64::from(seed)).map_err(|e| JsError::new(&e))
}
