//! Dual assembly, training and linear weight recovery for the three variants.
//!
//! Hyperparameters follow the `(mu, C, a)` parametrization: the primal is
//!
//! ```text
//! min  1/2 sum_t |v_t|^2 + mu/2 |w0|^2 + C sum xi + aC sum eta
//! s.t. y (w0 + v_t) . x >= 1 - xi            for every instance
//!      (w0 + v_t) . (x_p - x_q) >= 1 - eta    for every rank pair   (Gc)
//!      v_t . (x_p - x_q)        >= 1 - eta    for every rank pair   (Ts)
//! ```
//!
//! The two-regularizer form with `lambda_1, lambda_2` maps onto this one via
//! `mu = T lambda_2 / lambda_1` after rescaling the objective by `C`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::data::{append_bias, standardize, MultiTaskDataset, StandardizationParams};
use crate::error::{invalid, Error, Result};
use crate::kernels::{
    assemble_weighted_gram, augmented_points, AugmentedPoint, Coupling, Feature, KernelPoint, KernelSpec,
    MultiTaskKernel, PointKind, PseudoKernel,
};
use crate::linalg::{axpy, dot, norm_squared};
use crate::qp::{solve_coordinate, BoxQP, CoordinateOptions};
use crate::ranking::{build_rank_pairs, materialize_pseudo_examples, PairStrategy, PseudoExample, PseudoSet};

/// Multipliers at or below this are treated as zero when keeping support data.
pub const SUPPORT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain multi-task SVM, no rank constraints.
    Mtl,
    /// Globally consistent ranking: pairs constrain `w0 + v_t`.
    Gc,
    /// Task-specific ranking: pairs constrain `v_t` only.
    Ts,
}

impl Variant {
    pub fn uses_ranks(self) -> bool {
        !matches!(self, Variant::Mtl)
    }

    pub fn coupling(self) -> Coupling {
        match self {
            Variant::Mtl | Variant::Gc => Coupling::Global,
            Variant::Ts => Coupling::TaskSpecific,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Mtl => "mtl",
            Variant::Gc => "gc",
            Variant::Ts => "ts",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtl" => Ok(Variant::Mtl),
            "gc" => Ok(Variant::Gc),
            "ts" => Ok(Variant::Ts),
            other => Err(invalid(format!("unknown variant `{other}` (expected mtl, gc or ts)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub variant: Variant,
    /// Task relatedness; large values decouple the tasks.
    pub mu: f64,
    /// Misclassification cost.
    #[serde(rename = "C")]
    pub c: f64,
    /// Rank violation cost relative to `C`.
    pub a: f64,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub pseudo_kernel: PseudoKernel,
}

impl Hyperparameters {
    pub fn linear(variant: Variant, mu: f64, c: f64, a: f64) -> Self {
        Hyperparameters {
            variant,
            mu,
            c,
            a,
            kernel: KernelSpec::Linear,
            pseudo_kernel: PseudoKernel::FeatureSpace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(invalid(format!("a must be non-negative, got {}", self.a)));
        }
        self.kernel.validate()
    }

    /// Rank violation cost `C' = aC`.
    pub fn c_rank(&self) -> f64 {
        self.a * self.c
    }

    /// Whether pseudo-examples enter the dual at all.
    pub fn has_rank_block(&self) -> bool {
        self.variant.uses_ranks() && self.a > 0.0
    }

    pub fn kernel_fn(&self) -> Result<MultiTaskKernel> {
        MultiTaskKernel::new(self.variant.coupling(), self.mu, self.kernel, self.pseudo_kernel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    pub strategy: PairStrategy,
    pub tie_epsilon: f64,
    pub drop_epsilon: f64,
    pub seed: u64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            strategy: PairStrategy::Adjacent,
            tie_epsilon: 0.0,
            drop_epsilon: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    pub pairs: PairOptions,
    pub solver: CoordinateOptions,
    /// Z-score features with statistics of the training data; the fitted
    /// transform is stored on the model and applied to every prediction input.
    pub standardize: bool,
    /// Append a constant 1 feature before training.
    pub bias: bool,
}

/// One dual variable: its data point, its label sign and its box bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualVar {
    pub point: AugmentedPoint,
    /// `y` for instances, `z = +1` for pseudo-examples.
    pub sign: f64,
    pub upper: f64,
}

/// A box QP together with the meaning of each of its variables.
#[derive(Debug, Clone)]
pub struct DualProblem {
    pub qp: BoxQP,
    pub vars: Vec<DualVar>,
}

/// Build `Q[u][v] = s_u s_v K(point_u, point_v)` over instance multipliers
/// (task-major) followed by rank multipliers (task-major).
pub fn assemble_dual(dataset: &MultiTaskDataset, pseudos: &PseudoSet, hyper: &Hyperparameters) -> Result<DualProblem> {
    hyper.validate()?;
    if hyper.variant.uses_ranks() {
        if let Some(task) = dataset.first_unscored() {
            return Err(Error::MissingScores {
                task_id: task.task_id().to_string(),
                variant: hyper.variant.to_string(),
            });
        }
    }
    let empty = PseudoSet::default();
    let pseudos = if hyper.has_rank_block() { pseudos } else { &empty };
    let kernel = hyper.kernel_fn()?;
    let points = augmented_points(dataset, pseudos);
    let vars: Vec<DualVar> = points
        .iter()
        .map(|p| match p.kind {
            PointKind::Instance(i) => DualVar {
                point: *p,
                sign: f64::from(dataset.task(p.task).labels()[i]),
                upper: hyper.c,
            },
            PointKind::Pseudo(_) => DualVar {
                point: *p,
                sign: PseudoExample::Z,
                upper: hyper.c_rank(),
            },
        })
        .collect();
    let resolved: Vec<KernelPoint<'_>> = points.iter().map(|p| p.resolve(dataset, pseudos)).collect();
    let signs: Vec<f64> = vars.iter().map(|v| v.sign).collect();
    let q = assemble_weighted_gram(&resolved, Some(&signs), &kernel);
    let qp = BoxQP::new(q, vars.iter().map(|v| v.upper).collect())?;
    Ok(DualProblem { qp, vars })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaEntry {
    pub task: usize,
    pub p: usize,
    pub q: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// Classification multipliers per task and instance, in `[0, C]`.
    pub alpha: Vec<Vec<f64>>,
    /// Rank multipliers in pseudo-example order, in `[0, aC]`.
    pub beta: Vec<BetaEntry>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    pub w0: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

impl LinearWeights {
    /// Full task model `w0 + v_t`.
    pub fn task_weight(&self, task: usize) -> Vec<f64> {
        self.w0.iter().zip(&self.v[task]).map(|(a, b)| a + b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SupportKind {
    Instance(Vec<f64>),
    Pseudo {
        upper: Vec<f64>,
        lower: Vec<f64>,
        delta: Vec<f64>,
    },
}

/// One retained term `coef * K(point, .)` of the dual expansion, `coef = s * multiplier`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportVector {
    pub task: usize,
    pub coef: f64,
    pub kind: SupportKind,
}

impl SupportVector {
    pub fn point(&self) -> KernelPoint<'_> {
        let feature = match &self.kind {
            SupportKind::Instance(x) => Feature::Instance(x),
            SupportKind::Pseudo { upper, lower, delta } => Feature::Pseudo { upper, lower, delta },
        };
        KernelPoint {
            task: Some(self.task),
            feature,
        }
    }

    pub fn is_instance(&self) -> bool {
        matches!(self.kind, SupportKind::Instance(_))
    }

    /// Explicit vector: the instance, or the pseudo-example's difference.
    pub fn vector(&self) -> &[f64] {
        match &self.kind {
            SupportKind::Instance(x) => x,
            SupportKind::Pseudo { delta, .. } => delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub instance_vars: usize,
    pub rank_vars: usize,
    pub dropped_pairs: usize,
    pub support_instances: usize,
    pub support_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub hyper: Hyperparameters,
    /// Applied to raw inputs before anything else.
    pub input_transform: Option<StandardizationParams>,
    /// A constant 1 feature is appended to every input.
    pub bias: bool,
    /// Input dimension, excluding the bias feature.
    pub dim: usize,
    pub task_ids: Vec<String>,
    pub dual: DualSolution,
    pub support: Vec<SupportVector>,
    /// Explicit weights (in the possibly bias-augmented space), linear kernels only.
    pub linear_weights: Option<LinearWeights>,
    pub diagnostics: TrainDiagnostics,
}

impl TrainedModel {
    pub fn kernel(&self) -> MultiTaskKernel {
        self.hyper.kernel_fn().expect("validated at training time")
    }

    pub fn task_index(&self, task_id: &str) -> Option<usize> {
        self.task_ids.iter().position(|t| t == task_id)
    }

    pub(crate) fn prepare_input<'a>(&self, x: &'a [f64]) -> Result<Cow<'a, [f64]>> {
        if x.len() != self.dim {
            return Err(invalid(format!("model expects {} features, got {}", self.dim, x.len())));
        }
        let x: Cow<'a, [f64]> = match &self.input_transform {
            Some(t) => Cow::Owned(t.transform(x)),
            None => Cow::Borrowed(x),
        };
        if self.bias {
            Ok(Cow::Owned(append_bias(&x)))
        } else {
            Ok(x)
        }
    }

    /// Copy of this model with every rank multiplier set to zero.
    pub fn with_rank_multipliers_zeroed(&self) -> TrainedModel {
        let mut out = self.clone();
        for b in &mut out.dual.beta {
            b.value = 0.0;
        }
        for sv in &mut out.support {
            if !sv.is_instance() {
                sv.coef = 0.0;
            }
        }
        if let Some(w) = &self.linear_weights {
            out.linear_weights = Some(weights_from_terms(
                self.hyper.variant,
                self.hyper.mu,
                w.w0.len(),
                self.task_ids.len(),
                out.support.iter().map(|sv| (sv.task, sv.coef, sv.is_instance(), sv.vector())),
            ));
        }
        out
    }
}

/// Rank pseudo-examples used by `train` for this dataset and configuration.
/// Empty for the plain variant or when `a = 0`.
pub fn rank_pseudo_examples(
    dataset: &MultiTaskDataset,
    hyper: &Hyperparameters,
    pairs: &PairOptions,
) -> Result<PseudoSet> {
    if !hyper.variant.uses_ranks() {
        return Ok(PseudoSet::default());
    }
    if let Some(task) = dataset.first_unscored() {
        return Err(Error::MissingScores {
            task_id: task.task_id().to_string(),
            variant: hyper.variant.to_string(),
        });
    }
    if hyper.a == 0.0 {
        return Ok(PseudoSet::default());
    }
    let set = build_rank_pairs(dataset, pairs.strategy, pairs.tie_epsilon, pairs.seed)?;
    Ok(materialize_pseudo_examples(dataset, &set, pairs.drop_epsilon))
}

/// Build rank constraints, solve the dual and keep the support expansion.
pub fn train(dataset: &MultiTaskDataset, hyper: &Hyperparameters, options: &TrainOptions) -> Result<TrainedModel> {
    hyper.validate()?;
    let (mut data, transform): (Cow<'_, MultiTaskDataset>, _) = if options.standardize {
        let (scaled, params) = standardize(dataset);
        (Cow::Owned(scaled), Some(params))
    } else {
        (Cow::Borrowed(dataset), None)
    };
    if options.bias {
        data = Cow::Owned(data.with_bias_feature());
    }
    let pseudos = rank_pseudo_examples(&data, hyper, &options.pairs)?;
    let mut model = train_with_pseudos(&data, &pseudos, hyper, &options.solver)?;
    model.input_transform = transform;
    model.bias = options.bias;
    model.dim = dataset.dim();
    Ok(model)
}

/// Train on an explicit pseudo-example set (no bias handling).
pub fn train_with_pseudos(
    dataset: &MultiTaskDataset,
    pseudos: &PseudoSet,
    hyper: &Hyperparameters,
    solver: &CoordinateOptions,
) -> Result<TrainedModel> {
    let problem = assemble_dual(dataset, pseudos, hyper)?;
    let solution = solve_coordinate(&problem.qp, solver);
    if !solution.converged {
        log::warn!(
            "dual solver stopped after {} sweeps with KKT residual {:e} (tol {:e})",
            solution.iterations,
            solution.kkt_residual,
            solver.tol
        );
    }
    let used_pseudos = if hyper.has_rank_block() { pseudos.len() } else { 0 };

    let mut alpha: Vec<Vec<f64>> = dataset.tasks().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut beta = Vec::with_capacity(used_pseudos);
    let mut support = Vec::new();
    for (var, &value) in problem.vars.iter().zip(&solution.lambda) {
        let kind = match var.point.kind {
            PointKind::Instance(i) => {
                alpha[var.point.task][i] = value;
                SupportKind::Instance(dataset.task(var.point.task).instances()[i].clone())
            }
            PointKind::Pseudo(k) => {
                let ex = &pseudos.examples[k];
                beta.push(BetaEntry {
                    task: ex.task,
                    p: ex.p,
                    q: ex.q,
                    value,
                });
                let inst = dataset.task(ex.task).instances();
                SupportKind::Pseudo {
                    upper: inst[ex.p].clone(),
                    lower: inst[ex.q].clone(),
                    delta: ex.delta.clone(),
                }
            }
        };
        if value > SUPPORT_EPSILON {
            support.push(SupportVector {
                task: var.point.task,
                coef: var.sign * value,
                kind,
            });
        }
    }
    let dual = DualSolution {
        alpha,
        beta,
        objective: solution.objective,
        kkt_residual: solution.kkt_residual,
        converged: solution.converged,
        iterations: solution.iterations,
    };
    let linear_weights = if hyper.kernel.is_linear() {
        Some(recover_linear_weights(&dual, dataset, pseudos, hyper)?)
    } else {
        None
    };
    let diagnostics = TrainDiagnostics {
        instance_vars: dataset.total_instances(),
        rank_vars: used_pseudos,
        dropped_pairs: pseudos.dropped,
        support_instances: support.iter().filter(|s| s.is_instance()).count(),
        support_pairs: support.iter().filter(|s| !s.is_instance()).count(),
    };
    Ok(TrainedModel {
        hyper: *hyper,
        input_transform: None,
        bias: false,
        dim: dataset.dim(),
        task_ids: dataset.task_ids(),
        dual,
        support,
        linear_weights,
        diagnostics,
    })
}

fn weights_from_terms<'a>(
    variant: Variant,
    mu: f64,
    dim: usize,
    tasks: usize,
    terms: impl Iterator<Item = (usize, f64, bool, &'a [f64])>,
) -> LinearWeights {
    let mut shared = vec![0.0; dim];
    let mut v = vec![vec![0.0; dim]; tasks];
    for (task, coef, is_instance, x) in terms {
        if coef == 0.0 {
            continue;
        }
        axpy(&mut v[task], coef, x);
        if is_instance || variant.coupling() == Coupling::Global {
            axpy(&mut shared, coef, x);
        }
    }
    let w0 = shared.into_iter().map(|s| s / mu).collect();
    LinearWeights { w0, v }
}

/// Explicit `w0` and `v_t` from the multipliers (linear kernel only).
///
/// `v_t` collects the task's own instance and rank terms. `w0` is `1/mu` times
/// the sum of all instance terms, plus all rank terms for the globally
/// consistent variant; task-specific rank terms never reach `w0`.
pub fn recover_linear_weights(
    dual: &DualSolution,
    dataset: &MultiTaskDataset,
    pseudos: &PseudoSet,
    hyper: &Hyperparameters,
) -> Result<LinearWeights> {
    if !hyper.kernel.is_linear() {
        return Err(Error::NonLinearKernel);
    }
    if dual.alpha.len() != dataset.num_tasks() {
        return Err(invalid("multipliers do not match the dataset's tasks"));
    }
    if !dual.beta.is_empty() && dual.beta.len() != pseudos.len() {
        return Err(invalid("rank multipliers do not match the pseudo-examples"));
    }
    let instance_terms = dataset.tasks().iter().enumerate().flat_map(|(t, task)| {
        task.instances()
            .iter()
            .zip(task.labels())
            .zip(&dual.alpha[t])
            .map(move |((x, &y), &a)| (t, f64::from(y) * a, true, x.as_slice()))
    });
    let rank_terms = dual
        .beta
        .iter()
        .zip(&pseudos.examples)
        .map(|(b, ex)| (ex.task, PseudoExample::Z * b.value, false, ex.delta.as_slice()));
    Ok(weights_from_terms(
        hyper.variant,
        hyper.mu,
        dataset.dim(),
        dataset.num_tasks(),
        instance_terms.chain(rank_terms),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalEvaluation {
    pub objective: f64,
    /// Hinge slack per task and instance.
    pub xi: Vec<Vec<f64>>,
    /// Hinge slack per pseudo-example.
    pub eta: Vec<f64>,
}

/// Rank margin of a pseudo-example under the variant's constraint.
pub fn rank_margin(weights: &LinearWeights, variant: Variant, ex: &PseudoExample) -> f64 {
    match variant.coupling() {
        Coupling::Global => dot(&weights.task_weight(ex.task), &ex.delta),
        Coupling::TaskSpecific => dot(&weights.v[ex.task], &ex.delta),
    }
}

/// Primal objective and slacks at given explicit weights.
pub fn primal_objective(
    weights: &LinearWeights,
    dataset: &MultiTaskDataset,
    pseudos: &PseudoSet,
    hyper: &Hyperparameters,
) -> PrimalEvaluation {
    let mut xi = Vec::with_capacity(dataset.num_tasks());
    let mut loss = 0.0;
    for (t, task) in dataset.tasks().iter().enumerate() {
        let w = weights.task_weight(t);
        let slacks: Vec<f64> = task
            .instances()
            .iter()
            .zip(task.labels())
            .map(|(x, &y)| (1.0 - f64::from(y) * dot(&w, x)).max(0.0))
            .collect();
        loss += hyper.c * slacks.iter().sum::<f64>();
        xi.push(slacks);
    }
    let eta: Vec<f64> = if hyper.has_rank_block() {
        pseudos
            .examples
            .iter()
            .map(|ex| (1.0 - PseudoExample::Z * rank_margin(weights, hyper.variant, ex)).max(0.0))
            .collect()
    } else {
        Vec::new()
    };
    loss += hyper.c_rank() * eta.iter().sum::<f64>();
    let reg = 0.5 * weights.v.iter().map(|v| norm_squared(v)).sum::<f64>() + 0.5 * hyper.mu * norm_squared(&weights.w0);
    PrimalEvaluation {
        objective: reg + loss,
        xi,
        eta,
    }
}
