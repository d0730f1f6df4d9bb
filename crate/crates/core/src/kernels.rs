//! Base kernels, the two multi-task kernels, and Gram assembly over instances
//! and pseudo-examples.
//!
//! A pseudo-example is treated as the feature-space difference
//! `phi(x_p) - phi(x_q)`, so kernel values involving it expand into two or four
//! base-kernel terms. For the linear kernel this is computed directly on the
//! explicit difference vector. [`PseudoKernel::RawDelta`] instead applies the
//! base kernel to the raw difference vector.

use serde::{Deserialize, Serialize};

use crate::data::MultiTaskDataset;
use crate::error::{invalid, Result};
use crate::linalg::{dot, squared_distance, SquareMatrix};
use crate::ranking::PseudoSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            KernelSpec::Rbf { gamma } => Err(invalid(format!("rbf gamma must be positive, got {gamma}"))),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, KernelSpec::Linear)
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Rbf { gamma } => Some(gamma),
        }
    }

    #[inline]
    fn eval(&self, x: &[f64], x2: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, x2),
            KernelSpec::Rbf { gamma } => (-gamma * squared_distance(x, x2)).exp(),
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf(gamma={gamma})"),
        }
    }
}

/// How the base kernel sees a pseudo-example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoKernel {
    /// `phi(x_p) - phi(x_q)`, expanded into base-kernel evaluations.
    #[default]
    FeatureSpace,
    /// Base kernel applied to the raw vector `x_p - x_q`.
    RawDelta,
}

/// How rank pseudo-examples couple to the shared component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `(1/mu + delta_st) k`: every point feeds `w0`.
    Global,
    /// `(u_a u_b / mu + delta_st) k`: pseudo-examples only touch `v_t`.
    TaskSpecific,
}

pub fn base_kernel(x: &[f64], x2: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(invalid(format!(
            "kernel arguments differ in dimension ({} vs {})",
            x.len(),
            x2.len()
        )));
    }
    Ok(spec.eval(x, x2))
}

/// The vector(s) behind one augmented point.
#[derive(Debug, Clone, Copy)]
pub enum Feature<'a> {
    Instance(&'a [f64]),
    Pseudo {
        upper: &'a [f64],
        lower: &'a [f64],
        delta: &'a [f64],
    },
}

impl Feature<'_> {
    /// 1 for a real instance, 0 for a pseudo-example.
    pub fn indicator(&self) -> f64 {
        match self {
            Feature::Instance(_) => 1.0,
            Feature::Pseudo { .. } => 0.0,
        }
    }

    pub fn is_instance(&self) -> bool {
        matches!(self, Feature::Instance(_))
    }

    /// The explicit vector: `x` for instances, `x_p - x_q` for pseudo-examples.
    pub fn vector(&self) -> &[f64] {
        match self {
            Feature::Instance(x) => x,
            Feature::Pseudo { delta, .. } => delta,
        }
    }
}

/// A feature together with the task it belongs to. `task: None` stands for an
/// unseen task, which shares no task-specific component with anything.
#[derive(Debug, Clone, Copy)]
pub struct KernelPoint<'a> {
    pub task: Option<usize>,
    pub feature: Feature<'a>,
}

impl<'a> KernelPoint<'a> {
    pub fn instance(task: Option<usize>, x: &'a [f64]) -> Self {
        KernelPoint {
            task,
            feature: Feature::Instance(x),
        }
    }

    #[inline]
    fn same_task(&self, other: &KernelPoint<'_>) -> bool {
        self.task.is_some() && self.task == other.task
    }
}

/// Base kernel between two augmented points.
pub fn cross_kernel(a: &Feature<'_>, b: &Feature<'_>, spec: &KernelSpec, mode: PseudoKernel) -> f64 {
    if spec.is_linear() || mode == PseudoKernel::RawDelta {
        return spec.eval(a.vector(), b.vector());
    }
    match (a, b) {
        (Feature::Instance(x), Feature::Instance(y)) => spec.eval(x, y),
        (Feature::Instance(x), Feature::Pseudo { upper, lower, .. })
        | (Feature::Pseudo { upper, lower, .. }, Feature::Instance(x)) => {
            spec.eval(x, upper) - spec.eval(x, lower)
        }
        (
            Feature::Pseudo {
                upper: p, lower: q, ..
            },
            Feature::Pseudo {
                upper: k, lower: l, ..
            },
        ) => spec.eval(p, k) - spec.eval(p, l) - spec.eval(q, k) + spec.eval(q, l),
    }
}

/// Multi-task kernel with fixed coupling, relatedness `mu` and base kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiTaskKernel {
    coupling: Coupling,
    inv_mu: f64,
    base: KernelSpec,
    pseudo: PseudoKernel,
}

impl MultiTaskKernel {
    pub fn new(coupling: Coupling, mu: f64, base: KernelSpec, pseudo: PseudoKernel) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(invalid(format!("mu must be positive, got {mu}")));
        }
        base.validate()?;
        Ok(MultiTaskKernel {
            coupling,
            inv_mu: 1.0 / mu,
            base,
            pseudo,
        })
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    /// Weight in front of the base kernel; zero means the pair does not interact.
    #[inline]
    pub fn coefficient(&self, a: &KernelPoint<'_>, b: &KernelPoint<'_>) -> f64 {
        let shared = match self.coupling {
            Coupling::Global => self.inv_mu,
            Coupling::TaskSpecific => {
                if a.feature.is_instance() && b.feature.is_instance() {
                    self.inv_mu
                } else {
                    0.0
                }
            }
        };
        if a.same_task(b) {
            shared + 1.0
        } else {
            shared
        }
    }

    #[inline]
    pub fn eval(&self, a: &KernelPoint<'_>, b: &KernelPoint<'_>) -> f64 {
        let coef = self.coefficient(a, b);
        if coef == 0.0 {
            return 0.0;
        }
        coef * cross_kernel(&a.feature, &b.feature, &self.base, self.pseudo)
    }
}

/// Globally consistent kernel `(1/mu + delta_st) k(a, b)`.
pub fn mtl_kernel_gc(
    a: &KernelPoint<'_>,
    b: &KernelPoint<'_>,
    mu: f64,
    spec: &KernelSpec,
    mode: PseudoKernel,
) -> Result<f64> {
    Ok(MultiTaskKernel::new(Coupling::Global, mu, *spec, mode)?.eval(a, b))
}

/// Task-specific operator-valued kernel `(u_a u_b / mu + delta_st) k(a, b)`.
pub fn mtl_kernel_ts(
    a: &KernelPoint<'_>,
    b: &KernelPoint<'_>,
    mu: f64,
    spec: &KernelSpec,
    mode: PseudoKernel,
) -> Result<f64> {
    Ok(MultiTaskKernel::new(Coupling::TaskSpecific, mu, *spec, mode)?.eval(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    /// Index of the instance within its task.
    Instance(usize),
    /// Index into the pseudo-example set.
    Pseudo(usize),
}

/// Index of one dual variable's data point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedPoint {
    pub task: usize,
    pub kind: PointKind,
}

impl AugmentedPoint {
    pub fn indicator(&self) -> f64 {
        match self.kind {
            PointKind::Instance(_) => 1.0,
            PointKind::Pseudo(_) => 0.0,
        }
    }

    pub fn resolve<'a>(&self, dataset: &'a MultiTaskDataset, pseudos: &'a PseudoSet) -> KernelPoint<'a> {
        let feature = match self.kind {
            PointKind::Instance(i) => Feature::Instance(&dataset.task(self.task).instances()[i]),
            PointKind::Pseudo(k) => {
                let ex = &pseudos.examples[k];
                let inst = dataset.task(ex.task).instances();
                Feature::Pseudo {
                    upper: &inst[ex.p],
                    lower: &inst[ex.q],
                    delta: &ex.delta,
                }
            }
        };
        KernelPoint {
            task: Some(self.task),
            feature,
        }
    }
}

/// All instances (task-major) followed by all pseudo-examples (task-major).
pub fn augmented_points(dataset: &MultiTaskDataset, pseudos: &PseudoSet) -> Vec<AugmentedPoint> {
    let mut out = Vec::with_capacity(dataset.total_instances() + pseudos.len());
    for (t, task) in dataset.tasks().iter().enumerate() {
        out.extend((0..task.len()).map(|i| AugmentedPoint {
            task: t,
            kind: PointKind::Instance(i),
        }));
    }
    out.extend(pseudos.examples.iter().enumerate().map(|(k, ex)| AugmentedPoint {
        task: ex.task,
        kind: PointKind::Pseudo(k),
    }));
    out
}

/// Dense symmetric Gram matrix; each unordered pair is evaluated once.
pub fn assemble_gram(points: &[KernelPoint<'_>], kernel: &MultiTaskKernel) -> SquareMatrix {
    assemble_weighted_gram(points, None, kernel)
}

/// Gram matrix with entries scaled by `signs[u] * signs[v]`.
pub(crate) fn assemble_weighted_gram(
    points: &[KernelPoint<'_>],
    signs: Option<&[f64]>,
    kernel: &MultiTaskKernel,
) -> SquareMatrix {
    let n = points.len();
    let upper_row = |i: usize| -> Vec<f64> {
        (i..n)
            .map(|j| {
                let k = kernel.eval(&points[i], &points[j]);
                match signs {
                    Some(s) => s[i] * s[j] * k,
                    None => k,
                }
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(upper_row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..n).map(upper_row).collect();

    let mut g = SquareMatrix::zeros(n);
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + offset;
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}
