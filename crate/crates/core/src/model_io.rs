//! JSON model files, format `mtl-rank/1`.
//!
//! Reals are written in shortest round-trip decimal form, so a saved and
//! reloaded model predicts bit-for-bit like the original.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::StandardizationParams;
use crate::error::{Error, Result};
use crate::trainer::{
    DualSolution, Hyperparameters, LinearWeights, SupportKind, SupportVector, TrainDiagnostics,
    TrainedModel,
};

pub const FORMAT_VERSION: &str = "mtl-rank/1";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SupportRecord {
    Instance { task: usize, coef: f64, x: Vec<f64> },
    Pseudo { task: usize, coef: f64, upper: Vec<f64>, lower: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    hyperparameters: Hyperparameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_transform: Option<StandardizationParams>,
    bias: bool,
    dim: usize,
    task_ids: Vec<String>,
    /// Dual variable order: instances task-major, then rank pairs.
    variables: Vec<VarRecord>,
    dual: DualSolution,
    support: Vec<SupportRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    linear_weights: Option<LinearWeights>,
    diagnostics: TrainDiagnostics,
}

/// Position of a multiplier in the dual variable order.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum VarRecord {
    Instance { task: usize, instance: usize, upper: f64 },
    Pair { task: usize, pair: [usize; 2], upper: f64 },
}

fn variable_map(model: &TrainedModel) -> Vec<VarRecord> {
    let mut vars = Vec::new();
    for (t, alphas) in model.dual.alpha.iter().enumerate() {
        vars.extend((0..alphas.len()).map(|i| VarRecord::Instance {
            task: t,
            instance: i,
            upper: model.hyper.c,
        }));
    }
    vars.extend(model.dual.beta.iter().map(|b| VarRecord::Pair {
        task: b.task,
        pair: [b.p, b.q],
        upper: model.hyper.c_rank(),
    }));
    vars
}

pub fn to_json(model: &TrainedModel) -> Result<String> {
    let file = ModelFile {
        version: FORMAT_VERSION.to_string(),
        hyperparameters: model.hyper,
        input_transform: model.input_transform.clone(),
        bias: model.bias,
        dim: model.dim,
        task_ids: model.task_ids.clone(),
        variables: variable_map(model),
        dual: model.dual.clone(),
        support: model
            .support
            .iter()
            .map(|sv| match &sv.kind {
                SupportKind::Instance(x) => SupportRecord::Instance {
                    task: sv.task,
                    coef: sv.coef,
                    x: x.clone(),
                },
                SupportKind::Pseudo { upper, lower, .. } => SupportRecord::Pseudo {
                    task: sv.task,
                    coef: sv.coef,
                    upper: upper.clone(),
                    lower: lower.clone(),
                },
            })
            .collect(),
        linear_weights: model.linear_weights.clone(),
        diagnostics: model.diagnostics.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version `{}` (expected `{FORMAT_VERSION}`)",
            file.version
        )));
    }
    file.hyperparameters
        .validate()
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    if let Some(t) = &file.input_transform {
        if t.means.len() != file.dim || t.stds.len() != file.dim {
            return Err(Error::ModelFormat("input transform does not match the model dimension".into()));
        }
    }
    let tasks = file.task_ids.len();
    let inner_dim = file.dim + usize::from(file.bias);
    let mut support = Vec::with_capacity(file.support.len());
    for rec in file.support {
        let sv = match rec {
            SupportRecord::Instance { task, coef, x } => SupportVector {
                task,
                coef,
                kind: SupportKind::Instance(x),
            },
            SupportRecord::Pseudo { task, coef, upper, lower } => {
                if upper.len() != lower.len() {
                    return Err(Error::ModelFormat("pseudo-example halves differ in length".into()));
                }
                let delta = upper.iter().zip(&lower).map(|(a, b)| a - b).collect();
                SupportVector {
                    task,
                    coef,
                    kind: SupportKind::Pseudo { upper, lower, delta },
                }
            }
        };
        let len = sv.point().feature.vector().len();
        if sv.task >= tasks || len != inner_dim || !sv.coef.is_finite() {
            return Err(Error::ModelFormat("support vector does not match the model header".into()));
        }
        support.push(sv);
    }
    let expected_vars = file.dual.alpha.iter().map(Vec::len).sum::<usize>() + file.dual.beta.len();
    if file.dual.alpha.len() != tasks || file.variables.len() != expected_vars {
        return Err(Error::ModelFormat("multiplier table does not match the task list".into()));
    }
    Ok(TrainedModel {
        hyper: file.hyperparameters,
        input_transform: file.input_transform,
        bias: file.bias,
        dim: file.dim,
        task_ids: file.task_ids,
        dual: file.dual,
        support,
        linear_weights: file.linear_weights,
        diagnostics: file.diagnostics,
    })
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    from_json(&fs::read_to_string(path)?)
}
