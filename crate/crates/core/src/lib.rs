//! Multi-task support vector machines with auxiliary pairwise-rank supervision.
//!
//! Tasks share a weight vector `w0` and carry their own deviation `v_t`, so the
//! model for task `t` is `w0 + v_t`. Each task may additionally provide a real
//! valued score per instance; ordered pairs of instances then become rank
//! constraints on either the full task model (globally consistent, [`Variant::Gc`])
//! or on the task-specific part only (task specific, [`Variant::Ts`]).
//!
//! All three variants reduce to a box-constrained dual QP over the instance and
//! pseudo-example multipliers, solved by [`qp::solve_coordinate`].
//!
//! ```
//! use mtl_rank::data::{generate_synthetic, SyntheticConfig};
//! use mtl_rank::trainer::{train, Hyperparameters, TrainOptions, Variant};
//! use mtl_rank::evaluate::predict_out_of_task;
//!
//! let config = SyntheticConfig { tasks: 3, m: 20, d: 4, ..SyntheticConfig::default() };
//! let (data, _truth) = generate_synthetic(&config).unwrap();
//! let hyper = Hyperparameters::linear(Variant::Ts, 1.0, 1.0, 0.1);
//! let model = train(&data, &hyper, &TrainOptions::default()).unwrap();
//! let score = predict_out_of_task(&model, &[0.5, -0.2, 0.1, 0.0]).unwrap();
//! assert!(score.is_finite());
//! ```

pub mod data;
pub mod error;
pub mod evaluate;
pub mod kernels;
pub mod linalg;
pub mod model_io;
mod parallel;
pub mod qp;
pub mod ranking;
pub mod trainer;

pub use error::{Error, Result};
pub use trainer::{Hyperparameters, TrainOptions, TrainedModel, Variant};
