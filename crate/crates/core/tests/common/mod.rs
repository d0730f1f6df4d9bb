#![allow(dead_code)]

use mtl_rank::data::{generate_synthetic, MultiTaskDataset, SyntheticConfig};
use mtl_rank::linalg::SquareMatrix;
use mtl_rank::qp::CoordinateOptions;
use nalgebra::DMatrix;

/// Small synthetic problem with oracle scores.
pub fn synthetic(tasks: usize, m: usize, d: usize, seed: u64) -> MultiTaskDataset {
    let cfg = SyntheticConfig {
        tasks,
        m,
        d,
        seed,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg).expect("valid config").0
}

/// Noise-free labels: every task is linearly separable through the origin.
pub fn separable(tasks: usize, m: usize, d: usize, seed: u64) -> MultiTaskDataset {
    let cfg = SyntheticConfig {
        tasks,
        m,
        d,
        flip_prob: 0.0,
        score_noise: 0.0,
        seed,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg).expect("valid config").0
}

/// Solver settings tight enough for identities checked at 1e-8.
pub fn tight() -> CoordinateOptions {
    CoordinateOptions {
        tol: 1e-11,
        max_sweeps: Some(2_000_000),
        ..CoordinateOptions::default()
    }
}

pub fn to_nalgebra(m: &SquareMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

pub fn min_eigenvalue(m: &SquareMatrix) -> f64 {
    to_nalgebra(m).symmetric_eigenvalues().min()
}
