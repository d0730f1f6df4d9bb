//! Leave-one-task-out comparison of the three variants on noisy synthetic tasks.
//!
//! Each seed draws eight training tasks plus three validation tasks. Every
//! variant picks its hyperparameters by grid search on the validation tasks,
//! then is scored by leave-one-task-out AUC on the training tasks.
//!
//! Usage: cargo run --release --example noisy_benchmark -- [seeds] [task_spread]

use mtl_rank::data::{generate_synthetic, SyntheticConfig};
use mtl_rank::evaluate::{grid_search, loto_cv, EvalOptions, GridSpec};
use mtl_rank::trainer::{Hyperparameters, TrainOptions, Variant};

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("number")).collect();
    let seeds = args.first().copied().unwrap_or(20.0) as u64;
    let spread = args.get(1).copied().unwrap_or(0.5);
    let eval = EvalOptions { threshold: 0.0, jobs: 8 };
    let grid = GridSpec {
        mu_values: vec![0.1, 1.0, 10.0],
        c_values: vec![0.1, 1.0, 10.0],
        gamma_values: vec![1.0],
        a_values: vec![0.01, 0.1, 1.0],
    };
    let options = TrainOptions::default();
    let mut wins = 0;
    for seed in 0..seeds {
        let cfg = SyntheticConfig {
            tasks: 11,
            m: 60,
            d: 10,
            task_spread: spread,
            noise_band: 0.5,
            flip_prob: 0.3,
            score_noise: 0.1,
            seed,
        };
        let (all, _) = generate_synthetic(&cfg).unwrap();
        let train = all.select(&(0..8).collect::<Vec<_>>()).unwrap();
        let validation = all.select(&[8, 9, 10]).unwrap();
        let mut line = format!("seed {seed:2}");
        let mut aucs = Vec::new();
        for variant in [Variant::Mtl, Variant::Gc, Variant::Ts] {
            let template = Hyperparameters::linear(variant, 1.0, 1.0, 0.0);
            let best = grid_search(&train, &validation, &grid, &template, &options, &eval).unwrap().best;
            let report = loto_cv(&train, &best, &options, &eval).unwrap();
            line.push_str(&format!(
                "  {variant}(mu={} C={} a={}): auc {:.4} det {:.2}",
                best.mu, best.c, best.a, report.mean_auc, report.detection_rate
            ));
            aucs.push(report.mean_auc);
        }
        if aucs[2] > aucs[0] {
            wins += 1;
        }
        println!("{line}");
    }
    println!("ts > mtl in {wins}/{seeds} seeds");
}
