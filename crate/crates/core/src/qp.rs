//! Box-constrained dual QPs: maximize `1'l - l'Ql/2` subject to `0 <= l <= c`.
//!
//! [`solve_coordinate`] is the production solver. [`solve_projected_gradient_oracle`]
//! is a deliberately simple second method kept for cross-checking.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::linalg::{dot, SquareMatrix};

const ASYMMETRY_TOL: f64 = 1e-10;
const ZERO_CURVATURE: f64 = 1e-14;
/// Recompute the maintained gradient from scratch this often (in sweeps).
const REFRESH_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQP {
    q: SquareMatrix,
    upper: Vec<f64>,
}

impl BoxQP {
    pub fn new(q: SquareMatrix, upper: Vec<f64>) -> Result<Self> {
        if q.dim() != upper.len() {
            return Err(invalid(format!(
                "QP has {} variables but {} upper bounds",
                q.dim(),
                upper.len()
            )));
        }
        if q.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(invalid("QP matrix contains non-finite entries"));
        }
        let asym = q.asymmetry();
        if asym > ASYMMETRY_TOL {
            return Err(invalid(format!("QP matrix is not symmetric (relative asymmetry {asym:e})")));
        }
        if let Some(c) = upper.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(invalid(format!("upper bounds must be positive and finite, got {c}")));
        }
        Ok(BoxQP { q, upper })
    }

    pub fn q(&self) -> &SquareMatrix {
        &self.q
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    /// Dual objective `sum(l) - l'Ql/2`.
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let ql = self.q.mul_vec(lambda);
        lambda.iter().sum::<f64>() - 0.5 * dot(lambda, &ql)
    }

    /// Gradient `1 - Ql` of the dual objective.
    pub fn gradient(&self, lambda: &[f64]) -> Vec<f64> {
        self.q.mul_vec(lambda).into_iter().map(|v| 1.0 - v).collect()
    }

    fn in_box(&self, lambda: &[f64]) -> bool {
        lambda.len() == self.len() && lambda.iter().zip(&self.upper).all(|(l, c)| *l >= 0.0 && l <= c)
    }

    /// Plain-text dump: `n`, then `n` bounds, then `n` rows of `Q`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.len())?;
        writeln!(out, "{}", join(&self.upper))?;
        for i in 0..self.len() {
            writeln!(out, "{}", join(self.q.row(i)))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| invalid(format!("QP text ended before {what}")))
        };
        let n: usize = next("size")?
            .trim()
            .parse()
            .map_err(|_| invalid("bad QP size line"))?;
        let upper = parse_row(&next("bounds")?, n)?;
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n {
            data.extend(parse_row(&next("matrix row")?, n)?);
        }
        BoxQP::new(SquareMatrix::from_row_major(n, data).expect("sized"), upper)
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_row(line: &str, n: usize) -> Result<Vec<f64>> {
    let row = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| invalid(format!("bad number `{t}` in QP text"))))
        .collect::<Result<Vec<_>>>()?;
    if row.len() != n {
        return Err(invalid(format!("QP row has {} entries, expected {n}", row.len())));
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPSolution {
    pub lambda: Vec<f64>,
    /// Dual objective, maximization convention.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each sweep, when requested.
    pub trace: Vec<f64>,
}

/// Projected-gradient violation for one coordinate.
#[inline]
fn violation(lambda: f64, upper: f64, g: f64) -> f64 {
    if lambda <= 0.0 {
        g.max(0.0)
    } else if lambda >= upper {
        (-g).max(0.0)
    } else {
        g.abs()
    }
}

fn residual_from_gradient(qp: &BoxQP, lambda: &[f64], g: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(&qp.upper)
        .zip(g)
        .fold(0.0, |m, ((l, c), g)| m.max(violation(*l, *c, *g)))
}

/// Largest violation of the KKT conditions of the box QP at `lambda`.
///
/// Interior coordinates contribute `|g_u|`, coordinates at zero contribute any
/// positive gradient and coordinates at the upper bound any negative one.
pub fn kkt_residual(qp: &BoxQP, lambda: &[f64]) -> Result<f64> {
    if !qp.in_box(lambda) {
        return Err(invalid("multipliers lie outside the box"));
    }
    Ok(residual_from_gradient(qp, lambda, &qp.gradient(lambda)))
}

/// Visiting order of the coordinates within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    Cyclic,
    Reversed,
    /// A fresh permutation every sweep, drawn from a seeded generator.
    Shuffled(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateOptions {
    pub tol: f64,
    /// `None` means `max(10 n, 1000)`.
    pub max_sweeps: Option<usize>,
    pub order: SweepOrder,
    pub record_trace: bool,
}

impl Default for CoordinateOptions {
    fn default() -> Self {
        CoordinateOptions {
            tol: 1e-6,
            max_sweeps: None,
            order: SweepOrder::Shuffled(0),
            record_trace: false,
        }
    }
}

impl CoordinateOptions {
    pub fn with_tol(tol: f64) -> Self {
        CoordinateOptions {
            tol,
            ..Self::default()
        }
    }
}

/// Coordinate ascent with exact one-dimensional maximization per variable.
///
/// Non-convergence is not an error: the last iterate comes back with
/// `converged = false`.
pub fn solve_coordinate(qp: &BoxQP, options: &CoordinateOptions) -> QPSolution {
    let n = qp.len();
    let max_sweeps = options.max_sweeps.unwrap_or((10 * n).max(1000));
    let mut lambda = vec![0.0; n];
    let mut g = vec![1.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    if options.order == SweepOrder::Reversed {
        order.reverse();
    }
    let mut rng = match options.order {
        SweepOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut trace = Vec::new();
    let mut residual = residual_from_gradient(qp, &lambda, &g);
    let mut sweeps = 0;
    let mut converged = residual <= options.tol;

    while !converged && sweeps < max_sweeps {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for &u in &order {
            let quu = qp.q.get(u, u);
            let c = qp.upper[u];
            let old = lambda[u];
            let new = if quu > ZERO_CURVATURE {
                (old + g[u] / quu).clamp(0.0, c)
            } else if g[u] > 0.0 {
                c
            } else {
                0.0
            };
            let step = new - old;
            if step != 0.0 {
                lambda[u] = new;
                for (gv, quv) in g.iter_mut().zip(qp.q.row(u)) {
                    *gv -= step * quv;
                }
            }
        }
        sweeps += 1;
        if sweeps % REFRESH_EVERY == 0 {
            g = qp.gradient(&lambda);
        }
        if options.record_trace {
            trace.push(qp.objective(&lambda));
        }
        residual = residual_from_gradient(qp, &lambda, &g);
        if residual <= options.tol {
            g = qp.gradient(&lambda);
            residual = residual_from_gradient(qp, &lambda, &g);
            converged = residual <= options.tol;
        }
    }
    let residual = residual_from_gradient(qp, &lambda, &qp.gradient(&lambda));
    QPSolution {
        objective: qp.objective(&lambda),
        kkt_residual: residual,
        converged: residual <= options.tol,
        iterations: sweeps,
        lambda,
        trace,
    }
}

/// Projected gradient ascent with step `1/L`, `L` the largest absolute row sum of `Q`.
pub fn solve_projected_gradient_oracle(qp: &BoxQP, tol: f64, max_iters: usize) -> QPSolution {
    let n = qp.len();
    let lipschitz = (0..n)
        .map(|i| qp.q.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    let mut lambda = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = kkt_residual(qp, &lambda).expect("origin is feasible");
    while residual > tol && iterations < max_iters {
        let g = qp.gradient(&lambda);
        for ((l, gv), c) in lambda.iter_mut().zip(&g).zip(&qp.upper) {
            *l = (*l + step * gv).clamp(0.0, *c);
        }
        iterations += 1;
        residual = kkt_residual(qp, &lambda).expect("iterate is clipped");
    }
    QPSolution {
        objective: qp.objective(&lambda),
        kkt_residual: residual,
        converged: residual <= tol,
        iterations,
        lambda,
        trace: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn qp(rows: &[Vec<f64>], upper: &[f64]) -> BoxQP {
        BoxQP::new(SquareMatrix::from_rows(rows).unwrap(), upper.to_vec()).unwrap()
    }

    fn tight() -> CoordinateOptions {
        CoordinateOptions::with_tol(1e-12)
    }

    #[test]
    fn coordinate_small_cases() {
        let s = solve_coordinate(&qp(&[vec![1.0]], &[10.0]), &tight());
        assert_abs_diff_eq!(s.lambda[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, 0.5, epsilon = 1e-12);
        assert!(s.converged);

        let s = solve_coordinate(&qp(&[vec![1.0]], &[0.5]), &tight());
        assert_eq!(s.lambda, vec![0.5]);
        assert_abs_diff_eq!(s.objective, 0.375, epsilon = 1e-12);

        let s = solve_coordinate(&qp(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[10.0, 10.0]), &tight());
        assert_abs_diff_eq!(s.lambda[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lambda[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_small_cases() {
        let s = solve_projected_gradient_oracle(&qp(&[vec![2.0]], &[10.0]), 1e-12, 10_000);
        assert_abs_diff_eq!(s.lambda[0], 0.5, epsilon = 1e-12);

        let zero = qp(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[3.0, 0.25]);
        let s = solve_projected_gradient_oracle(&zero, 1e-12, 10);
        assert_eq!(s.lambda, vec![3.0, 0.25]);
        let s = solve_coordinate(&zero, &tight());
        assert_eq!(s.lambda, vec![3.0, 0.25]);
    }

    #[test]
    fn kkt_residual_cases() {
        let one = qp(&[vec![1.0]], &[10.0]);
        assert_eq!(kkt_residual(&one, &[1.0]).unwrap(), 0.0);
        assert!(kkt_residual(&one, &[11.0]).is_err());
        assert!(kkt_residual(&one, &[-0.1]).is_err());

        // first coordinate at zero with g = 1 - 4 = -3: bound-supported
        let pushed_out = qp(&[vec![16.0, 4.0], vec![4.0, 1.0]], &[10.0, 1.0]);
        assert_eq!(kkt_residual(&pushed_out, &[0.0, 1.0]).unwrap(), 0.0);
        // first coordinate at zero with g = 1 + 1 = 2: ascent direction exists
        let pulled_in = qp(&[vec![1.0, -1.0], vec![-1.0, 1.0]], &[10.0, 10.0]);
        assert_eq!(kkt_residual(&pulled_in, &[0.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn kkt_violation_rule() {
        assert_eq!(violation(0.0, 1.0, -3.0), 0.0);
        assert_eq!(violation(0.0, 1.0, 2.0), 2.0);
        assert_eq!(violation(1.0, 1.0, 2.0), 0.0);
        assert_eq!(violation(1.0, 1.0, -2.0), 2.0);
        assert_eq!(violation(0.5, 1.0, -0.25), 0.25);
    }

    #[test]
    fn rejects_invalid_problems() {
        let asym = SquareMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        assert!(BoxQP::new(asym, vec![1.0, 1.0]).is_err());
        let sym = SquareMatrix::identity(2);
        assert!(BoxQP::new(sym.clone(), vec![1.0, 0.0]).is_err());
        assert!(BoxQP::new(sym, vec![1.0]).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let q = qp(&[vec![1.0, 0.999], vec![0.999, 1.0]], &[100.0, 100.0]);
        let opts = CoordinateOptions {
            tol: 1e-14,
            max_sweeps: Some(2),
            ..CoordinateOptions::default()
        };
        let s = solve_coordinate(&q, &opts);
        assert!(!s.converged);
        assert_eq!(s.iterations, 2);
        assert!(s.lambda.iter().zip(q.upper()).all(|(l, c)| *l >= 0.0 && l <= c));
    }

    #[test]
    fn text_round_trip() {
        let q = qp(&[vec![2.0, 0.1], vec![0.1, 1.0 / 3.0]], &[1.0, 0.7]);
        let mut buf = Vec::new();
        q.write_text(&mut buf).unwrap();
        let back = BoxQP::read_text(&buf[..]).unwrap();
        assert_eq!(back, q);
    }
}
