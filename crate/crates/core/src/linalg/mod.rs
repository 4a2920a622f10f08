//! Sparse storage and the direct solver used for every Newton and adjoint system.

mod multifrontal;
mod sparse;

use std::time::Instant;

pub use multifrontal::{Analysis, LuFactor};
pub use sparse::{SparseMatrix, SparsityPattern};

use crate::error::{Error, Result};

/// Default refusal limit on the number of unknowns.
pub const DEFAULT_DOF_CAP: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolveReport {
    pub residual_norm: f64,
    /// `‖A‖_F ‖x‖ + ‖b‖`, the scale the residual is judged against.
    pub residual_scale: f64,
    pub pivot_growth: f64,
    pub refinement_steps: usize,
    pub elapsed_secs: f64,
}

/// A factorized matrix ready for repeated solves with `A` or `Aᵀ`.
#[derive(Debug, Clone)]
pub struct DirectSolver {
    lu: LuFactor,
    frobenius: f64,
    factor_secs: f64,
}

const MAX_REFINEMENT: usize = 4;

impl DirectSolver {
    pub fn new(a: &SparseMatrix, analysis: &Analysis, cap: usize) -> Result<Self> {
        if a.n() > cap {
            return Err(Error::TooLarge { n: a.n(), cap });
        }
        let t0 = Instant::now();
        let lu = LuFactor::factor(a, analysis)?;
        let factor_secs = t0.elapsed().as_secs_f64();
        log::debug!(
            "lu: n={} entries={} delayed={} growth={:.3e} time={:.3}s",
            a.n(),
            lu.factor_entries(),
            lu.delayed_pivots(),
            lu.growth(),
            factor_secs
        );
        Ok(Self { lu, frobenius: a.frobenius_norm(), factor_secs })
    }

    pub fn factor(&self) -> &LuFactor {
        &self.lu
    }

    /// Solves `A x = b` (or `Aᵀ x = b`) with iterative refinement against `a`,
    /// which must be the factorized matrix.
    pub fn solve(&self, a: &SparseMatrix, b: &[f64], transpose: bool) -> (Vec<f64>, LinearSolveReport) {
        let t0 = Instant::now();
        let n = b.len();
        let apply = |x: &[f64], y: &mut [f64]| {
            if transpose {
                a.matvec_transpose(x, y)
            } else {
                a.matvec(x, y)
            }
        };
        let lu_solve = |v: &mut [f64]| {
            if transpose {
                self.lu.solve_transpose_in_place(v)
            } else {
                self.lu.solve_in_place(v)
            }
        };
        let mut x = b.to_vec();
        lu_solve(&mut x);
        let bnorm = norm2(b);
        let mut r = vec![0.0; n];
        let residual = |x: &[f64], r: &mut [f64]| {
            apply(x, r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            norm2(r)
        };
        let mut rnorm = residual(&x, &mut r);
        let mut steps = 0;
        // Refine until the residual stops decreasing; a normwise backward
        // stable residual can still be large against huge right-hand sides.
        while steps < MAX_REFINEMENT {
            if rnorm == 0.0 || !rnorm.is_finite() {
                break;
            }
            let mut dx = r.clone();
            lu_solve(&mut dx);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let mut rt = vec![0.0; n];
            let tnorm = residual(&trial, &mut rt);
            steps += 1;
            if tnorm >= rnorm {
                break;
            }
            x = trial;
            r = rt;
            rnorm = tnorm;
        }
        let report = LinearSolveReport {
            residual_norm: rnorm,
            residual_scale: self.frobenius * norm2(&x) + bnorm,
            pivot_growth: self.lu.growth(),
            refinement_steps: steps,
            elapsed_secs: self.factor_secs + t0.elapsed().as_secs_f64(),
        };
        (x, report)
    }
}

/// Factorizes `a` and solves `A x = b`.
pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<(Vec<f64>, LinearSolveReport)> {
    let analysis = Analysis::new(a.pattern())?;
    let solver = DirectSolver::new(a, &analysis, DEFAULT_DOF_CAP)?;
    Ok(solver.solve(a, b, false))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
