//! Primal active-set solver for
//!
//! ```text
//! minimize  1/2 ||mu - C w||^2
//! subject to  w >= 0,  a . w = 1        (a = p_S, strictly positive)
//! ```
//!
//! The working set holds the coordinates pinned at zero. Each iteration
//! solves the equality-constrained subproblem on the free coordinates by
//! eliminating the normalization constraint through a null-space basis and
//! then a least-squares solve. The solve is a truncated SVD, so a
//! rank-deficient `C` yields the minimum-norm step. Constraints enter and
//! leave the working set by lowest index, which keeps the iteration
//! deterministic and prevents cycling.

use super::WeightVector;
use crate::distributions::Categorical;
use crate::{Error, Matrix, Result};
use nalgebra::DVector;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;
const STEP_TOL: f64 = 1e-13;
const MULTIPLIER_TOL: f64 = 1e-14;

/// Value of `1/2 ||mu - C w||^2`.
pub fn qp_objective(c: &Matrix, mu: &Categorical, w: &WeightVector) -> f64 {
    let w = DVector::from_column_slice(w.values());
    let mu = DVector::from_column_slice(mu.probs());
    0.5 * (mu - c * w).norm_squared()
}

/// Solves the weight-estimation program.
///
/// The starting point `w = 1` is always feasible because `a` sums to one.
pub fn solve_qp(c: &Matrix, mu: &Categorical, p_s: &Categorical) -> Result<WeightVector> {
    let k = p_s.k();
    if k < 2 {
        return Err(Error::DegenerateProblem("need at least two classes".into()));
    }
    if mu.k() != k {
        return Err(Error::LengthMismatch(mu.k(), k));
    }
    if c.nrows() != k || c.ncols() != k {
        return Err(Error::ShapeMismatch(format!(
            "confusion is {}x{}, expected {k}x{k}",
            c.nrows(),
            c.ncols()
        )));
    }
    if let Some(y) = p_s.probs().iter().position(|p| *p <= 0.0) {
        return Err(Error::DegenerateProblem(format!(
            "source class {y} has zero probability"
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateProblem("confusion has non-finite entries".into()));
    }

    let a = p_s.probs();
    let mu = DVector::from_column_slice(mu.probs());
    let mut w = DVector::from_element(k, 1.0);
    let mut pinned = vec![false; k];
    let max_iter = 50 * k + 100;

    let mut converged = false;
    for _ in 0..max_iter {
        let free: Vec<usize> = (0..k).filter(|&i| !pinned[i]).collect();
        let step = subproblem_step(c, &mu, a, &w, &free);
        let scale = 1.0 + w.amax();
        if step.amax() <= STEP_TOL * scale {
            // Multipliers of the pinned bounds: g_i - nu a_i, with nu fitted
            // on the free coordinates where g_j = nu a_j holds.
            let g = c.transpose() * (c * &w - &mu);
            let num: f64 = free.iter().map(|&j| a[j] * g[j]).sum();
            let den: f64 = free.iter().map(|&j| a[j] * a[j]).sum();
            let nu = num / den;
            let tol = MULTIPLIER_TOL * (1.0 + g.amax());
            match (0..k).find(|&i| pinned[i] && g[i] - nu * a[i] < -tol) {
                Some(i) => pinned[i] = false,
                None => {
                    converged = true;
                    break;
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &free {
            if step[i] < 0.0 {
                let t = -w[i] / step[i];
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        w.axpy(alpha, &step, 1.0);
        if let Some(i) = blocking {
            w[i] = 0.0;
            pinned[i] = true;
        }
    }
    if !converged {
        log::warn!("active-set solver hit the iteration cap ({max_iter}) for k = {k}");
    }

    // Remove rounding drift so the constraints hold to machine precision.
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let dot: f64 = w.iter().zip(a).map(|(w, a)| w * a).sum();
    w /= dot;
    WeightVector::new(w.iter().copied().collect())
}

/// Step `p` (zero on pinned coordinates, `a . p = 0`) to the minimizer of the
/// objective restricted to the free face through `w`.
fn subproblem_step(c: &Matrix, mu: &DVector<f64>, a: &[f64], w: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let k = w.len();
    let m = free.len();
    let mut step = DVector::zeros(k);
    if m <= 1 {
        return step;
    }

    // Null-space basis of a_F: e_j - (a_j / a_r) e_r for every free j != r,
    // where r is the free coordinate with the largest a (lowest index on ties).
    let pivot = free
        .iter()
        .copied()
        .fold(free[0], |best, j| if a[j] > a[best] { j } else { best });
    let others: Vec<usize> = free.iter().copied().filter(|&j| j != pivot).collect();
    let basis = |j_col: usize, row: usize| -> f64 {
        let j = others[j_col];
        if row == j {
            1.0
        } else if row == pivot {
            -a[j] / a[pivot]
        } else {
            0.0
        }
    };

    // Least squares on (C Z) u = mu - C w.
    let n_u = others.len();
    let residual = mu - c * w;
    let mut lhs = Matrix::zeros(k, n_u);
    for col in 0..n_u {
        for row in 0..k {
            lhs[(row, col)] = free
                .iter()
                .map(|&i| c[(row, i)] * basis(col, i))
                .sum();
        }
    }

    let svd = lhs.svd(true, true);
    let largest = svd.singular_values.max();
    if largest == 0.0 {
        return step;
    }
    let u = match svd.solve(&residual, largest * RANK_TOL) {
        Ok(u) => u,
        Err(_) => return step,
    };
    for (col, &j) in others.iter().enumerate() {
        step[j] += u[col];
        step[pivot] -= a[j] / a[pivot] * u[col];
    }
    step
}
