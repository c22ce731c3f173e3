use super::linalg::{mat_vec, project_to_simplex, quad_form};
use super::{CombineResult, Diagnostics, TaskGradientSet};
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scalar::{dot, Scalar};

/// Conflict-averse direction `g_0 + (c |g_0| / |g_w|) g_w`, where `g_0` is the
/// average gradient and `w` minimizes [`cagrad_objective`] over the simplex.
///
/// The inner problem runs projected gradient descent with backtracking for
/// `solver_iters` steps on the Gram matrix. `task_weights` are the effective
/// coefficients of each `g_i` in the returned direction.
pub fn combine_cagrad<F: Scalar>(
    g: &TaskGradientSet<F>,
    c: F,
    solver_iters: usize,
) -> Result<CombineResult<F>> {
    if !(c >= F::zero()) || !c.is_finite() {
        return Err(Error::config("c", "must be finite and non-negative"));
    }
    let t = g.tasks();
    let tf = F::of_usize(t);
    let g0 = g.mean();
    let g0_norm = dot(&g0, &g0).sqrt();
    let uniform = vec![F::one() / tf; t];

    if c == F::zero() || g0_norm == F::zero() {
        return Ok(CombineResult {
            direction: ParamVector(g0),
            task_weights: Some(uniform),
            diagnostics: Diagnostics::default(),
        });
    }

    let gram = g.gram();
    // b_i = g_i · g_0
    let b = mat_vec(&gram, &uniform);
    let radius = c * g0_norm;
    let objective = |w: &[F]| dot(w, &b) + radius * quad_form(&gram, w).max(F::zero()).sqrt();
    let gradient = |w: &[F]| -> Vec<F> {
        let mw = mat_vec(&gram, w);
        let n = dot(w, &mw).max(F::zero()).sqrt();
        if n > F::zero() {
            b.iter()
                .zip(&mw)
                .map(|(&bi, &mi)| bi + radius * mi / n)
                .collect()
        } else {
            b.clone()
        }
    };

    let trace: F = (0..t).map(|i| gram[i * t + i]).sum();
    let mut step = if trace > F::zero() {
        F::one() / trace
    } else {
        F::one()
    };
    let mut w = uniform.clone();
    let mut f = objective(&w);
    let mut iterations = 0;
    let half = F::of(0.5);
    for _ in 0..solver_iters {
        iterations += 1;
        let grad = gradient(&w);
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<F> = w
                .iter()
                .zip(&grad)
                .map(|(&wi, &gi)| wi - step * gi)
                .collect();
            let cand = project_to_simplex(&cand);
            let diff: Vec<F> = cand.iter().zip(&w).map(|(&a, &b)| a - b).collect();
            let fc = objective(&cand);
            let bound = f + dot(&grad, &diff) + dot(&diff, &diff) / (F::of(2.0) * step);
            if fc <= bound {
                let moved = dot(&diff, &diff) > F::zero();
                w = cand;
                f = fc;
                accepted = moved;
                step *= F::of(2.0);
                break;
            }
            step *= half;
        }
        if !accepted {
            break;
        }
    }

    let gw = g.weighted_sum(&w);
    let gw_norm = dot(&gw, &gw).sqrt();
    let mut diagnostics = Diagnostics {
        iterations,
        objective: Some(f),
        ..Diagnostics::default()
    };
    if gw_norm == F::zero() {
        diagnostics.fallback = true;
        return Ok(CombineResult {
            direction: ParamVector(g0),
            task_weights: Some(uniform),
            diagnostics,
        });
    }
    let lambda = radius / gw_norm;
    let direction: Vec<F> = g0.iter().zip(&gw).map(|(&a, &b)| a + lambda * b).collect();
    let weights = w.iter().map(|&wi| F::one() / tf + lambda * wi).collect();
    Ok(CombineResult {
        direction: ParamVector(direction),
        task_weights: Some(weights),
        diagnostics,
    })
}

/// `g_wᵀ g_0 + c |g_0| |g_w|` with `g_w = Σ w_i g_i`.
pub fn cagrad_objective<F: Scalar>(g: &TaskGradientSet<F>, w: &[F], c: F) -> F {
    let g0 = g.mean();
    let gw = g.weighted_sum(w);
    dot(&gw, &g0) + c * dot(&g0, &g0).sqrt() * dot(&gw, &gw).sqrt()
}
