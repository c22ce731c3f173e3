use super::linalg::{mat_vec, quad_form, solve};
use super::{combine_average, CombineResult, Diagnostics, TaskGradientSet};
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scalar::Scalar;

/// Bargaining weights `α > 0` with `g_iᵀ d = 1 / α_i`, `d = Σ α_j g_j`.
///
/// These are the stationary points of the strictly convex barrier
/// `f(α) = ½ αᵀGα − Σ ln α_i` over the Gram matrix `G`, so the fixed point
/// is reached with damped Newton steps: each step starts at full length and
/// shrinks by `damping` until it keeps `α > 0` and decreases `f`. Starts
/// from `α_i = 1 / |g_i|` and stops once `max_i |α_i (Gα)_i − 1| ≤ eps`;
/// otherwise returns the best iterate with `diagnostics.fallback` set
/// (for instance when no common ascent direction exists).
pub fn combine_nashmtl<F: Scalar>(
    g: &TaskGradientSet<F>,
    fp_iters: usize,
    eps: F,
    damping: F,
) -> Result<CombineResult<F>> {
    if !(eps > F::zero()) {
        return Err(Error::config("nash_eps", "must be positive"));
    }
    if !(damping > F::zero() && damping < F::one()) {
        return Err(Error::config("nash_damping", "must lie in (0, 1)"));
    }
    let t = g.tasks();
    let gram = g.gram();
    let diag: Vec<F> = (0..t).map(|i| gram[i * t + i]).collect();
    if diag.iter().any(|&d| d == F::zero()) {
        let mut r = combine_average(g);
        r.diagnostics.fallback = true;
        return Ok(r);
    }

    let half = F::of(0.5);
    let barrier =
        |alpha: &[F]| half * quad_form(&gram, alpha) - alpha.iter().map(|a| a.ln()).sum::<F>();
    let residual_of = |alpha: &[F], ga: &[F]| {
        alpha
            .iter()
            .zip(ga)
            .map(|(&a, &p)| (a * p - F::one()).abs())
            .fold(F::zero(), F::max)
    };

    let mut alpha: Vec<F> = diag.iter().map(|&d| F::one() / d.sqrt()).collect();
    let mut ga = mat_vec(&gram, &alpha);
    let mut residual = residual_of(&alpha, &ga);
    let mut best = (residual, alpha.clone());
    let mut iterations = 0;
    let min_step = F::of(1e-12);
    while residual > eps && iterations < fp_iters {
        iterations += 1;
        let grad: Vec<F> = ga
            .iter()
            .zip(&alpha)
            .map(|(&p, &a)| p - F::one() / a)
            .collect();
        let mut hess = gram.clone();
        for (i, &a) in alpha.iter().enumerate() {
            hess[i * t + i] += F::one() / (a * a);
        }
        let Some(newton) = solve(&hess, &grad, F::of(1e-14)) else {
            break;
        };
        let slope: F = -grad.iter().zip(&newton).map(|(&g, &n)| g * n).sum::<F>();
        let f0 = barrier(&alpha);
        let mut step = F::one();
        let next = loop {
            let cand: Vec<F> = alpha
                .iter()
                .zip(&newton)
                .map(|(&a, &n)| a - step * n)
                .collect();
            if cand.iter().all(|&a| a > F::zero())
                && barrier(&cand) <= f0 + F::of(1e-4) * step * slope
            {
                break Some(cand);
            }
            step *= damping;
            if step < min_step {
                break None;
            }
        };
        let Some(next) = next else {
            break;
        };
        alpha = next;
        ga = mat_vec(&gram, &alpha);
        residual = residual_of(&alpha, &ga);
        if residual < best.0 {
            best = (residual, alpha.clone());
        }
    }
    let (residual, alpha) = best;
    let direction = g.weighted_sum(&alpha);
    Ok(CombineResult {
        direction: ParamVector(direction),
        task_weights: Some(alpha),
        diagnostics: Diagnostics {
            iterations,
            residual: Some(residual),
            fallback: residual > eps,
            ..Diagnostics::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_pair_has_unit_weights() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = combine_nashmtl(&g, 20, 1e-6, 0.5).unwrap();
        let a = r.task_weights.unwrap();
        assert!((a[0] - 1.0).abs() < 1e-9 && (a[1] - 1.0).abs() < 1e-9);
        assert_eq!(r.direction.0, vec![1.0, 1.0]);
    }

    #[test]
    fn identical_unit_rows() {
        let v = vec![0.6, 0.8];
        let g = TaskGradientSet::<f64>::from_rows(vec![v.clone(), v.clone()]).unwrap();
        let r = combine_nashmtl(&g, 20, 1e-6, 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for a in r.task_weights.unwrap() {
            assert!((a - h).abs() < 1e-6);
        }
        let s = std::f64::consts::SQRT_2;
        for (d, x) in r.direction.0.iter().zip(&v) {
            assert!((d - s * x).abs() < 1e-6);
        }
        assert!(r.diagnostics.residual.unwrap() <= 1e-6);
    }

    #[test]
    fn opposing_rows_are_flagged() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let r = combine_nashmtl(&g, 20, 1e-6, 0.5).unwrap();
        assert!(r.diagnostics.fallback);
        assert!(r.direction.is_finite());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(combine_nashmtl(&g, 20, 0.0, 0.5).is_err());
        assert!(combine_nashmtl(&g, 20, 1e-6, 0.0).is_err());
        assert!(combine_nashmtl(&g, 20, 1e-6, 1.0).is_err());
    }
}
