use super::linalg::{mat_vec, quad_form};
use super::{CombineResult, Diagnostics, TaskGradientSet};
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scalar::{dot, Scalar};

/// Weight `γ` on the first vector of the min-norm point of the segment
/// between two vectors, from their Gram entries:
/// `γ = clip((g2 − g1)·g2 / |g1 − g2|², 0, 1)`.
pub fn min_norm_pair<F: Scalar>(g11: F, g12: F, g22: F) -> F {
    let denom = g11 + g22 - F::of(2.0) * g12;
    if denom <= F::zero() {
        return F::of(0.5);
    }
    ((g22 - g12) / denom).max(F::zero()).min(F::one())
}

/// Min-norm element of the convex hull of the task gradients.
///
/// Two tasks use the closed form; more tasks run away-step Frank-Wolfe on the
/// Gram matrix with exact line search for at most `fw_iters` iterations.
/// `diagnostics.objective` is the squared norm of the direction and
/// `diagnostics.residual` the final duality gap.
pub fn combine_mgda<F: Scalar>(
    g: &TaskGradientSet<F>,
    fw_iters: usize,
) -> Result<CombineResult<F>> {
    if fw_iters == 0 {
        return Err(Error::config("mgda_iters", "must be at least 1"));
    }
    let t = g.tasks();
    let gram = g.gram();
    let scale = (0..t).map(|i| gram[i * t + i]).fold(F::zero(), F::max);
    if scale == F::zero() {
        return Ok(CombineResult {
            direction: ParamVector::zeros(g.dim()),
            task_weights: Some(vec![F::one() / F::of_usize(t); t]),
            diagnostics: Diagnostics {
                objective: Some(F::zero()),
                fallback: true,
                ..Diagnostics::default()
            },
        });
    }

    let (w, iterations, gap) = match t {
        1 => (vec![F::one()], 0, F::zero()),
        2 => {
            let gamma = min_norm_pair(gram[0], gram[1], gram[3]);
            (vec![gamma, F::one() - gamma], 1, F::zero())
        }
        _ => frank_wolfe(&gram, t, fw_iters, scale),
    };

    let direction = g.weighted_sum(&w);
    let sq = dot(&direction, &direction);
    Ok(CombineResult {
        direction: ParamVector(direction),
        task_weights: Some(w),
        diagnostics: Diagnostics {
            iterations,
            objective: Some(sq),
            residual: Some(gap),
            ..Diagnostics::default()
        },
    })
}

fn frank_wolfe<F: Scalar>(gram: &[F], t: usize, iters: usize, scale: F) -> (Vec<F>, usize, F) {
    let mut w = vec![F::one() / F::of_usize(t); t];
    let tol = F::of(1e-15) * scale;
    let mut gap = F::infinity();
    let mut iterations = 0;
    for _ in 0..iters {
        iterations += 1;
        let mw = mat_vec(gram, &w);
        let current = dot(&w, &mw);
        let (s, ms) = argmin(&mw);
        gap = current - ms;
        if gap <= tol {
            break;
        }
        // Away vertex: the active coordinate with the largest partial derivative.
        let (v, mv) = mw
            .iter()
            .enumerate()
            .filter(|(i, _)| w[*i] > F::zero())
            .fold(
                (s, F::neg_infinity()),
                |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
            );
        let away_gap = mv - current;

        let (dir, max_step) = if gap >= away_gap || w[v] >= F::one() {
            let mut d: Vec<F> = w.iter().map(|&x| -x).collect();
            d[s] += F::one();
            (d, F::one())
        } else {
            let mut d = w.clone();
            d[v] -= F::one();
            (d, w[v] / (F::one() - w[v]))
        };
        let curvature = quad_form(gram, &dir);
        let slope = dot(&mw, &dir);
        let step = if curvature > F::zero() {
            (-slope / curvature).max(F::zero()).min(max_step)
        } else {
            max_step
        };
        for (wi, di) in w.iter_mut().zip(&dir) {
            *wi += step * *di;
            if *wi < F::zero() {
                *wi = F::zero();
            }
        }
        let total: F = w.iter().copied().sum();
        for wi in &mut w {
            *wi /= total;
        }
    }
    (w, iterations, gap.max(F::zero()))
}

fn argmin<F: Scalar>(v: &[F]) -> (usize, F) {
    v.iter().enumerate().fold(
        (0, F::infinity()),
        |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_pair() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = combine_mgda(&g, 100).unwrap();
        assert_eq!(r.task_weights.unwrap(), vec![0.5, 0.5]);
        assert_eq!(r.direction.0, vec![0.5, 0.5]);
    }

    #[test]
    fn shorter_collinear_vector_wins() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let r = combine_mgda(&g, 100).unwrap();
        assert_eq!(r.task_weights.unwrap(), vec![0.0, 1.0]);
        assert_eq!(r.direction.0, vec![1.0, 0.0]);
    }

    #[test]
    fn opposite_gradients_give_zero() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.5, -2.0], vec![-1.5, 2.0]]).unwrap();
        let r = combine_mgda(&g, 100).unwrap();
        assert_eq!(r.direction.0, vec![0.0, 0.0]);
    }

    #[test]
    fn all_zero_gradients() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![0.0; 3]; 3]).unwrap();
        let r = combine_mgda(&g, 10).unwrap();
        assert_eq!(r.direction.0, vec![0.0; 3]);
        assert_eq!(r.task_weights.unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn three_orthonormal_rows() {
        let g = TaskGradientSet::<f64>::from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let r = combine_mgda(&g, 100).unwrap();
        for w in r.task_weights.unwrap() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_zero_iterations() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(combine_mgda(&g, 0).is_err());
    }
}
