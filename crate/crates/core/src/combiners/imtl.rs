use super::linalg::solve;
use super::{combine_average, CombineResult, Diagnostics, TaskGradientSet};
use crate::model::ParamVector;
use crate::scalar::{dot, Scalar};

/// Equal-projection combination: `d = Σ α_i g_i` with `Σ α_i = 1` and
/// `d·u_1 = d·u_i` for the unit gradients `u_i`.
///
/// With `D` stacking `g_1 − g_i` and `U` stacking `u_1 − u_i` (i ≥ 2), the
/// tail weights solve `(U Dᵀ) α_tail = U g_1`. Zero-norm rows, a singular
/// system, or a post-hoc residual above `1e-8 |d|` fall back to the average
/// with `diagnostics.fallback` set; `diagnostics.residual` is
/// `max_i |d·u_i − d·u_1|`.
pub fn combine_imtl_g<F: Scalar>(g: &TaskGradientSet<F>) -> CombineResult<F> {
    let t = g.tasks();
    let fallback = |residual: Option<F>| {
        let mut r = combine_average(g);
        r.diagnostics.fallback = true;
        r.diagnostics.residual = residual;
        r
    };
    if t == 1 {
        return combine_average(g);
    }
    let norms: Vec<F> = g.rows().map(|r| dot(r, r).sqrt()).collect();
    if norms.iter().any(|&n| n == F::zero()) {
        return fallback(None);
    }
    let units: Vec<Vec<F>> = g
        .rows()
        .zip(&norms)
        .map(|(r, &n)| r.iter().map(|&x| x / n).collect())
        .collect();

    let g1 = g.row(0);
    let m = t - 1;
    let d_rows: Vec<Vec<F>> = (1..t)
        .map(|i| g1.iter().zip(g.row(i)).map(|(&a, &b)| a - b).collect())
        .collect();
    let u_rows: Vec<Vec<F>> = (1..t)
        .map(|i| {
            units[0]
                .iter()
                .zip(&units[i])
                .map(|(&a, &b)| a - b)
                .collect()
        })
        .collect();
    let mut lhs = vec![F::zero(); m * m];
    for a in 0..m {
        for b in 0..m {
            lhs[a * m + b] = dot(&u_rows[a], &d_rows[b]);
        }
    }
    let rhs: Vec<F> = u_rows.iter().map(|u| dot(u, g1)).collect();
    let Some(tail) = solve(&lhs, &rhs, F::of(1e-12)) else {
        return fallback(None);
    };

    let mut alpha = Vec::with_capacity(t);
    alpha.push(F::one() - tail.iter().copied().sum::<F>());
    alpha.extend(tail);
    let d = g.weighted_sum(&alpha);
    let d_norm = dot(&d, &d).sqrt();
    let p1 = dot(&d, &units[0]);
    let residual = units
        .iter()
        .map(|u| (dot(&d, u) - p1).abs())
        .fold(F::zero(), F::max);
    if !d.iter().all(|x| x.is_finite()) || residual > F::of(1e-8) * d_norm {
        return fallback(Some(residual));
    }
    CombineResult {
        direction: ParamVector(d),
        task_weights: Some(alpha),
        diagnostics: Diagnostics {
            residual: Some(residual),
            ..Diagnostics::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_pair_is_symmetric() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = combine_imtl_g(&g);
        assert!(!r.diagnostics.fallback);
        assert_eq!(r.direction.0, vec![0.5, 0.5]);
    }

    #[test]
    fn equal_norms_and_angles_give_uniform_weights() {
        let g = TaskGradientSet::<f64>::from_rows(vec![
            vec![2.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ])
        .unwrap();
        let r = combine_imtl_g(&g);
        for a in r.task_weights.unwrap() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_direction_falls_back() {
        let g =
            TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![0.0, 1.0]])
                .unwrap();
        let r = combine_imtl_g(&g);
        assert!(r.diagnostics.fallback);
        assert_eq!(r.direction.0, g.mean());
    }

    #[test]
    fn zero_row_falls_back() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(combine_imtl_g(&g).diagnostics.fallback);
    }

    #[test]
    fn unequal_norms_balance_projections() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![3.0, 0.5], vec![-0.2, 0.4]]).unwrap();
        let r = combine_imtl_g(&g);
        assert!(!r.diagnostics.fallback);
        let d = &r.direction.0;
        let c1 = dot(d, g.row(0)) / 3.0413812651491097;
        let c2 = dot(d, g.row(1)) / 0.4472135954999579;
        assert!((c1 - c2).abs() < 1e-10);
    }
}
