use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CombineResult, Diagnostics, TaskGradientSet};
use crate::model::ParamVector;
use crate::scalar::{axpy, dot, Scalar};

/// Projects each task gradient onto the normal plane of every original
/// gradient it conflicts with, visiting the other tasks in a seeded random
/// order, then averages the projected gradients.
///
/// `diagnostics.residual` holds the smallest normalized dot product
/// `g_i'·g_j / (|g_i'| |g_j|)` observed right after a projection.
pub fn combine_pcgrad<F: Scalar>(g: &TaskGradientSet<F>, seed: u64) -> CombineResult<F> {
    let (rows, diagnostics) = pcgrad_project(g, seed);
    let mut sum = vec![F::zero(); g.dim()];
    for r in &rows {
        for (s, &p) in sum.iter_mut().zip(r) {
            *s += p;
        }
    }
    let tf = F::of_usize(g.tasks());
    for s in &mut sum {
        *s /= tf;
    }
    CombineResult {
        direction: ParamVector(sum),
        task_weights: None,
        diagnostics,
    }
}

/// The projected per-task gradients behind [`combine_pcgrad`].
pub fn pcgrad_project<F: Scalar>(
    g: &TaskGradientSet<F>,
    seed: u64,
) -> (Vec<Vec<F>>, Diagnostics<F>) {
    let t = g.tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sq_norms: Vec<F> = g.rows().map(|r| dot(r, r)).collect();
    let mut diagnostics = Diagnostics::default();
    let mut rows = Vec::with_capacity(t);

    for i in 0..t {
        let mut order: Vec<usize> = (0..t).filter(|&j| j != i).collect();
        order.shuffle(&mut rng);
        let mut projected = g.row(i).to_vec();
        for &j in &order {
            if sq_norms[j] == F::zero() {
                continue;
            }
            let gj = g.row(j);
            let d = dot(&projected, gj);
            if d < F::zero() {
                axpy(-d / sq_norms[j], gj, &mut projected);
                diagnostics.projections += 1;
                let denom = dot(&projected, &projected).sqrt() * sq_norms[j].sqrt();
                if denom > F::zero() {
                    let after = dot(&projected, gj) / denom;
                    diagnostics.residual =
                        Some(diagnostics.residual.map_or(after, |r: F| r.min(after)));
                }
            }
        }
        rows.push(projected);
        diagnostics.order.push(order);
    }
    (rows, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_conflicting_pair_is_untouched() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = combine_pcgrad(&g, 0);
        assert_eq!(r.direction.0, vec![0.5, 0.5]);
        assert_eq!(r.diagnostics.projections, 0);
        assert!(r.diagnostics.residual.is_none());
    }

    #[test]
    fn hand_projection() {
        // g1' = g1 - (-1/2) g2 = (0.5, 0.5); g2' = g2 - (-1/1) g1 = (0, 1)
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 1.0]]).unwrap();
        let (rows, diag) = pcgrad_project(&g, 3);
        assert_eq!(rows[0], vec![0.5, 0.5]);
        assert_eq!(rows[1], vec![0.0, 1.0]);
        assert_eq!(diag.projections, 2);
        assert_eq!(combine_pcgrad(&g, 3).direction.0, vec![0.25, 0.75]);
    }

    #[test]
    fn zero_gradient_is_skipped() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let r = combine_pcgrad(&g, 1);
        assert_eq!(r.direction.0, vec![0.5, 1.0]);
    }

    #[test]
    fn conflicting_pair_ends_orthogonal_to_opponent() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![2.0, 1.0, -1.0], vec![-1.0, 0.5, 3.0]])
            .unwrap();
        let (rows, _) = pcgrad_project(&g, 9);
        assert!(dot(&rows[0], g.row(1)).abs() < 1e-12);
        assert!(dot(&rows[1], g.row(0)).abs() < 1e-12);
    }

    #[test]
    fn order_is_seeded() {
        let g = TaskGradientSet::<f64>::from_rows(vec![
            vec![1.0, -2.0, 0.5],
            vec![-1.0, 1.0, 0.0],
            vec![0.3, 0.2, -1.0],
            vec![-0.5, -0.5, 1.0],
        ])
        .unwrap();
        assert_eq!(combine_pcgrad(&g, 11), combine_pcgrad(&g, 11));
        assert_eq!(combine_pcgrad(&g, 11).diagnostics.order.len(), 4);
    }
}
