use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CombineResult, Diagnostics, TaskGradientSet};
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scalar::Scalar;

/// Sign-purity gradient dropout.
///
/// For every coordinate, purity `P = (1 + Σ g / Σ |g|) / 2`; one uniform draw
/// `U` per coordinate keeps the positive contributions when `U < P` and the
/// negative ones otherwise. Dropped contributions are scaled by `leak`
/// instead of removed. The kept sum is divided by the task count.
pub fn combine_graddrop<F: Scalar>(
    g: &TaskGradientSet<F>,
    seed: u64,
    leak: F,
) -> Result<CombineResult<F>> {
    if !(leak >= F::zero() && leak <= F::one()) {
        return Err(Error::config("leak", "must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tf = F::of_usize(g.tasks());
    let half = F::of(0.5);
    let mut direction = vec![F::zero(); g.dim()];
    let mut kept_positive = 0;

    for (d, out) in direction.iter_mut().enumerate() {
        // One draw per coordinate keeps the random stream aligned with P.
        let u = F::of(rng.random::<f64>());
        let (mut signed, mut total) = (F::zero(), F::zero());
        for row in g.rows() {
            signed += row[d];
            total += row[d].abs();
        }
        if total == F::zero() {
            continue;
        }
        let purity = half * (F::one() + signed / total);
        let keep_positive = u < purity;
        if keep_positive {
            kept_positive += 1;
        }
        let mut acc = F::zero();
        for row in g.rows() {
            let x = row[d];
            let kept = (x > F::zero() && keep_positive) || (x < F::zero() && !keep_positive);
            acc += if kept { x } else { leak * x };
        }
        *out = acc / tf;
    }

    Ok(CombineResult {
        direction: ParamVector(direction),
        task_weights: None,
        diagnostics: Diagnostics {
            kept_positive,
            ..Diagnostics::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_sign_coordinates_pass() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, -2.0, 0.0], vec![3.0, -0.5, 0.0]])
            .unwrap();
        for seed in 0..20 {
            let r = combine_graddrop(&g, seed, 0.0).unwrap();
            assert_eq!(r.direction.0, g.mean());
        }
    }

    #[test]
    fn full_leak_is_the_average() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, -2.0, 0.7], vec![-3.0, 0.5, 0.1]])
            .unwrap();
        let r = combine_graddrop(&g, 5, 1.0).unwrap();
        assert_eq!(r.direction.0, g.mean());
    }

    #[test]
    fn conflicting_coordinate_keeps_one_side() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0], vec![-1.0]]).unwrap();
        for seed in 0..10 {
            let d = combine_graddrop(&g, seed, 0.0).unwrap().direction.0[0];
            assert!(d == 0.5 || d == -0.5);
        }
    }

    #[test]
    fn rejects_bad_leak() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0], vec![-1.0]]).unwrap();
        assert!(combine_graddrop(&g, 0, 1.5).is_err());
    }
}
