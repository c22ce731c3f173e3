//! Small dense helpers for the `T × T` subproblems.

use crate::scalar::Scalar;

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex<F: Scalar>(v: &[F]) -> Vec<F> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumulative = F::zero();
    let mut theta = F::zero();
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - F::one()) / F::of_usize(k + 1);
        if u - t > F::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(F::zero())).collect()
}

/// Solves `a x = b` for a row-major `n × n` matrix by Gaussian elimination
/// with partial pivoting. Returns `None` when a pivot falls below
/// `rel_tol` times the largest entry of `a`.
pub fn solve<F: Scalar>(a: &[F], b: &[F], rel_tol: F) -> Option<Vec<F>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(F::zero(), |m, &x| m.max(x.abs()));
    if scale == F::zero() {
        return None;
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[i * n + col]
                    .abs()
                    .partial_cmp(&m[j * n + col].abs())
                    .expect("finite")
            })
            .expect("non-empty range");
        if m[pivot * n + col].abs() <= rel_tol * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            if f == F::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[r * n + k] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

/// `(M w)_i` for a row-major square matrix.
pub fn mat_vec<F: Scalar>(m: &[F], w: &[F]) -> Vec<F> {
    let n = w.len();
    (0..n)
        .map(|i| crate::scalar::dot(&m[i * n..(i + 1) * n], w))
        .collect()
}

/// `wᵀ M w`
pub fn quad_form<F: Scalar>(m: &[F], w: &[F]) -> F {
    crate::scalar::dot(w, &mat_vec(m, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_fixes_points_on_the_simplex() {
        let p = project_to_simplex::<f64>(&[0.2, 0.3, 0.5]);
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(project_to_simplex::<f64>(&[5.0, -1.0]), vec![1.0, 0.0]);
        let p = project_to_simplex::<f64>(&[1.0, 1.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn solves_and_detects_singularity() {
        let x = solve::<f64>(&[2.0, 1.0, 1.0, 3.0], &[3.0, 5.0], 1e-12).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        assert!(solve::<f64>(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0], 1e-12).is_none());
    }
}
