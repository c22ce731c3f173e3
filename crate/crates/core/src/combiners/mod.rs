//! Gradient combiners: map the per-task shared gradients of one step to a
//! single update direction.

mod cagrad;
mod graddrop;
mod imtl;
mod linalg;
mod mgda;
mod nash;
mod pcgrad;

pub use cagrad::{cagrad_objective, combine_cagrad};
pub use graddrop::combine_graddrop;
pub use imtl::combine_imtl_g;
pub use linalg::project_to_simplex;
pub use mgda::{combine_mgda, min_norm_pair};
pub use nash::combine_nashmtl;
pub use pcgrad::{combine_pcgrad, pcgrad_project};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::masking::Mask;
use crate::model::ParamVector;
use crate::scalar::{axpy, dot, Scalar};

/// `T × P` matrix of per-task gradients w.r.t. the shared parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradientSet<F> {
    tasks: usize,
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> TaskGradientSet<F> {
    pub fn from_flat(tasks: usize, dim: usize, data: Vec<F>) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::config(
                "tasks",
                "gradient set needs at least one task",
            ));
        }
        if data.len() != tasks * dim {
            return Err(Error::Dimension {
                context: "gradient set",
                expected: tasks * dim,
                actual: data.len(),
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric {
                stage: "gradient set",
                layer: "shared".into(),
            });
        }
        Ok(Self { tasks, dim, data })
    }

    pub fn from_rows(rows: Vec<Vec<F>>) -> Result<Self> {
        let tasks = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(tasks * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension {
                    context: "gradient row",
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend(r);
        }
        Self::from_flat(tasks, dim, data)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks(self.dim.max(1)).take(self.tasks)
    }

    pub fn row_vector(&self, i: usize) -> ParamVector<F> {
        ParamVector(self.row(i).to_vec())
    }

    /// Symmetric Gram matrix `G Gᵀ`, row-major `T × T`.
    pub fn gram(&self) -> Vec<F> {
        let t = self.tasks;
        let mut out = vec![F::zero(); t * t];
        for i in 0..t {
            for j in i..t {
                let v = dot(self.row(i), self.row(j));
                out[i * t + j] = v;
                out[j * t + i] = v;
            }
        }
        out
    }

    /// `Σ_i w_i g_i`
    pub fn weighted_sum(&self, weights: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        for (w, row) in weights.iter().zip(self.rows()) {
            axpy(*w, row, &mut out);
        }
        out
    }

    pub fn mean(&self) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        for row in self.rows() {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let t = F::of_usize(self.tasks);
        for o in &mut out {
            *o /= t;
        }
        out
    }

    /// Copy with every row passed through the mask.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        if mask.len() != self.dim {
            return Err(Error::Dimension {
                context: "mask length",
                expected: mask.len(),
                actual: self.dim,
            });
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.dim.max(1)) {
            mask.zero_unselected(row);
        }
        Ok(Self {
            tasks: self.tasks,
            dim: self.dim,
            data,
        })
    }
}

/// Method-specific solver telemetry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics<F> {
    pub iterations: usize,
    /// Achieved solver objective (CAGrad, MGDA squared norm).
    pub objective: Option<F>,
    /// Optimality or equal-projection residual.
    pub residual: Option<F>,
    /// Set when the method fell back to a simpler direction.
    pub fallback: bool,
    /// PCGrad: projections performed.
    pub projections: usize,
    /// PCGrad: visiting order of the other tasks, per task.
    pub order: Vec<Vec<usize>>,
    /// GradDrop: coordinates where the positive side was kept.
    pub kept_positive: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombineResult<F> {
    pub direction: ParamVector<F>,
    pub task_weights: Option<Vec<F>>,
    pub diagnostics: Diagnostics<F>,
}

impl<F: Scalar> CombineResult<F> {
    fn plain(direction: Vec<F>, task_weights: Option<Vec<F>>) -> Self {
        Self {
            direction: ParamVector(direction),
            task_weights,
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Unweighted mean of the task gradients (joint training).
pub fn combine_average<F: Scalar>(g: &TaskGradientSet<F>) -> CombineResult<F> {
    let w = F::one() / F::of_usize(g.tasks());
    CombineResult::plain(g.mean(), Some(vec![w; g.tasks()]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Joint,
    PcGrad,
    CaGrad,
    GradDrop,
    Mgda,
    ImtlG,
    NashMtl,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Joint,
        MethodKind::PcGrad,
        MethodKind::CaGrad,
        MethodKind::GradDrop,
        MethodKind::Mgda,
        MethodKind::ImtlG,
        MethodKind::NashMtl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Joint => "joint",
            MethodKind::PcGrad => "pcgrad",
            MethodKind::CaGrad => "cagrad",
            MethodKind::GradDrop => "graddrop",
            MethodKind::Mgda => "mgda",
            MethodKind::ImtlG => "imtlg",
            MethodKind::NashMtl => "nashmtl",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown method `{s}` (expected one of: {})",
                    MethodKind::ALL.map(MethodKind::name).join(", ")
                )
            })
    }
}

/// Solver hyperparameters for every combiner.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinerParams {
    pub cagrad_c: f64,
    pub cagrad_iters: usize,
    pub graddrop_leak: f64,
    pub mgda_iters: usize,
    pub nash_iters: usize,
    pub nash_eps: f64,
    pub nash_damping: f64,
}

impl Default for CombinerParams {
    fn default() -> Self {
        Self {
            cagrad_c: 0.4,
            cagrad_iters: 50,
            graddrop_leak: 0.0,
            mgda_iters: 100,
            nash_iters: 20,
            nash_eps: 1e-6,
            nash_damping: 0.5,
        }
    }
}

/// Dispatches to the combiner selected by `method`.
pub fn combine<F: Scalar>(
    method: MethodKind,
    params: &CombinerParams,
    g: &TaskGradientSet<F>,
    seed: u64,
) -> Result<CombineResult<F>> {
    Ok(match method {
        MethodKind::Joint => combine_average(g),
        MethodKind::PcGrad => combine_pcgrad(g, seed),
        MethodKind::CaGrad => combine_cagrad(g, F::of(params.cagrad_c), params.cagrad_iters)?,
        MethodKind::GradDrop => combine_graddrop(g, seed, F::of(params.graddrop_leak))?,
        MethodKind::Mgda => combine_mgda(g, params.mgda_iters)?,
        MethodKind::ImtlG => combine_imtl_g(g),
        MethodKind::NashMtl => combine_nashmtl(
            g,
            params.nash_iters,
            F::of(params.nash_eps),
            F::of(params.nash_damping),
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mean(rows: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; rows[0].len()];
        for d in 0..out.len() {
            let mut s = 0.0;
            for r in rows {
                s += r[d];
            }
            out[d] = s / rows.len() as f64;
        }
        out
    }

    #[test]
    fn average_of_unit_vectors() {
        let g = TaskGradientSet::<f64>::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = combine_average(&g);
        assert_eq!(r.direction.0, vec![0.5, 0.5]);
        assert_eq!(r.task_weights, Some(vec![0.5, 0.5]));
    }

    #[test]
    fn average_of_equal_rows_is_the_row() {
        let v = vec![0.25, -3.0, 7.5];
        let g = TaskGradientSet::<f64>::from_rows(vec![v.clone(), v.clone()]).unwrap();
        assert_eq!(combine_average(&g).direction.0, v);
    }

    #[test]
    fn average_matches_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..17).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let expected = naive_mean(&rows);
        let got = combine_average(&TaskGradientSet::<f64>::from_rows(rows).unwrap());
        for (a, b) in got.direction.0.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn rejects_ragged_and_non_finite() {
        assert!(TaskGradientSet::<f64>::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(TaskGradientSet::<f64>::from_rows(vec![vec![f64::NAN], vec![1.0]]).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodKind::ALL {
            assert_eq!(m.name().parse::<MethodKind>().unwrap(), m);
        }
        assert!("pcgard".parse::<MethodKind>().is_err());
    }
}
