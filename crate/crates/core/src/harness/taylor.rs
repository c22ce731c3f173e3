//! First-order check of cross-task interference: after a step along task
//! `i`'s gradient, task `j`'s loss changes by `−α g_i·g_j` up to `O(α²)`.

use crate::error::{Error, Result};
use crate::model::{MtlModel, ParamVector, TaskBatch};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorRow<F> {
    pub alpha: F,
    /// `L_j(θ − α g_i) − L_j(θ)`
    pub delta_loss: F,
    /// `−α g_i·g_j`
    pub predicted: F,
    pub residual: F,
}

/// Evaluates the actual and first-order change of task `j`'s loss for each
/// step size, moving only the shared parameters along `g_i`.
pub fn taylor_probe<F: Scalar>(
    model: &MtlModel<F>,
    batch: &TaskBatch<F>,
    i: usize,
    j: usize,
    alphas: &[F],
) -> Result<Vec<TaylorRow<F>>> {
    let tasks = model.tasks();
    if i >= tasks || j >= tasks {
        return Err(Error::Dimension {
            context: "taylor probe task index",
            expected: tasks,
            actual: i.max(j),
        });
    }
    let grads = model.task_gradients(batch)?;
    let gi = grads.shared.row(i);
    let gj = grads.shared.row(j);
    let inner = dot(gi, gj);
    let base_loss = grads.losses[j];
    let theta = model.shared_params();

    let mut probe = model.clone();
    alphas
        .iter()
        .map(|&alpha| {
            let moved: Vec<F> = theta
                .0
                .iter()
                .zip(gi)
                .map(|(&p, &g)| p - alpha * g)
                .collect();
            probe.set_shared_params(&ParamVector(moved))?;
            let delta_loss = probe.forward_losses(batch)?[j] - base_loss;
            let predicted = -alpha * inner;
            Ok(TaylorRow {
                alpha,
                delta_loss,
                predicted,
                residual: (delta_loss - predicted).abs(),
            })
        })
        .collect()
}

/// `r(α) / r(α/2)` for each `α`; close to 4 when the second-order term
/// dominates the first-order residual.
pub fn residual_ratios<F: Scalar>(
    model: &MtlModel<F>,
    batch: &TaskBatch<F>,
    i: usize,
    j: usize,
    alphas: &[F],
) -> Result<Vec<(F, F)>> {
    let half = F::of(0.5);
    let both: Vec<F> = alphas.iter().flat_map(|&a| [a, a * half]).collect();
    let rows = taylor_probe(model, batch, i, j, &both)?;
    Ok(rows
        .chunks(2)
        .map(|pair| (pair[0].alpha, pair[0].residual / pair[1].residual))
        .collect())
}
