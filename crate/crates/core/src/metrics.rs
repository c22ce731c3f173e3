//! Gradient-conflict detection, incidence of conflict (p%) and relative
//! task drop against single-task baselines (Δm%).

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Which gradients a conflict observation was computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    /// Task gradients as produced by backprop.
    Raw,
    /// Task gradients after the sparse-training mask.
    Masked,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Masked => "masked",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cosine between two gradients and whether they conflict (`cos < 0`).
/// A zero vector has cosine 0 with everything and never conflicts.
pub fn detect_conflict<F: Scalar>(a: &[F], b: &[F]) -> Result<(F, bool)> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "conflict gradient length",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == F::zero() || nb == F::zero() {
        return Ok((F::zero(), false));
    }
    let cos = (dot(a, b) / (na * nb)).max(-F::one()).min(F::one());
    Ok((cos, cos < F::zero()))
}

/// One pairwise observation at one training iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConflictRecord {
    /// 1-based epoch.
    pub epoch: usize,
    /// 1-based iteration within the epoch.
    pub iteration: usize,
    pub stage: Stage,
    pub task_i: usize,
    pub task_j: usize,
    pub cosine: f64,
    pub conflict: bool,
}

/// Records every unordered task pair `i < j` of one gradient set.
pub fn record_pairs<'a, F: Scalar>(
    rows: impl Fn(usize) -> &'a [F],
    tasks: usize,
    epoch: usize,
    iteration: usize,
    stage: Stage,
    out: &mut Vec<ConflictRecord>,
) -> Result<()> {
    for i in 0..tasks {
        for j in i + 1..tasks {
            let (cos, conflict) = detect_conflict(rows(i), rows(j))?;
            out.push(ConflictRecord {
                epoch,
                iteration,
                stage,
                task_i: i,
                task_j: j,
                cosine: cos.as_f64(),
                conflict,
            });
        }
    }
    Ok(())
}

/// Average incidence of gradient conflict, held as exact percentages.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceSummary {
    pub p_all: Ratio<u64>,
    pub p_last_half: Ratio<u64>,
    pub epochs: usize,
    pub iterations: usize,
    pub tasks: usize,
    /// Exact per-epoch incidence, indexed by epoch − 1.
    pub per_epoch: Vec<Ratio<u64>>,
}

impl IncidenceSummary {
    pub fn p_all_percent(&self) -> f64 {
        ratio_to_f64(self.p_all)
    }

    pub fn p_last_half_percent(&self) -> f64 {
        ratio_to_f64(self.p_last_half)
    }
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// First epoch (1-based) of the "last half": epochs strictly after ⌈E/2⌉.
/// For `E = 1` the window is the single epoch.
pub fn last_half_start(epochs: usize) -> usize {
    (epochs.div_ceil(2) + 1).min(epochs.max(1))
}

/// `p% = 100/(E·I) Σ_e Σ_i N_gc / C(T,2)` over records of one stage.
///
/// Every `(epoch, iteration)` in `1..=E × 1..=I` must carry exactly one
/// record per unordered task pair.
pub fn incidence(
    records: &[ConflictRecord],
    epochs: usize,
    iterations: usize,
    tasks: usize,
) -> Result<IncidenceSummary> {
    if tasks < 2 || epochs == 0 || iterations == 0 {
        return Err(Error::Integrity(format!(
            "incidence needs T >= 2, E >= 1, I >= 1 (got T={tasks}, E={epochs}, I={iterations})"
        )));
    }
    let pairs = (tasks * (tasks - 1) / 2) as u64;
    let mut seen: HashMap<(usize, usize), (u64, u64)> = HashMap::new();
    let mut pair_seen = std::collections::HashSet::new();
    for r in records {
        if r.epoch == 0 || r.epoch > epochs || r.iteration == 0 || r.iteration > iterations {
            return Err(Error::Integrity(format!(
                "record outside the run: epoch {} iteration {}",
                r.epoch, r.iteration
            )));
        }
        if r.task_i >= r.task_j || r.task_j >= tasks {
            return Err(Error::Integrity(format!(
                "invalid task pair ({}, {})",
                r.task_i, r.task_j
            )));
        }
        if !pair_seen.insert((r.epoch, r.iteration, r.task_i, r.task_j)) {
            return Err(Error::Integrity(format!(
                "duplicate record for pair ({}, {}) at epoch {} iteration {}",
                r.task_i, r.task_j, r.epoch, r.iteration
            )));
        }
        let e = seen.entry((r.epoch, r.iteration)).or_default();
        e.0 += 1;
        e.1 += u64::from(r.conflict);
    }

    let mut per_epoch = Vec::with_capacity(epochs);
    let mut totals = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut conflicts = 0u64;
        for it in 1..=iterations {
            match seen.get(&(epoch, it)) {
                Some(&(n, c)) if n == pairs => conflicts += c,
                found => {
                    return Err(Error::Integrity(format!(
                        "epoch {epoch} iteration {it}: expected {pairs} pair records, found {}",
                        found.map_or(0, |f| f.0)
                    )))
                }
            }
        }
        totals.push(conflicts);
        per_epoch.push(Ratio::new(100 * conflicts, pairs * iterations as u64));
    }

    let window = |from: usize| -> Ratio<u64> {
        let n = (epochs - from + 1) as u64;
        let c: u64 = totals[from - 1..].iter().sum();
        Ratio::new(100 * c, pairs * iterations as u64 * n)
    };
    Ok(IncidenceSummary {
        p_all: window(1),
        p_last_half: window(last_half_start(epochs)),
        epochs,
        iterations,
        tasks,
        per_epoch,
    })
}

/// One metric of one task: MTL value, single-task value, orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricPair<F> {
    pub baseline: F,
    pub stl: F,
    pub higher_is_better: bool,
}

/// Metrics per task, each task with at least one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaMInput<F> {
    pub tasks: Vec<Vec<MetricPair<F>>>,
}

/// `Δm% = 100/T Σ_t 1/K_t Σ_k (−1)^δ_k (M_b − M_s) / M_s`, with `δ_k = 1`
/// for higher-is-better metrics. Lower is better.
pub fn delta_m<F: Scalar>(input: &DeltaMInput<F>) -> Result<F> {
    if input.tasks.is_empty() {
        return Err(Error::Domain("delta_m needs at least one task".into()));
    }
    let mut total = F::zero();
    for (t, metrics) in input.tasks.iter().enumerate() {
        if metrics.is_empty() {
            return Err(Error::Domain(format!("task {t} has no metrics")));
        }
        let mut acc = F::zero();
        for m in metrics {
            if m.stl == F::zero() {
                return Err(Error::Domain(format!(
                    "task {t} has a zero single-task metric"
                )));
            }
            let rel = (m.baseline - m.stl) / m.stl;
            acc += if m.higher_is_better { -rel } else { rel };
        }
        total += acc / F::of_usize(metrics.len());
    }
    Ok(total / F::of_usize(input.tasks.len()) * F::of(100.0))
}
