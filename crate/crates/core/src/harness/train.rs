//! Masked multi-task training loop and the single-task reference runs.

use std::time::Instant;

use num_traits::Float;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::benchmark::{generate_benchmark, Benchmark};
use crate::combiners::{combine, CombinerParams, MethodKind, TaskGradientSet};
use crate::config::{MaskStage, RunConfig};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, build_mask, Mask};
use crate::metrics::{
    delta_m, incidence, ratio_to_f64, record_pairs, ConflictRecord, DeltaMInput, MetricPair, Stage,
};
use crate::model::{MtlModel, ParamVector};
use crate::report::{EpochRow, RunReport};
use crate::scalar::Scalar;

// Independent ChaCha streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_COMBINE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Optimization settings shared by multi-task and single-task runs.
#[derive(Clone, Debug)]
pub struct LoopSettings {
    pub method: MethodKind,
    pub params: CombinerParams,
    pub mask_stage: MaskStage,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl LoopSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            method: cfg.method,
            params: cfg.combiner.clone(),
            mask_stage: cfg.mask_stage,
            lr: cfg.lr,
            epochs: cfg.epochs,
            batch: cfg.batch,
            seed: cfg.seed,
        }
    }
}

/// Running combiner statistics over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CombinerStats {
    pub calls: usize,
    pub fallbacks: usize,
    pub iterations: usize,
    pub max_residual: Option<f64>,
    pub projections: usize,
}

/// Mutable state of one training run.
#[derive(Clone, Debug)]
pub struct TrainState<F> {
    pub model: MtlModel<F>,
    pub mask: Mask,
    pub step: usize,
    /// Mean training loss per epoch and task.
    pub loss_history: Vec<Vec<F>>,
    /// Held-out loss at the end of each epoch, per task.
    pub test_history: Vec<Vec<F>>,
    pub records: Vec<ConflictRecord>,
    pub stats: CombinerStats,
    initial_shared: ParamVector<F>,
    frozen: Vec<usize>,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(model: MtlModel<F>, mask: Mask) -> Result<Self> {
        if mask.len() != model.layout().total_shared {
            return Err(Error::Dimension {
                context: "mask length",
                expected: model.layout().total_shared,
                actual: mask.len(),
            });
        }
        let frozen = mask
            .bits()
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            initial_shared: model.shared_params(),
            model,
            mask,
            step: 0,
            loss_history: Vec::new(),
            test_history: Vec::new(),
            records: Vec::new(),
            stats: CombinerStats::default(),
            frozen,
        })
    }

    pub fn initial_shared(&self) -> &ParamVector<F> {
        &self.initial_shared
    }

    /// Checks that every unselected shared parameter still has the exact bit
    /// pattern it had at initialization.
    pub fn check_frozen(&self) -> Result<()> {
        let current = self.model.shared_params();
        for &o in &self.frozen {
            let (a, b) = (current.0[o], self.initial_shared.0[o]);
            if Float::integer_decode(a) != Float::integer_decode(b) {
                return Err(Error::Integrity(format!(
                    "frozen shared parameter {o} drifted from {b} to {a} at step {}",
                    self.step
                )));
            }
        }
        Ok(())
    }

    /// Runs `settings.epochs` epochs of masked gradient descent.
    ///
    /// Each step records pairwise conflicts of the raw and masked task
    /// gradients, combines per `settings.method`, masks the direction, and
    /// updates the trunk along it while every head follows its own gradient.
    pub fn fit(&mut self, bench: &Benchmark<F>, settings: &LoopSettings) -> Result<()> {
        let mut shuffle = stream(settings.seed, STREAM_SHUFFLE);
        let mut combine_rng = stream(settings.seed, STREAM_COMBINE);
        let lr = F::of(settings.lr);
        let tasks = self.model.tasks();

        // One seeded partition, reused by every epoch.
        let batches = bench.epoch_batches(settings.batch, &mut shuffle);
        for epoch in 1..=settings.epochs {
            let mut loss_sum = vec![F::zero(); tasks];
            for (it, batch) in batches.iter().enumerate() {
                let grads = self.model.task_gradients(batch)?;
                if let Some(t) = grads.losses.iter().position(|l| !l.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        step: self.step,
                        task: t,
                    });
                }
                for (s, &l) in loss_sum.iter_mut().zip(&grads.losses) {
                    *s += l;
                }
                let masked = grads.shared.masked(&self.mask)?;
                record_pairs(
                    |i| grads.shared.row(i),
                    tasks,
                    epoch,
                    it + 1,
                    Stage::Raw,
                    &mut self.records,
                )?;
                record_pairs(
                    |i| masked.row(i),
                    tasks,
                    epoch,
                    it + 1,
                    Stage::Masked,
                    &mut self.records,
                )?;

                let input: &TaskGradientSet<F> = match settings.mask_stage {
                    MaskStage::PostCombine => &grads.shared,
                    MaskStage::PreCombine => &masked,
                };
                let result = combine(
                    settings.method,
                    &settings.params,
                    input,
                    combine_rng.next_u64(),
                )?;
                self.note(&result.diagnostics);
                let direction = apply_mask(&self.mask, &result.direction)?;
                if !direction.is_finite() {
                    return Err(Error::Numeric {
                        stage: "combine",
                        layer: settings.method.to_string(),
                    });
                }
                self.model.apply_update(&direction, &grads.heads, lr)?;
                self.step += 1;
                self.check_frozen()?;
            }
            let n = F::of_usize(batches.len().max(1));
            self.loss_history
                .push(loss_sum.into_iter().map(|s| s / n).collect());
            self.test_history
                .push(self.model.forward_losses(&bench.test)?);
        }
        Ok(())
    }

    fn note(&mut self, d: &crate::combiners::Diagnostics<F>) {
        let s = &mut self.stats;
        s.calls += 1;
        s.fallbacks += usize::from(d.fallback);
        s.iterations += d.iterations;
        s.projections += d.projections;
        if let Some(r) = d.residual {
            let r = r.as_f64().abs();
            s.max_residual = Some(s.max_residual.map_or(r, |m: f64| m.max(r)));
        }
    }
}

/// Everything a run produces: the summary plus the raw telemetry.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub records: Vec<ConflictRecord>,
    pub epochs: Vec<EpochRow>,
    pub mask: Mask,
    /// Shared parameters at initialization and at the end.
    pub initial_shared: ParamVector<f64>,
    pub final_shared: ParamVector<f64>,
}

fn to_f64<F: Scalar>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Per-task mean of the last `⌈E/10⌉` epochs.
fn tail_mean<F: Scalar>(history: &[Vec<F>]) -> Vec<f64> {
    let n = history.len().div_ceil(10).max(1);
    let tail = &history[history.len() - n..];
    let tasks = tail[0].len();
    (0..tasks)
        .map(|t| tail.iter().map(|row| row[t].as_f64()).sum::<f64>() / n as f64)
        .collect()
}

/// Test loss of each task trained alone on the same trunk architecture,
/// initialization seed and budget, with dense joint descent.
pub fn run_stl_baselines<F: Scalar>(cfg: &RunConfig, bench: &Benchmark<F>) -> Result<Vec<F>> {
    let spec = cfg.benchmark_spec();
    let mut arch = spec.student_architecture();
    arch.heads = vec![spec.d_out];
    let settings = LoopSettings {
        method: MethodKind::Joint,
        mask_stage: MaskStage::PostCombine,
        ..LoopSettings::from_config(cfg)
    };
    (0..spec.tasks)
        .map(|t| {
            let model = MtlModel::init(&arch, &mut stream(cfg.seed, STREAM_INIT))?;
            let single = Benchmark {
                train: bench.train.with_tasks(&[t]),
                test: bench.test.with_tasks(&[t]),
                teacher: bench.teacher.with_heads(&[t])?,
            };
            let mask = Mask::dense(model.layout().total_shared);
            let mut state = TrainState::new(model, mask)?;
            state.fit(&single, &settings)?;
            Ok(state.test_history.last().expect("at least one epoch")[0])
        })
        .collect()
}

/// Runs one configured experiment in `f64`.
pub fn train(cfg: &RunConfig) -> Result<RunOutput> {
    train_with::<f64>(cfg)
}

/// Runs one configured experiment in the scalar type `F`.
pub fn train_with<F: Scalar>(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = cfg.benchmark_spec();
    let bench = generate_benchmark::<F>(&spec)?;
    let arch = spec.student_architecture();
    let model = MtlModel::<F>::init(&arch, &mut stream(cfg.seed, STREAM_INIT))?;

    let k = cfg.effective_k(model.layout());
    let mask_seed = stream(cfg.seed, STREAM_MASK).next_u64();
    let mask = build_mask(
        &model,
        cfg.mask_variant,
        k,
        cfg.effective_fraction(),
        mask_seed,
    )?;
    let trainable_fraction = mask.weight_fraction(model.layout());

    let settings = LoopSettings::from_config(cfg);
    let mut state = TrainState::new(model, mask)?;
    state.fit(&bench, &settings)?;

    let iterations = spec.samples / cfg.batch;
    let tasks = spec.tasks;
    let (raw, masked): (Vec<ConflictRecord>, Vec<ConflictRecord>) =
        state.records.iter().partition(|r| r.stage == Stage::Raw);
    let raw_summary = incidence(&raw, cfg.epochs, iterations, tasks)?;
    let masked_summary = incidence(&masked, cfg.epochs, iterations, tasks)?;
    let sparse = !state.mask.is_dense();
    let headline = if sparse {
        &masked_summary
    } else {
        &raw_summary
    };

    let final_test: Vec<F> = state.test_history.last().expect("epochs >= 1").clone();
    let (stl_test_losses, delta) = if cfg.stl {
        let stl = run_stl_baselines(cfg, &bench)?;
        let input = DeltaMInput {
            tasks: final_test
                .iter()
                .zip(&stl)
                .map(|(&b, &s)| {
                    vec![MetricPair {
                        baseline: b,
                        stl: s,
                        higher_is_better: false,
                    }]
                })
                .collect(),
        };
        (Some(to_f64(&stl)), Some(delta_m(&input)?.as_f64()))
    } else {
        (None, None)
    };

    let mut epochs = Vec::with_capacity(cfg.epochs * tasks);
    for (e, losses) in state.loss_history.iter().enumerate() {
        for (t, &loss) in losses.iter().enumerate() {
            epochs.push(EpochRow {
                epoch: e + 1,
                task: t,
                loss: loss.as_f64(),
                p_epoch_raw: ratio_to_f64(raw_summary.per_epoch[e]),
                p_epoch_masked: ratio_to_f64(masked_summary.per_epoch[e]),
            });
        }
    }

    let stats = &state.stats;
    let report = RunReport {
        config: cfg.echo(),
        effective_k: cfg.mask_variant.uses_k().then_some(k),
        mask_selected: state.mask.selected_count(),
        mask_total: state.mask.len(),
        trainable_fraction,
        headline_stage: if sparse { Stage::Masked } else { Stage::Raw }.to_string(),
        p_all: headline.p_all_percent(),
        p_last_half: headline.p_last_half_percent(),
        p_all_raw: raw_summary.p_all_percent(),
        p_last_half_raw: raw_summary.p_last_half_percent(),
        p_all_masked: masked_summary.p_all_percent(),
        p_last_half_masked: masked_summary.p_last_half_percent(),
        final_train_losses: to_f64(state.loss_history.last().expect("epochs >= 1")),
        last10_train_losses: tail_mean(&state.loss_history),
        final_test_losses: to_f64(&final_test),
        last10_test_losses: tail_mean(&state.test_history),
        stl_test_losses,
        delta_m: delta,
        steps: state.step,
        iterations_per_epoch: iterations,
        combiner_fallbacks: stats.fallbacks,
        combiner_mean_iterations: stats.iterations as f64 / stats.calls.max(1) as f64,
        combiner_max_residual: stats.max_residual,
        pcgrad_projections: stats.projections,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };

    Ok(RunOutput {
        report,
        mask: state.mask.clone(),
        initial_shared: ParamVector(to_f64(&state.initial_shared().0)),
        final_shared: ParamVector(to_f64(&state.model.shared_params().0)),
        records: state.records,
        epochs,
    })
}
