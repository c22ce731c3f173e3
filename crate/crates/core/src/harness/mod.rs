//! Synthetic benchmarks, the masked training loop and the Taylor probe.

mod benchmark;
mod taylor;
mod train;

pub use benchmark::{generate_benchmark, Benchmark, SyntheticTaskSpec};
pub use taylor::{residual_ratios, taylor_probe, TaylorRow};
pub use train::{
    run_stl_baselines, train, train_with, CombinerStats, LoopSettings, RunOutput, TrainState,
};
