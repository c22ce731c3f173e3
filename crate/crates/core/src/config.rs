//! Run configuration: flat `key = value` text, one key per line, `#`
//! starts a comment.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::combiners::{CombinerParams, MethodKind};
use crate::error::{Error, Result};
use crate::harness::SyntheticTaskSpec;
use crate::masking::{k_for_fraction, MaskVariant};
use crate::model::{Activation, ParamLayout};

/// Where the sparse-training mask is applied relative to the combiner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskStage {
    /// Combine raw task gradients, then mask the direction.
    PostCombine,
    /// Mask every task gradient, then combine.
    PreCombine,
}

impl MaskStage {
    pub fn name(self) -> &'static str {
        match self {
            MaskStage::PostCombine => "post_combine",
            MaskStage::PreCombine => "pre_combine",
        }
    }
}

impl FromStr for MaskStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "post_combine" => Ok(MaskStage::PostCombine),
            "pre_combine" => Ok(MaskStage::PreCombine),
            _ => Err(format!(
                "unknown mask stage `{s}` (expected post_combine or pre_combine)"
            )),
        }
    }
}

/// Trainable share used by fraction-based masks when none is configured.
pub const DEFAULT_FRACTION: f64 = 0.3;

/// Every key a config file may contain, in the order they are written.
pub const KEYS: &[&str] = &[
    "method",
    "mask_variant",
    "k",
    "fraction",
    "mask_stage",
    "lr",
    "epochs",
    "batch",
    "seed",
    "tasks",
    "d_in",
    "trunk",
    "d_out",
    "samples",
    "test_samples",
    "noise",
    "rho",
    "teacher_seed",
    "teacher_activation",
    "c",
    "cagrad_iters",
    "leak",
    "mgda_iters",
    "nash_iters",
    "nash_eps",
    "nash_damping",
    "stl",
    "output_dir",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub method: MethodKind,
    pub mask_variant: MaskVariant,
    /// Per-neuron count for `psn` and `reverse`.
    pub k: Option<usize>,
    /// Trainable weight share for `random` and `global`; also picks `k`
    /// for the per-neuron variants when `k` is absent.
    pub fraction: Option<f64>,
    pub mask_stage: MaskStage,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub tasks: usize,
    pub d_in: usize,
    pub trunk: Vec<usize>,
    pub d_out: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub noise: f64,
    pub rho: f64,
    /// Defaults to `seed`.
    pub teacher_seed: Option<u64>,
    pub teacher_activation: Activation,
    pub combiner: CombinerParams,
    /// Train single-task baselines and report Δm%.
    pub stl: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = SyntheticTaskSpec::default();
        Self {
            method: MethodKind::Joint,
            mask_variant: MaskVariant::Dense,
            k: None,
            fraction: None,
            mask_stage: MaskStage::PostCombine,
            lr: 1e-2,
            epochs: 100,
            batch: 64,
            seed: 0,
            tasks: spec.tasks,
            d_in: spec.d_in,
            trunk: spec.trunk,
            d_out: spec.d_out,
            samples: spec.samples,
            test_samples: spec.test_samples,
            noise: spec.noise,
            rho: spec.rho,
            teacher_seed: None,
            teacher_activation: Activation::Tanh,
            combiner: CombinerParams::default(),
            stl: true,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected true or false, got `{value}`"),
        )),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Identity => "identity",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", n + 1),
                    format!("expected key=value, got `{line}`"),
                )
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.combiner;
        match key {
            "method" => self.method = value.parse().map_err(|e| Error::config(key, e))?,
            "mask_variant" => {
                self.mask_variant = value.parse().map_err(|e| Error::config(key, e))?
            }
            "k" => self.k = Some(parse_num(key, value)?),
            "fraction" => self.fraction = Some(parse_num(key, value)?),
            "mask_stage" => self.mask_stage = value.parse().map_err(|e| Error::config(key, e))?,
            "lr" => self.lr = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "tasks" => self.tasks = parse_num(key, value)?,
            "d_in" => self.d_in = parse_num(key, value)?,
            "trunk" => {
                self.trunk = value
                    .split(',')
                    .map(|w| parse_num(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "d_out" => self.d_out = parse_num(key, value)?,
            "samples" => self.samples = parse_num(key, value)?,
            "test_samples" => self.test_samples = parse_num(key, value)?,
            "noise" => self.noise = parse_num(key, value)?,
            "rho" => self.rho = parse_num(key, value)?,
            "teacher_seed" => self.teacher_seed = Some(parse_num(key, value)?),
            "teacher_activation" => {
                self.teacher_activation = match value {
                    "tanh" => Activation::Tanh,
                    "identity" => Activation::Identity,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected tanh or identity, got `{value}`"),
                        ))
                    }
                }
            }
            "c" => p.cagrad_c = parse_num(key, value)?,
            "cagrad_iters" => p.cagrad_iters = parse_num(key, value)?,
            "leak" => p.graddrop_leak = parse_num(key, value)?,
            "mgda_iters" => p.mgda_iters = parse_num(key, value)?,
            "nash_iters" => p.nash_iters = parse_num(key, value)?,
            "nash_eps" => p.nash_eps = parse_num(key, value)?,
            "nash_damping" => p.nash_damping = parse_num(key, value)?,
            "stl" => self.stl = parse_bool(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(Error::config(key, msg));
        if self.k == Some(0) {
            return fail("k", "must be at least 1");
        }
        if let Some(f) = self.fraction {
            if !(f > 0.0 && f <= 1.0) {
                return fail("fraction", "must lie in (0, 1]");
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be finite and non-negative");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.batch == 0 {
            return fail("batch", "must be at least 1");
        }
        if self.samples < self.batch {
            return fail("samples", "must be at least the batch size");
        }
        self.benchmark_spec().validate()?;
        let p = &self.combiner;
        if !(p.cagrad_c >= 0.0 && p.cagrad_c.is_finite()) {
            return fail("c", "must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&p.graddrop_leak) {
            return fail("leak", "must lie in [0, 1]");
        }
        if p.cagrad_iters == 0 {
            return fail("cagrad_iters", "must be at least 1");
        }
        if p.mgda_iters == 0 {
            return fail("mgda_iters", "must be at least 1");
        }
        if p.nash_iters == 0 {
            return fail("nash_iters", "must be at least 1");
        }
        if !(p.nash_eps > 0.0 && p.nash_eps.is_finite()) {
            return fail("nash_eps", "must be positive");
        }
        if !(p.nash_damping > 0.0 && p.nash_damping < 1.0) {
            return fail("nash_damping", "must lie in (0, 1)");
        }
        if self.output_dir.as_os_str().is_empty() {
            return fail("output_dir", "must not be empty");
        }
        Ok(())
    }

    pub fn benchmark_spec(&self) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            tasks: self.tasks,
            d_in: self.d_in,
            trunk: self.trunk.clone(),
            d_out: self.d_out,
            teacher_seed: self.teacher_seed.unwrap_or(self.seed),
            noise: self.noise,
            samples: self.samples,
            test_samples: self.test_samples,
            rho: self.rho,
            teacher_activation: self.teacher_activation,
        }
    }

    pub fn effective_fraction(&self) -> f64 {
        self.fraction.unwrap_or(DEFAULT_FRACTION)
    }

    /// Per-neuron `k`: explicit, or the one closest to the configured
    /// trainable fraction.
    pub fn effective_k(&self, layout: &ParamLayout) -> usize {
        self.k
            .unwrap_or_else(|| k_for_fraction(layout, self.effective_fraction()))
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    /// `(key, value)` pairs in [`KEYS`] order, skipping unset optionals.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.combiner;
        let mut out = Vec::with_capacity(KEYS.len());
        out.push(("method", self.method.to_string()));
        out.push(("mask_variant", self.mask_variant.to_string()));
        if let Some(k) = self.k {
            out.push(("k", k.to_string()));
        }
        if let Some(f) = self.fraction {
            out.push(("fraction", f.to_string()));
        }
        out.push(("mask_stage", self.mask_stage.name().to_string()));
        out.push(("lr", self.lr.to_string()));
        out.push(("epochs", self.epochs.to_string()));
        out.push(("batch", self.batch.to_string()));
        out.push(("seed", self.seed.to_string()));
        out.push(("tasks", self.tasks.to_string()));
        out.push(("d_in", self.d_in.to_string()));
        out.push((
            "trunk",
            self.trunk
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ));
        out.push(("d_out", self.d_out.to_string()));
        out.push(("samples", self.samples.to_string()));
        out.push(("test_samples", self.test_samples.to_string()));
        out.push(("noise", self.noise.to_string()));
        out.push(("rho", self.rho.to_string()));
        if let Some(t) = self.teacher_seed {
            out.push(("teacher_seed", t.to_string()));
        }
        out.push((
            "teacher_activation",
            activation_name(self.teacher_activation).into(),
        ));
        out.push(("c", p.cagrad_c.to_string()));
        out.push(("cagrad_iters", p.cagrad_iters.to_string()));
        out.push(("leak", p.graddrop_leak.to_string()));
        out.push(("mgda_iters", p.mgda_iters.to_string()));
        out.push(("nash_iters", p.nash_iters.to_string()));
        out.push(("nash_eps", p.nash_eps.to_string()));
        out.push(("nash_damping", p.nash_damping.to_string()));
        out.push(("stl", self.stl.to_string()));
        out.push(("output_dir", self.output_dir.display().to_string()));
        out
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho::from(self)
    }
}

/// Serializable copy of a [`RunConfig`] embedded in run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub method: String,
    pub mask_variant: String,
    pub k: Option<usize>,
    pub fraction: Option<f64>,
    pub mask_stage: String,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub tasks: usize,
    pub d_in: usize,
    pub trunk: Vec<usize>,
    pub d_out: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub noise: f64,
    pub rho: f64,
    pub teacher_seed: u64,
    pub teacher_activation: String,
    pub c: f64,
    pub cagrad_iters: usize,
    pub leak: f64,
    pub mgda_iters: usize,
    pub nash_iters: usize,
    pub nash_eps: f64,
    pub nash_damping: f64,
    pub stl: bool,
    pub output_dir: String,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(c: &RunConfig) -> Self {
        let p = &c.combiner;
        Self {
            method: c.method.to_string(),
            mask_variant: c.mask_variant.to_string(),
            k: c.k,
            fraction: c.fraction,
            mask_stage: c.mask_stage.name().into(),
            lr: c.lr,
            epochs: c.epochs,
            batch: c.batch,
            seed: c.seed,
            tasks: c.tasks,
            d_in: c.d_in,
            trunk: c.trunk.clone(),
            d_out: c.d_out,
            samples: c.samples,
            test_samples: c.test_samples,
            noise: c.noise,
            rho: c.rho,
            teacher_seed: c.teacher_seed.unwrap_or(c.seed),
            teacher_activation: activation_name(c.teacher_activation).into(),
            c: p.cagrad_c,
            cagrad_iters: p.cagrad_iters,
            leak: p.graddrop_leak,
            mgda_iters: p.mgda_iters,
            nash_iters: p.nash_iters,
            nash_eps: p.nash_eps,
            nash_damping: p.nash_damping,
            stl: c.stl,
            output_dir: c.output_dir.display().to_string(),
        }
    }
}
