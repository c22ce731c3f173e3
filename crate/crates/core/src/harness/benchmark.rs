//! Synthetic multi-task regression data from a frozen random teacher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, DenseLayer, MtlModel, TaskBatch};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskSpec {
    pub tasks: usize,
    pub d_in: usize,
    pub trunk: Vec<usize>,
    pub d_out: usize,
    pub teacher_seed: u64,
    /// Standard deviation of the Gaussian target noise.
    pub noise: f64,
    pub samples: usize,
    pub test_samples: usize,
    /// Head similarity: 0 independent, 1 identical, −1 sign-flipped.
    pub rho: f64,
    pub teacher_activation: Activation,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            tasks: 3,
            d_in: 16,
            trunk: vec![64, 64],
            d_out: 4,
            teacher_seed: 0,
            noise: 0.05,
            samples: 2048,
            test_samples: 512,
            rho: 0.3,
            teacher_activation: Activation::Tanh,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tasks < 2 {
            return Err(Error::config("tasks", "need at least 2 tasks"));
        }
        if self.d_in == 0 || self.d_out == 0 || self.trunk.contains(&0) {
            return Err(Error::config("trunk", "layer widths must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and non-negative"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::config("rho", "must lie in [-1, 1]"));
        }
        if self.samples == 0 || self.test_samples == 0 {
            return Err(Error::config("samples", "must be positive"));
        }
        Ok(())
    }

    /// Student architecture matching the teacher's layer sizes.
    pub fn student_architecture(&self) -> Architecture {
        Architecture {
            d_in: self.d_in,
            trunk: self.trunk.clone(),
            heads: vec![self.d_out; self.tasks],
            trunk_activation: Activation::Tanh,
            shared_head_init: true,
        }
    }
}

/// Train and test splits plus the teacher that labelled them.
#[derive(Clone, Debug)]
pub struct Benchmark<F> {
    pub train: TaskBatch<F>,
    pub test: TaskBatch<F>,
    pub teacher: MtlModel<F>,
}

impl<F: Scalar> Benchmark<F> {
    /// Mini-batches of one epoch in a seeded order; a trailing partial
    /// batch is dropped.
    pub fn epoch_batches(&self, batch: usize, rng: &mut impl Rng) -> Vec<TaskBatch<F>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        order
            .chunks_exact(batch)
            .map(|idx| self.train.select(idx))
            .collect()
    }
}

// Unit-variance pre-activations keep the teacher's tanh out of its linear
// regime, unlike the narrower student initialization.
const TEACHER_GAIN: f64 = 1.732_050_807_568_877_2;

/// Builds the teacher and samples `x ~ N(0, I)`, `y_t = teacher_t(x) + σ ε`.
///
/// Head 0 draws base weights `B`; head `t ≥ 1` uses `ρ B + sqrt(1 − ρ²) W_t`
/// with an independent `W_t`.
pub fn generate_benchmark<F: Scalar>(spec: &SyntheticTaskSpec) -> Result<Benchmark<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.teacher_seed);
    let teacher = build_teacher(spec, &mut rng)?;
    let train = sample(&teacher, spec, spec.samples, &mut rng)?;
    let test = sample(&teacher, spec, spec.test_samples, &mut rng)?;
    Ok(Benchmark {
        train,
        test,
        teacher,
    })
}

fn build_teacher<F: Scalar>(spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> Result<MtlModel<F>> {
    let mut trunk = Vec::with_capacity(spec.trunk.len());
    let mut fan_in = spec.d_in;
    for &w in &spec.trunk {
        trunk.push(DenseLayer::init(
            fan_in,
            w,
            spec.teacher_activation,
            TEACHER_GAIN,
            rng,
        ));
        fan_in = w;
    }
    let base: DenseLayer<F> =
        DenseLayer::init(fan_in, spec.d_out, Activation::Identity, TEACHER_GAIN, rng);
    let rho = F::of(spec.rho);
    let rest = F::of((1.0 - spec.rho * spec.rho).max(0.0).sqrt());
    let mut heads = vec![base.clone()];
    for _ in 1..spec.tasks {
        let own: DenseLayer<F> =
            DenseLayer::init(fan_in, spec.d_out, Activation::Identity, TEACHER_GAIN, rng);
        let mix = |a: &[F], b: &[F]| -> Vec<F> {
            a.iter().zip(b).map(|(&x, &y)| rho * x + rest * y).collect()
        };
        let weights = Tensor::new(
            vec![spec.d_out, fan_in],
            mix(base.weights.data(), own.weights.data()),
        )?;
        heads.push(DenseLayer::new(
            weights,
            mix(&base.bias, &own.bias),
            Activation::Identity,
        )?);
    }
    MtlModel::new(trunk, heads)
}

fn sample<F: Scalar>(
    teacher: &MtlModel<F>,
    spec: &SyntheticTaskSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TaskBatch<F>> {
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let x: Vec<F> = (0..n * spec.d_in).map(|_| F::of(normal())).collect();
    let inputs = Tensor::new(vec![n, spec.d_in], x)?;
    let mut feat = inputs.clone();
    for layer in teacher.trunk() {
        feat = layer.forward(&feat);
    }
    let mut targets = Vec::with_capacity(spec.tasks);
    for head in teacher.heads() {
        let mut y = head.forward(&feat);
        if spec.noise > 0.0 {
            let sigma = F::of(spec.noise);
            for v in y.data_mut() {
                *v += sigma * F::of(normal());
            }
        }
        targets.push(y);
    }
    TaskBatch::new(inputs, targets)
}
