//! Multi-task MLP: a shared tanh trunk feeding one linear head per task,
//! with mean-squared-error losses and hand-derived reverse-mode gradients.

use rand::Rng;

use crate::combiners::TaskGradientSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output<F: Scalar>(self, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Identity => F::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<F> {
    /// `[fan_out × fan_in]`, one row per output neuron.
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
    pub activation: Activation,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(weights: Tensor<F>, bias: Vec<F>, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Dimension {
                context: "layer weight rank",
                expected: 2,
                actual: weights.shape().len(),
            });
        }
        if bias.len() != weights.rows() {
            return Err(Error::Dimension {
                context: "layer bias",
                expected: weights.rows(),
                actual: bias.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let bound = scale / (fan_in as f64).sqrt();
        let mut draw = || F::of(rng.random_range(-bound..=bound));
        let weights: Vec<F> = (0..fan_in * fan_out).map(|_| draw()).collect();
        let bias: Vec<F> = (0..fan_out).map(|_| draw()).collect();
        Self {
            weights: Tensor::new(vec![fan_out, fan_in], weights).expect("shape matches"),
            bias,
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, input: &Tensor<F>) -> Tensor<F> {
        let mut z = input.matmul_t(&self.weights);
        z.add_row_broadcast(&self.bias);
        let act = self.activation;
        z.map(|x| act.apply(x))
    }

    /// Backpropagates `grad_out` (w.r.t. this layer's output) given the
    /// cached input and output. Writes weight then bias gradients into
    /// `param_grad` and returns the gradient w.r.t. the input.
    fn backward(
        &self,
        input: &Tensor<F>,
        output: &Tensor<F>,
        grad_out: &Tensor<F>,
        param_grad: &mut [F],
    ) -> Tensor<F> {
        let mut dz = grad_out.clone();
        if self.activation != Activation::Identity {
            for (d, &y) in dz.data_mut().iter_mut().zip(output.data()) {
                *d *= self.activation.derivative_from_output(y);
            }
        }
        let dw = dz.t_matmul(input);
        let nw = dw.len();
        param_grad[..nw].copy_from_slice(dw.data());
        param_grad[nw..].copy_from_slice(&dz.sum_rows());
        dz.matmul(&self.weights)
    }

    fn write_params(&self, out: &mut [F]) {
        let nw = self.weights.len();
        out[..nw].copy_from_slice(self.weights.data());
        out[nw..].copy_from_slice(&self.bias);
    }

    fn read_params(&mut self, src: &[F]) {
        let nw = self.weights.len();
        self.weights.data_mut().copy_from_slice(&src[..nw]);
        self.bias.copy_from_slice(&src[nw..]);
    }

    /// `params -= lr * dir`, skipping exact-zero entries.
    fn step(&mut self, dir: &[F], lr: F) {
        let nw = self.weights.len();
        descend(self.weights.data_mut(), &dir[..nw], lr);
        descend(&mut self.bias, &dir[nw..], lr);
    }
}

fn descend<F: Scalar>(params: &mut [F], dir: &[F], lr: F) {
    for (p, &d) in params.iter_mut().zip(dir) {
        if d != F::zero() {
            *p -= lr * d;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
    pub fan_out: usize,
    pub fan_in: usize,
}

impl LayoutEntry {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Maps the flattened shared-parameter vector back to trunk layers.
///
/// Each trunk layer contributes its row-major weights followed by its bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<LayoutEntry>,
    pub total_shared: usize,
    pub total_per_head: Vec<usize>,
}

impl ParamLayout {
    fn build<F: Scalar>(trunk: &[DenseLayer<F>], heads: &[DenseLayer<F>]) -> Self {
        let mut entries = Vec::with_capacity(trunk.len() * 2);
        let mut offset = 0;
        for (layer, l) in trunk.iter().enumerate() {
            let (fan_out, fan_in) = (l.fan_out(), l.fan_in());
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Weight,
                offset,
                len: fan_out * fan_in,
                fan_out,
                fan_in,
            });
            offset += fan_out * fan_in;
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Bias,
                offset,
                len: fan_out,
                fan_out,
                fan_in,
            });
            offset += fan_out;
        }
        Self {
            entries,
            total_shared: offset,
            total_per_head: heads.iter().map(DenseLayer::param_count).collect(),
        }
    }

    pub fn weights(&self) -> impl Iterator<Item = &LayoutEntry> {
        self.entries.iter().filter(|e| e.kind == ParamKind::Weight)
    }

    pub fn total_weights(&self) -> usize {
        self.weights().map(|e| e.len).sum()
    }
}

/// Flattened vector over the shared parameters: values or gradients.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector<F>(pub Vec<F>);

impl<F: Scalar> ParamVector<F> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![F::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn dot(&self, other: &Self) -> F {
        crate::scalar::dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> F {
        crate::scalar::norm(&self.0)
    }

    pub fn scaled(&self, s: F) -> Self {
        Self(self.0.iter().map(|&x| x * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl<F> From<Vec<F>> for ParamVector<F> {
    fn from(v: Vec<F>) -> Self {
        Self(v)
    }
}

/// Inputs shared by every task plus one target matrix per task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskBatch<F> {
    /// `[B × d_in]`
    pub inputs: Tensor<F>,
    /// One `[B × d_out_t]` matrix per task.
    pub targets: Vec<Tensor<F>>,
}

impl<F: Scalar> TaskBatch<F> {
    pub fn new(inputs: Tensor<F>, targets: Vec<Tensor<F>>) -> Result<Self> {
        let b = inputs.rows();
        for t in &targets {
            if t.rows() != b {
                return Err(Error::Dimension {
                    context: "target batch size",
                    expected: b,
                    actual: t.rows(),
                });
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.iter().map(|t| t.select_rows(idx)).collect(),
        }
    }

    /// Keeps only the listed tasks' targets.
    pub fn with_tasks(&self, tasks: &[usize]) -> Self {
        Self {
            inputs: self.inputs.clone(),
            targets: tasks.iter().map(|&t| self.targets[t].clone()).collect(),
        }
    }
}

/// Layer sizes of a multi-task model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub d_in: usize,
    pub trunk: Vec<usize>,
    /// Output width of each task head.
    pub heads: Vec<usize>,
    pub trunk_activation: Activation,
    /// Start every head from the same draw (requires equal widths).
    pub shared_head_init: bool,
}

impl Architecture {
    pub fn tasks(&self) -> usize {
        self.heads.len()
    }
}

/// Per-task losses together with their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradients<F> {
    pub losses: Vec<F>,
    /// Row `t` is the gradient of task `t`'s loss w.r.t. the shared trunk.
    pub shared: TaskGradientSet<F>,
    /// Gradient of task `t`'s loss w.r.t. its own head.
    pub heads: Vec<ParamVector<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MtlModel<F> {
    trunk: Vec<DenseLayer<F>>,
    heads: Vec<DenseLayer<F>>,
    layout: ParamLayout,
}

impl<F: Scalar> MtlModel<F> {
    pub fn new(trunk: Vec<DenseLayer<F>>, heads: Vec<DenseLayer<F>>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::config("tasks", "a model needs at least one head"));
        }
        for pair in trunk.windows(2) {
            if pair[1].fan_in() != pair[0].fan_out() {
                return Err(Error::Dimension {
                    context: "trunk layer chaining",
                    expected: pair[0].fan_out(),
                    actual: pair[1].fan_in(),
                });
            }
        }
        let feat = trunk.last().map(DenseLayer::fan_out);
        for h in &heads {
            if let Some(f) = feat {
                if h.fan_in() != f {
                    return Err(Error::Dimension {
                        context: "head input width",
                        expected: f,
                        actual: h.fan_in(),
                    });
                }
            }
        }
        if feat.is_none() && heads.windows(2).any(|p| p[0].fan_in() != p[1].fan_in()) {
            return Err(Error::Dimension {
                context: "head input width",
                expected: heads[0].fan_in(),
                actual: heads.iter().map(DenseLayer::fan_in).max().unwrap_or(0),
            });
        }
        let layout = ParamLayout::build(&trunk, &heads);
        Ok(Self {
            trunk,
            heads,
            layout,
        })
    }

    /// Seeded initialization; heads use identity activation.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        Self::init_scaled(arch, 1.0, rng)
    }

    /// As [`MtlModel::init`] with the uniform bound multiplied by `scale`.
    pub fn init_scaled<R: Rng + ?Sized>(
        arch: &Architecture,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if arch.d_in == 0 || arch.trunk.contains(&0) {
            return Err(Error::config("trunk", "layer widths must be positive"));
        }
        if arch.heads.is_empty() || arch.heads.contains(&0) {
            return Err(Error::config("d_out", "head widths must be positive"));
        }
        let mut trunk = Vec::with_capacity(arch.trunk.len());
        let mut fan_in = arch.d_in;
        for &w in &arch.trunk {
            trunk.push(DenseLayer::init(
                fan_in,
                w,
                arch.trunk_activation,
                scale,
                rng,
            ));
            fan_in = w;
        }
        let share = arch.shared_head_init && arch.heads.windows(2).all(|p| p[0] == p[1]);
        let heads = if share {
            let head = DenseLayer::init(fan_in, arch.heads[0], Activation::Identity, scale, rng);
            vec![head; arch.heads.len()]
        } else {
            arch.heads
                .iter()
                .map(|&w| DenseLayer::init(fan_in, w, Activation::Identity, scale, rng))
                .collect()
        };
        Self::new(trunk, heads)
    }

    pub fn trunk(&self) -> &[DenseLayer<F>] {
        &self.trunk
    }

    pub fn heads(&self) -> &[DenseLayer<F>] {
        &self.heads
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn d_in(&self) -> usize {
        self.trunk
            .first()
            .map_or_else(|| self.heads[0].fan_in(), DenseLayer::fan_in)
    }

    /// Copy of the model that keeps only the listed heads.
    pub fn with_heads(&self, tasks: &[usize]) -> Result<Self> {
        Self::new(
            self.trunk.clone(),
            tasks.iter().map(|&t| self.heads[t].clone()).collect(),
        )
    }

    pub fn shared_params(&self) -> ParamVector<F> {
        let mut out = vec![F::zero(); self.layout.total_shared];
        let mut offset = 0;
        for l in &self.trunk {
            let n = l.param_count();
            l.write_params(&mut out[offset..offset + n]);
            offset += n;
        }
        ParamVector(out)
    }

    pub fn set_shared_params(&mut self, params: &ParamVector<F>) -> Result<()> {
        self.check_shared_len(params.len())?;
        let mut offset = 0;
        for l in &mut self.trunk {
            let n = l.param_count();
            l.read_params(&params.0[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn head_params(&self, task: usize) -> ParamVector<F> {
        let h = &self.heads[task];
        let mut out = vec![F::zero(); h.param_count()];
        h.write_params(&mut out);
        ParamVector(out)
    }

    fn check_shared_len(&self, len: usize) -> Result<()> {
        if len != self.layout.total_shared {
            return Err(Error::Dimension {
                context: "shared parameter vector",
                expected: self.layout.total_shared,
                actual: len,
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &TaskBatch<F>) -> Result<()> {
        if batch.inputs.cols() != self.d_in() {
            return Err(Error::Dimension {
                context: "batch input width",
                expected: self.d_in(),
                actual: batch.inputs.cols(),
            });
        }
        if batch.targets.len() != self.tasks() {
            return Err(Error::Dimension {
                context: "task count",
                expected: self.tasks(),
                actual: batch.targets.len(),
            });
        }
        for (t, (h, y)) in self.heads.iter().zip(&batch.targets).enumerate() {
            if y.cols() != h.fan_out() || y.rows() != batch.inputs.rows() {
                return Err(Error::Config {
                    key: format!("targets[{t}]"),
                    message: format!(
                        "expected [{} x {}], got {:?}",
                        batch.inputs.rows(),
                        h.fan_out(),
                        y.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Trunk activations: element 0 is the input, the last is the feature map.
    fn trunk_forward(&self, inputs: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        acts.push(inputs.clone());
        for (i, l) in self.trunk.iter().enumerate() {
            let out = l.forward(acts.last().expect("non-empty"));
            if !out.is_finite() {
                return Err(Error::Numeric {
                    stage: "forward",
                    layer: format!("trunk.{i}"),
                });
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Mean-squared error of every task head.
    pub fn forward_losses(&self, batch: &TaskBatch<F>) -> Result<Vec<F>> {
        self.check_batch(batch)?;
        let acts = self.trunk_forward(&batch.inputs)?;
        let feat = acts.last().expect("non-empty");
        Ok(self
            .heads
            .iter()
            .zip(&batch.targets)
            .map(|(h, y)| mse(&h.forward(feat), y))
            .collect())
    }

    /// Exact per-task gradients w.r.t. the trunk and each task's own head.
    pub fn task_gradients(&self, batch: &TaskBatch<F>) -> Result<TaskGradients<F>> {
        self.check_batch(batch)?;
        let acts = self.trunk_forward(&batch.inputs)?;
        let feat = acts.last().expect("non-empty");
        let p = self.layout.total_shared;
        let t_count = self.tasks();

        let mut losses = Vec::with_capacity(t_count);
        let mut shared = vec![F::zero(); t_count * p];
        let mut heads = Vec::with_capacity(t_count);

        for (t, (head, y)) in self.heads.iter().zip(&batch.targets).enumerate() {
            let pred = head.forward(feat);
            losses.push(mse(&pred, y));
            let scale = F::of(2.0) / F::of_usize(pred.len());
            let mut grad = pred.clone();
            for (g, &yv) in grad.data_mut().iter_mut().zip(y.data()) {
                *g = (*g - yv) * scale;
            }
            let mut head_grad = vec![F::zero(); head.param_count()];
            let mut upstream = head.backward(feat, &pred, &grad, &mut head_grad);
            check_finite(&head_grad, "backward", || format!("head.{t}"))?;
            heads.push(ParamVector(head_grad));

            let row = &mut shared[t * p..(t + 1) * p];
            let mut end = p;
            for (i, layer) in self.trunk.iter().enumerate().rev() {
                let start = end - layer.param_count();
                upstream = layer.backward(&acts[i], &acts[i + 1], &upstream, &mut row[start..end]);
                check_finite(&row[start..end], "backward", || format!("trunk.{i}"))?;
                end = start;
            }
        }

        Ok(TaskGradients {
            losses,
            shared: TaskGradientSet::from_flat(t_count, p, shared)?,
            heads,
        })
    }

    /// Descends the shared trunk along `direction` and every head along its
    /// own direction, all with step `lr`. Zero entries leave parameters
    /// bit-identical.
    pub fn apply_update(
        &mut self,
        direction: &ParamVector<F>,
        head_dirs: &[ParamVector<F>],
        lr: F,
    ) -> Result<()> {
        self.check_shared_len(direction.len())?;
        if head_dirs.len() != self.tasks() {
            return Err(Error::Dimension {
                context: "head update count",
                expected: self.tasks(),
                actual: head_dirs.len(),
            });
        }
        for (h, d) in self.heads.iter().zip(head_dirs) {
            if d.len() != h.param_count() {
                return Err(Error::Dimension {
                    context: "head update length",
                    expected: h.param_count(),
                    actual: d.len(),
                });
            }
        }
        if !lr.is_finite() || lr < F::zero() {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        let mut offset = 0;
        for l in &mut self.trunk {
            let n = l.param_count();
            l.step(&direction.0[offset..offset + n], lr);
            offset += n;
        }
        for (h, d) in self.heads.iter_mut().zip(head_dirs) {
            h.step(&d.0, lr);
        }
        Ok(())
    }
}

fn check_finite<F: Scalar>(
    v: &[F],
    stage: &'static str,
    layer: impl FnOnce() -> String,
) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            stage,
            layer: layer(),
        })
    }
}

fn mse<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> F {
    let mut acc = F::zero();
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let d = p - y;
        acc += d * d;
    }
    acc / F::of_usize(pred.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture {
            d_in: 5,
            trunk: vec![7, 6],
            heads: vec![3, 3],
            trunk_activation: Activation::Tanh,
            shared_head_init: false,
        }
    }

    fn batch(rows: usize, seed: u64) -> TaskBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |c: usize| {
            let data = (0..rows * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(vec![rows, c], data).unwrap()
        };
        let x = m(5);
        let ys = vec![m(3), m(3)];
        TaskBatch::new(x, ys).unwrap()
    }

    fn model(seed: u64) -> MtlModel<f64> {
        MtlModel::init(&arch(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    // Straight nested loops over the public layer fields.
    fn naive_losses(m: &MtlModel<f64>, b: &TaskBatch<f64>) -> Vec<f64> {
        let mut out = vec![0.0; m.tasks()];
        for r in 0..b.len() {
            let mut h: Vec<f64> = b.inputs.row(r).to_vec();
            for l in m.trunk() {
                h = (0..l.fan_out())
                    .map(|o| {
                        let z: f64 = (0..l.fan_in())
                            .map(|i| l.weights.row(o)[i] * h[i])
                            .sum::<f64>()
                            + l.bias[o];
                        z.tanh()
                    })
                    .collect();
            }
            for (t, head) in m.heads().iter().enumerate() {
                for o in 0..head.fan_out() {
                    let z: f64 = (0..head.fan_in())
                        .map(|i| head.weights.row(o)[i] * h[i])
                        .sum::<f64>()
                        + head.bias[o];
                    let d = z - b.targets[t].row(r)[o];
                    out[t] += d * d;
                }
            }
        }
        out.iter()
            .zip(m.heads())
            .map(|(s, h)| s / (b.len() * h.fan_out()) as f64)
            .collect()
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let m = model(3);
        let b = batch(9, 4);
        let fast = m.forward_losses(&b).unwrap();
        let slow = naive_losses(&m, &b);
        for (a, e) in fast.iter().zip(&slow) {
            assert!((a - e).abs() <= 1e-12 * e.max(1.0), "{a} vs {e}");
        }
    }

    #[test]
    fn zero_model_zero_targets() {
        let mut m = model(1);
        let p = m.shared_params().len();
        m.set_shared_params(&ParamVector::zeros(p)).unwrap();
        let heads = m.heads().iter().map(|h| {
            DenseLayer::new(
                Tensor::zeros(vec![h.fan_out(), h.fan_in()]),
                vec![0.0; h.fan_out()],
                Activation::Identity,
            )
            .unwrap()
        });
        let m = MtlModel::new(m.trunk().to_vec(), heads.collect()).unwrap();
        let mut b = batch(4, 2);
        for y in &mut b.targets {
            y.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.forward_losses(&b).unwrap(), vec![0.0, 0.0]);
    }

    fn scalar_model(theta: f64) -> MtlModel<f64> {
        let w = |v: f64, act| {
            DenseLayer::new(Tensor::new(vec![1, 1], vec![v]).unwrap(), vec![0.0], act).unwrap()
        };
        MtlModel::new(
            vec![w(theta, Activation::Identity)],
            vec![w(1.0, Activation::Identity); 2],
        )
        .unwrap()
    }

    #[test]
    fn quadratic_gradient() {
        // L(θ) = (θ·1)² with target 0.
        let m = scalar_model(3.0);
        let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let b = TaskBatch::new(x, vec![Tensor::zeros(vec![1, 1]); 2]).unwrap();
        let g = m.task_gradients(&b).unwrap();
        assert_eq!(g.losses, vec![9.0, 9.0]);
        assert_eq!(g.shared.row(0)[0], 6.0);
    }

    #[test]
    fn identical_tasks_identical_rows() {
        let mut a = arch();
        a.shared_head_init = true;
        let m = MtlModel::<f64>::init(&a, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut b = batch(6, 9);
        b.targets[1] = b.targets[0].clone();
        let g = m.task_gradients(&b).unwrap();
        assert_eq!(g.shared.row(0), g.shared.row(1));
        assert_eq!(g.heads[0], g.heads[1]);
    }

    #[test]
    fn gradients_match_central_differences() {
        let m = model(11);
        let b = batch(8, 12);
        let g = m.task_gradients(&b).unwrap();
        let theta = m.shared_params();
        let h = 1e-6;
        for t in 0..2 {
            for c in (0..theta.len()).step_by(7) {
                let mut probe = m.clone();
                let mut p = theta.clone();
                p.0[c] += h;
                probe.set_shared_params(&p).unwrap();
                let up = probe.forward_losses(&b).unwrap()[t];
                p.0[c] -= 2.0 * h;
                probe.set_shared_params(&p).unwrap();
                let down = probe.forward_losses(&b).unwrap()[t];
                let fd = (up - down) / (2.0 * h);
                let a = g.shared.row(t)[c];
                assert!(
                    (a - fd).abs() / a.abs().max(1.0) <= 1e-5,
                    "coord {c}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn gradients_are_deterministic() {
        let m = model(5);
        let b = batch(5, 6);
        assert_eq!(m.task_gradients(&b).unwrap(), m.task_gradients(&b).unwrap());
    }

    #[test]
    fn update_arithmetic() {
        let mut m = scalar_model(1.0);
        let heads = vec![ParamVector::zeros(2); 2];
        let mut dir = ParamVector(vec![2.0, 0.0]);
        m.apply_update(&dir, &heads, 0.1).unwrap();
        assert_eq!(m.shared_params().0[0], 0.8);

        let before = m.clone();
        m.apply_update(&dir, &heads, 0.0).unwrap();
        assert_eq!(m, before);
        dir.0[0] = 0.0;
        m.apply_update(&dir, &heads, 0.5).unwrap();
        assert_eq!(m, before);
        assert!(m.apply_update(&ParamVector::zeros(3), &heads, 0.1).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let mut m = model(2);
        let p = m.shared_params();
        let total: usize = m.layout().entries.iter().map(|e| e.len).sum();
        assert_eq!(total, p.len());
        m.set_shared_params(&p).unwrap();
        assert_eq!(m.shared_params(), p);
    }

    #[test]
    fn f32_model_runs() {
        let m = MtlModel::<f32>::init(&arch(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Tensor::new(vec![2, 5], vec![0.1f32; 10]).unwrap();
        let b = TaskBatch::new(x, vec![Tensor::zeros(vec![2, 3]); 2]).unwrap();
        assert!(m
            .task_gradients(&b)
            .unwrap()
            .losses
            .iter()
            .all(|l| l.is_finite()));
    }
}
