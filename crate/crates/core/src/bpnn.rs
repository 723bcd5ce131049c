//! Fixed-topology feed-forward network: `input -> tanh hidden -> linear output`,
//! trained by mini-batch gradient descent on mean squared error.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Scalar;

/// Initial Levenberg-Marquardt damping and its adjustment factors.
const LM_MU_INIT: f64 = 1e-3;
const LM_MU_DEC: f64 = 0.1;
const LM_MU_INC: f64 = 10.0;
const LM_MU_MAX: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Mini-batch gradient descent with a fixed learning rate.
    #[default]
    Sgd,
    /// Damped Gauss-Newton steps on the full sample set; one epoch is one
    /// accepted step. `learning_rate` and `batch_size` are ignored.
    LevenbergMarquardt,
}

/// Training hyper-parameters. Training stops at whichever of `epochs`,
/// `target_error` or `min_gradient` is hit first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stop once the epoch MSE is at or below this.
    pub target_error: f64,
    /// Stop once the largest gradient component seen during an epoch is at or
    /// below this.
    pub min_gradient: f64,
    pub seed: u64,
    /// Train on inputs shifted and scaled to zero mean and unit variance per
    /// feature. The current parameters are taken to live in those
    /// coordinates; the affine map is folded into the first layer afterwards,
    /// so the trained network still consumes raw inputs.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 256,
            target_error: 1e-12,
            min_gradient: 1e-12,
            seed: 0,
            standardize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Epochs,
    TargetError,
    MinGradient,
    /// Levenberg-Marquardt damping grew past its ceiling without improving.
    DampingLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// MSE of the returned parameters over all samples.
    pub final_mse: f64,
    /// Mean per-sample loss observed during each epoch.
    pub epoch_mse: Vec<f64>,
    pub stop: StopReason,
}

/// Row-major input/target matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples<T> {
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<T>,
    targets: Vec<T>,
}

impl<T: Scalar> Samples<T> {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Samples {
            input_dim,
            output_dim,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn with_capacity(input_dim: usize, output_dim: usize, rows: usize) -> Self {
        Samples {
            input_dim,
            output_dim,
            inputs: Vec::with_capacity(rows * input_dim),
            targets: Vec::with_capacity(rows * output_dim),
        }
    }

    pub fn push(&mut self, input: &[T], target: &[T]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if target.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                got: target.len(),
            });
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.input_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, row: usize) -> &[T] {
        &self.inputs[row * self.input_dim..(row + 1) * self.input_dim]
    }

    pub fn target(&self, row: usize) -> &[T] {
        &self.targets[row * self.output_dim..(row + 1) * self.output_dim]
    }
}

// Hidden widths up to this are evaluated without allocating.
const EVAL_STACK: usize = 64;

/// Hyperbolic tangent, evaluated in double precision through an inlined
/// `exp`. Branch-free, so independent hidden units overlap in the pipeline.
/// The absolute difference from libm `tanh` stays below `1e-15`.
#[inline]
pub fn tanh<T: Scalar>(z: T) -> T {
    T::of(tanh_f64(z.as_f64()))
}

#[inline(always)]
fn tanh_f64(z: f64) -> f64 {
    let t = exp_nonpositive(-2.0 * z.abs());
    ((1.0 - t) / (1.0 + t)).copysign(z)
}

/// `e^x` for `x <= 0`, clamped below at -708 where the result is already
/// negligible next to 1.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const INV_FACTORIAL: [f64; 13] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40_320.0,
        1.0 / 362_880.0,
        1.0 / 3_628_800.0,
        1.0 / 39_916_800.0,
        1.0 / 479_001_600.0,
    ];
    // `max` maps NaN to -708, so tanh(NaN) comes out as +-1; divergence is
    // caught from the parameters and the loss instead
    let x = x.max(-708.0);
    let shifted = x * std::f64::consts::LOG2_E + SHIFT;
    let n = shifted - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    // Taylor series of e^r on |r| <= ln2/2 in Horner form, truncation error
    // below 2^-53
    let p = INV_FACTORIAL.iter().rev().fold(0.0, |acc, &c| acc * r + c);
    let k = shifted.to_bits().wrapping_sub(SHIFT.to_bits()) as i64;
    p * f64::from_bits(((k + 1023) as u64) << 52)
}

/// Read-only copies of many single-output networks of one topology, laid
/// out for fast evaluation: each network occupies one contiguous block with
/// `W1` transposed, so the hidden pre-activations update as whole vectors.
/// Sums run in the same order as [`Network::forward`], so results agree
/// bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct InferenceSlab<T> {
    input_dim: usize,
    hidden_dim: usize,
    stride: usize,
    data: Vec<T>,
}

impl<T: Scalar> InferenceSlab<T> {
    pub(crate) fn new<'a>(
        nets: impl IntoIterator<Item = &'a Network<T>>,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        let stride = input_dim * hidden_dim + 2 * hidden_dim + 1;
        let mut slab = InferenceSlab {
            input_dim,
            hidden_dim,
            stride,
            data: Vec::new(),
        };
        for net in nets {
            let at = slab.data.len();
            slab.data.resize(at + stride, T::zero());
            slab.write(at / stride, net);
        }
        slab
    }

    pub(crate) fn write(&mut self, k: usize, net: &Network<T>) {
        assert!(
            net.input_dim == self.input_dim
                && net.hidden_dim == self.hidden_dim
                && net.output_dim == 1
        );
        let (n, h) = (self.input_dim, self.hidden_dim);
        let block = &mut self.data[k * self.stride..(k + 1) * self.stride];
        let (w1t, rest) = block.split_at_mut(n * h);
        for j in 0..h {
            for i in 0..n {
                w1t[i * h + j] = net.w1[j * n + i];
            }
        }
        let (b1, rest) = rest.split_at_mut(h);
        b1.copy_from_slice(&net.b1);
        let (w2, b2) = rest.split_at_mut(h);
        w2.copy_from_slice(&net.w2);
        b2[0] = net.b2[0];
    }

    #[inline]
    pub(crate) fn eval(&self, k: usize, x: &[T]) -> T {
        let h = self.hidden_dim;
        let block = &self.data[k * self.stride..(k + 1) * self.stride];
        let (w1t, rest) = block.split_at(self.input_dim * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut stack = [T::zero(); EVAL_STACK];
        let mut heap = Vec::new();
        let z = if h <= EVAL_STACK {
            &mut stack[..h]
        } else {
            heap.resize(h, T::zero());
            &mut heap[..]
        };
        z.copy_from_slice(b1);
        for (col, &xi) in w1t.chunks_exact(h).zip(x) {
            for (zj, &w) in z.iter_mut().zip(col) {
                *zj += w * xi;
            }
        }
        for zj in z.iter_mut() {
            *zj = tanh(*zj);
        }
        let mut out = b2[0];
        for (&w, &hj) in w2.iter().zip(z.iter()) {
            out += w * hj;
        }
        out
    }
}

/// A `input_dim -> hidden_dim -> output_dim` perceptron with a tanh hidden
/// layer and an identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    /// hidden x input, row-major
    w1: Vec<T>,
    b1: Vec<T>,
    /// output x hidden, row-major
    w2: Vec<T>,
    b2: Vec<T>,
}

/// Per-parameter gradients, laid out like [`Network`].
#[derive(Debug, Clone)]
struct Grads<T> {
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
    b2: Vec<T>,
}

impl<T: Scalar> Grads<T> {
    fn zeros_like(net: &Network<T>) -> Self {
        Grads {
            w1: vec![T::zero(); net.w1.len()],
            b1: vec![T::zero(); net.b1.len()],
            w2: vec![T::zero(); net.w2.len()],
            b2: vec![T::zero(); net.b2.len()],
        }
    }

    fn clear(&mut self) {
        for g in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            g.fill(T::zero());
        }
    }

    fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
    }
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform weights, zero biases. Deterministic per `seed`.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> Self {
        assert!(
            input_dim >= 1 && hidden_dim >= 1 && output_dim >= 1,
            "network dimensions must be at least 1"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize, fan_out: usize, n: usize| -> Vec<T> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n)
                .map(|_| T::of(rng.gen_range(-limit..=limit)))
                .collect()
        };
        let w1 = uniform(input_dim, hidden_dim, hidden_dim * input_dim);
        let w2 = uniform(hidden_dim, output_dim, output_dim * hidden_dim);
        Network {
            input_dim,
            hidden_dim,
            output_dim,
            w1,
            b1: vec![T::zero(); hidden_dim],
            w2,
            b2: vec![T::zero(); output_dim],
        }
    }

    /// All parameters zero.
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Network {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![T::zero(); hidden_dim * input_dim],
            b1: vec![T::zero(); hidden_dim],
            w2: vec![T::zero(); output_dim * hidden_dim],
            b2: vec![T::zero(); output_dim],
        }
    }

    /// Assembles a network from parameter blocks in storage order.
    pub fn from_parts(
        (input_dim, hidden_dim, output_dim): (usize, usize, usize),
        w1: Vec<T>,
        b1: Vec<T>,
        w2: Vec<T>,
        b2: Vec<T>,
    ) -> Result<Self> {
        let expect = [
            (hidden_dim * input_dim, w1.len()),
            (hidden_dim, b1.len()),
            (output_dim * hidden_dim, w2.len()),
            (output_dim, b2.len()),
        ];
        for (expected, got) in expect {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(Network {
            input_dim,
            hidden_dim,
            output_dim,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn w1(&self) -> &[T] {
        &self.w1
    }

    pub fn b1(&self) -> &[T] {
        &self.b1
    }

    pub fn w2(&self) -> &[T] {
        &self.w2
    }

    pub fn b2(&self) -> &[T] {
        &self.b2
    }

    pub fn b2_mut(&mut self) -> &mut [T] {
        &mut self.b2
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters in storage order: W1, b1, W2, b2.
    pub fn params(&self) -> impl Iterator<Item = T> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Parameter storage in bytes.
    pub fn size_bytes(&self) -> usize {
        self.param_count() * T::BYTES
    }

    /// Output of a single-output network.
    pub fn forward(&self, x: &[T]) -> Result<T> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if self.output_dim != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.output_dim,
            });
        }
        Ok(self.eval(x))
    }

    /// All outputs.
    pub fn forward_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut hidden = vec![T::zero(); self.hidden_dim];
        let mut out = vec![T::zero(); self.output_dim];
        self.forward_into(x, &mut hidden, &mut out);
        Ok(out)
    }

    /// First output without dimension checks.
    #[inline]
    pub(crate) fn eval(&self, x: &[T]) -> T {
        let mut out = self.b2[0];
        for (j, row) in self.w1.chunks_exact(self.input_dim).enumerate() {
            let mut z = self.b1[j];
            for (w, &xi) in row.iter().zip(x) {
                z += *w * xi;
            }
            out += self.w2[j] * tanh(z);
        }
        out
    }

    fn forward_into(&self, x: &[T], hidden: &mut [T], out: &mut [T]) {
        for (j, row) in self.w1.chunks_exact(self.input_dim).enumerate() {
            let mut z = self.b1[j];
            for (w, &xi) in row.iter().zip(x) {
                z += *w * xi;
            }
            hidden[j] = tanh(z);
        }
        for (o, row) in self.w2.chunks_exact(self.hidden_dim).enumerate() {
            let mut y = self.b2[o];
            for (w, &h) in row.iter().zip(hidden.iter()) {
                y += *w * h;
            }
            out[o] = y;
        }
    }

    /// Forward + backward for one sample. Adds `scale * dL/dθ` into `grads`
    /// where `L` is the mean squared error over the outputs, and returns `L`.
    fn accumulate(
        &self,
        x: &[T],
        target: &[T],
        scale: T,
        hidden: &mut [T],
        out: &mut [T],
        grads: &mut Grads<T>,
    ) -> T {
        self.forward_into(x, hidden, out);
        let inv_out = T::one() / T::of(self.output_dim as f64);
        let two = T::of(2.0);
        let mut loss = T::zero();
        // reuse `out` as the output delta
        for (o, y) in out.iter_mut().enumerate() {
            let err = *y - target[o];
            loss += err * err;
            *y = two * err * inv_out * scale;
        }
        for (o, &delta) in out.iter().enumerate() {
            grads.b2[o] += delta;
            let grow = &mut grads.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            for (g, &h) in grow.iter_mut().zip(hidden.iter()) {
                *g += delta * h;
            }
        }
        for (j, &h) in hidden[..self.hidden_dim].iter().enumerate() {
            let mut back = T::zero();
            for (o, &delta) in out.iter().enumerate() {
                back += delta * self.w2[o * self.hidden_dim + j];
            }
            let dz = back * (T::one() - h * h);
            grads.b1[j] += dz;
            let grow = &mut grads.w1[j * self.input_dim..(j + 1) * self.input_dim];
            for (g, &xi) in grow.iter_mut().zip(x) {
                *g += dz * xi;
            }
        }
        loss * inv_out
    }

    /// Mean over samples of the per-sample MSE.
    pub fn mse(&self, samples: &Samples<T>) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut hidden = vec![T::zero(); self.hidden_dim];
        let mut out = vec![T::zero(); self.output_dim];
        let mut total = 0.0;
        for row in 0..samples.len() {
            self.forward_into(samples.input(row), &mut hidden, &mut out);
            let l: f64 = out
                .iter()
                .zip(samples.target(row))
                .map(|(&y, &t)| (y - t).as_f64().powi(2))
                .sum();
            total += l / self.output_dim as f64;
        }
        total / samples.len() as f64
    }

    fn check_samples(&self, samples: &Samples<T>) -> Result<()> {
        if samples.input_dim != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: samples.input_dim,
            });
        }
        if samples.output_dim != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                got: samples.output_dim,
            });
        }
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if samples.targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("training targets must be finite".into()));
        }
        Ok(())
    }

    /// Mini-batch SGD on MSE. Sample order is reshuffled every epoch from
    /// `cfg.seed`, so identical inputs give bit-identical parameters.
    pub fn train(&mut self, samples: &Samples<T>, cfg: &TrainConfig) -> Result<TrainReport> {
        cfg.validate()?;
        self.check_samples(samples)?;
        if !cfg.standardize {
            return self.train_raw(samples, cfg);
        }
        let (shift, scale) = feature_moments(samples);
        let mut standardized = samples.clone();
        for row in standardized.inputs.chunks_exact_mut(self.input_dim) {
            for ((x, &m), &s) in row.iter_mut().zip(&shift).zip(&scale) {
                *x = (*x - m) / s;
            }
        }
        let mut report = self.train_raw(&standardized, cfg)?;
        self.fold_input_transform(&shift, &scale);
        report.final_mse = self.mse(samples);
        if !self.is_finite() || !report.final_mse.is_finite() {
            return Err(Error::Diverged {
                epoch: report.epochs_run,
            });
        }
        Ok(report)
    }

    /// Rewrites the first layer so that `net(x)` equals the old
    /// `net((x - shift) / scale)`.
    fn fold_input_transform(&mut self, shift: &[T], scale: &[T]) {
        for (j, row) in self.w1.chunks_exact_mut(self.input_dim).enumerate() {
            let mut offset = T::zero();
            for ((w, &m), &s) in row.iter_mut().zip(shift).zip(scale) {
                *w /= s;
                offset += *w * m;
            }
            self.b1[j] -= offset;
        }
    }

    fn train_raw(&mut self, samples: &Samples<T>, cfg: &TrainConfig) -> Result<TrainReport> {
        match cfg.optimizer {
            Optimizer::Sgd => self.train_sgd(samples, cfg),
            Optimizer::LevenbergMarquardt => self.train_lm(samples, cfg),
        }
    }

    /// Gauss-Newton normal equations `(J^T J, J^T e)` for the residuals
    /// `e = y - t`, accumulated row by row, plus the current MSE.
    fn normal_equations(&self, samples: &Samples<T>) -> (DMatrix<f64>, DVector<f64>, f64) {
        let p = self.param_count();
        let (ni, nh) = (self.input_dim, self.hidden_dim);
        let w1_len = self.w1.len();
        let w2_at = w1_len + nh;
        let b2_at = w2_at + self.w2.len();
        // column-major p x p
        let mut jtj = vec![0.0f64; p * p];
        let mut jte = DVector::<f64>::zeros(p);
        let mut hidden = vec![T::zero(); nh];
        let mut out = vec![T::zero(); self.output_dim];
        let mut row = vec![0.0f64; p];
        let mut sq = 0.0;
        for r in 0..samples.len() {
            let x = samples.input(r);
            self.forward_into(x, &mut hidden, &mut out);
            for (o, &y) in out.iter().enumerate() {
                let e = (y - samples.target(r)[o]).as_f64();
                sq += e * e;
                row.fill(0.0);
                for j in 0..nh {
                    let h = hidden[j].as_f64();
                    let w = self.w2[o * nh + j].as_f64();
                    let dz = w * (1.0 - h * h);
                    for i in 0..ni {
                        row[j * ni + i] = dz * x[i].as_f64();
                    }
                    row[w1_len + j] = dz;
                    row[w2_at + o * nh + j] = h;
                }
                row[b2_at + o] = 1.0;
                // upper triangle only; mirrored below
                for a in 0..p {
                    let ra = row[a];
                    if ra == 0.0 {
                        continue;
                    }
                    jte[a] += ra * e;
                    let col = &mut jtj[a * p..a * p + a + 1];
                    for (c, &rb) in col.iter_mut().zip(&row[..=a]) {
                        *c += rb * ra;
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[b * p + a] = jtj[a * p + b];
            }
        }
        let m = (samples.len() * self.output_dim) as f64;
        (DMatrix::from_vec(p, p, jtj), jte, sq / m)
    }

    fn apply_step(&mut self, step: &DVector<f64>) {
        for (p, d) in self.params_mut().zip(step.iter()) {
            *p -= T::of(*d);
        }
    }

    fn train_lm(&mut self, samples: &Samples<T>, cfg: &TrainConfig) -> Result<TrainReport> {
        let m = (samples.len() * self.output_dim) as f64;
        let mut mu = LM_MU_INIT;
        let mut epoch_mse = Vec::new();
        let mut stop = StopReason::Epochs;
        for epoch in 1..=cfg.epochs {
            let (jtj, jte, mse) = self.normal_equations(samples);
            if !mse.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_mse.push(mse);
            if mse <= cfg.target_error {
                stop = StopReason::TargetError;
                break;
            }
            // gradient of the MSE is 2 J^T e / m
            let grad_max = jte.amax() * 2.0 / m;
            if grad_max <= cfg.min_gradient {
                stop = StopReason::MinGradient;
                break;
            }
            let mut improved = false;
            while mu <= LM_MU_MAX {
                let mut damped = jtj.clone();
                for d in 0..damped.nrows() {
                    damped[(d, d)] += mu;
                }
                let step = damped.cholesky().map(|c| c.solve(&jte));
                if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                    let previous = self.clone();
                    self.apply_step(&step);
                    let trial = self.mse(samples);
                    if trial.is_finite() && trial < mse {
                        mu = (mu * LM_MU_DEC).max(1e-20);
                        improved = true;
                        break;
                    }
                    *self = previous;
                }
                mu *= LM_MU_INC;
            }
            if !improved {
                stop = StopReason::DampingLimit;
                break;
            }
        }
        let final_mse = self.mse(samples);
        Ok(TrainReport {
            epochs_run: epoch_mse.len(),
            final_mse,
            epoch_mse,
            stop,
        })
    }

    fn train_sgd(&mut self, samples: &Samples<T>, cfg: &TrainConfig) -> Result<TrainReport> {
        let n = samples.len();
        let lr = T::of(cfg.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut grads = Grads::zeros_like(self);
        let mut hidden = vec![T::zero(); self.hidden_dim];
        let mut out = vec![T::zero(); self.output_dim];
        let mut epoch_mse = Vec::with_capacity(cfg.epochs.min(1 << 16));
        let mut stop = StopReason::Epochs;

        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut grad_max = 0.0f64;
            for batch in order.chunks(cfg.batch_size) {
                grads.clear();
                let scale = T::one() / T::of(batch.len() as f64);
                for &row in batch {
                    let l = self.accumulate(
                        samples.input(row),
                        samples.target(row),
                        scale,
                        &mut hidden,
                        &mut out,
                        &mut grads,
                    );
                    loss_sum += l.as_f64();
                }
                for (p, g) in self.params_mut().zip(grads.iter()) {
                    *p -= lr * g;
                    grad_max = grad_max.max(g.abs().as_f64());
                }
            }
            let mse = loss_sum / n as f64;
            if !mse.is_finite() || !self.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_mse.push(mse);
            if mse <= cfg.target_error {
                stop = StopReason::TargetError;
                break;
            }
            if grad_max <= cfg.min_gradient {
                stop = StopReason::MinGradient;
                break;
            }
        }
        let final_mse = self.mse(samples);
        if !final_mse.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch_mse.len(),
            });
        }
        Ok(TrainReport {
            epochs_run: epoch_mse.len(),
            final_mse,
            epoch_mse,
            stop,
        })
    }

    /// Backprop gradient of the single-sample MSE, in storage order.
    pub fn gradient(&self, x: &[T], target: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if target.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                got: target.len(),
            });
        }
        let mut grads = Grads::zeros_like(self);
        let mut hidden = vec![T::zero(); self.hidden_dim];
        let mut out = vec![T::zero(); self.output_dim];
        self.accumulate(x, target, T::one(), &mut hidden, &mut out, &mut grads);
        Ok(grads.iter().collect())
    }

    fn sample_loss(&self, x: &[T], target: &[T]) -> T {
        let out = self.forward_vec(x).expect("dimensions checked by caller");
        let sq: T = out
            .iter()
            .zip(target)
            .map(|(&y, &t)| (y - t) * (y - t))
            .sum();
        sq / T::of(self.output_dim as f64)
    }

    /// Largest relative disagreement between the backprop gradient and a
    /// central finite-difference estimate with step `eps`.
    pub fn gradient_check(&self, x: &[T], target: &[T], eps: f64) -> Result<f64> {
        let analytic = self.gradient(x, target)?;
        let eps_t = T::of(eps);
        let mut probe = self.clone();
        let mut worst = 0.0f64;
        for (k, g_bp) in analytic.iter().enumerate() {
            let original = probe.params().nth(k).unwrap();
            set_param(&mut probe, k, original + eps_t);
            let plus = probe.sample_loss(x, target);
            set_param(&mut probe, k, original - eps_t);
            let minus = probe.sample_loss(x, target);
            set_param(&mut probe, k, original);
            let g_fd = (plus - minus).as_f64() / (2.0 * eps);
            let g_bp = g_bp.as_f64();
            let rel = (g_bp - g_fd).abs() / (g_bp.abs() + g_fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
        Ok(worst)
    }
}

/// Per-feature mean and standard deviation; constant features get scale 1.
fn feature_moments<T: Scalar>(samples: &Samples<T>) -> (Vec<T>, Vec<T>) {
    let d = samples.input_dim;
    let n = samples.len() as f64;
    let mut mean = vec![0.0f64; d];
    for row in samples.inputs.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for row in samples.inputs.chunks_exact(d) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x.as_f64() - m).powi(2);
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            T::of(if sd > 1e-12 { sd } else { 1.0 })
        })
        .collect();
    (mean.into_iter().map(T::of).collect(), scale)
}

fn set_param<T: Scalar>(net: &mut Network<T>, k: usize, value: T) {
    *net.params_mut().nth(k).unwrap() = value;
}
