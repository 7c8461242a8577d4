//! Small dense networks with hand-written backpropagation.
//!
//! A [`ModelState`] holds the three networks of adversarial adaptation:
//! the feature extractor `g`, the softmax classifier `h` and the sigmoid
//! discriminator `d`, plus the momentum buffers of their optimizer.

use crate::{Error, Matrix, Result};
use nalgebra::DVector;
use rand::Rng;
use std::io::{BufRead, Write};

/// Probabilities are clamped at this value inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    // Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// What the last layer's pre-activations (logits) go through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    Linear,
    /// The hidden-layer activation.
    Activation,
    Softmax,
    Sigmoid,
}

impl OutputHead {
    fn name(self) -> &'static str {
        match self {
            OutputHead::Linear => "linear",
            OutputHead::Activation => "activation",
            OutputHead::Softmax => "softmax",
            OutputHead::Sigmoid => "sigmoid",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(OutputHead::Linear),
            "activation" => Some(OutputHead::Activation),
            "softmax" => Some(OutputHead::Softmax),
            "sigmoid" => Some(OutputHead::Sigmoid),
            _ => None,
        }
    }
}

/// One affine layer; `weights` is `fan_in x fan_out` so a batch maps as `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: DVector<f64>,
}

/// Parameter-shaped gradients (or momentum buffers) of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Matrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights * alpha;
            a.bias.axpy(alpha, &b.bias, 1.0);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }

    /// All entries, layer by layer, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    fn same_shape(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers.len()
            && self.layers.iter().zip(&mlp.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape() && g.bias.len() == l.bias.len()
            })
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        for r in 0..l.weights.nrows() {
            out.extend(l.weights.row(r).iter());
        }
        out.extend(l.bias.iter());
    }
    out
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    generation: u64,
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    hidden_out: Vec<Matrix>,
    pub output: Matrix,
}

impl MlpCache {
    /// Pre-head values of the last layer.
    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("network has at least one layer")
    }
}

/// Feed-forward network with a shared hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
    activation: Activation,
    head: OutputHead,
    generation: u64,
}

impl Mlp {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng>(
        sizes: &[usize],
        activation: Activation,
        head: OutputHead,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, activation, head)?;
        for l in &mut mlp.layers {
            let bound = 1.0 / (l.weights.nrows() as f64).sqrt();
            for v in l.weights.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            for v in l.bias.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize], activation: Activation, head: OutputHead) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::ConfigInvalid(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weights: Matrix::zeros(w[0], w[1]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            activation,
            head,
            generation: 0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable parameters; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn forward(&self, x: &Matrix) -> Result<MlpCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut hidden_out = Vec::with_capacity(n_layers - 1);
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &current * &layer.weights;
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
            inputs.push(current);
            if i + 1 < n_layers {
                let a = z.map(|v| self.activation.apply(v));
                pre.push(z);
                hidden_out.push(a.clone());
                current = a;
            } else {
                current = apply_head(self.head, self.activation, &z);
                pre.push(z);
            }
        }
        Ok(MlpCache {
            generation: self.generation,
            inputs,
            pre,
            hidden_out,
            output: current,
        })
    }

    /// Convenience forward returning only the output.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.output)
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "cache from generation {}, network at {}",
                cache.generation, self.generation
            )));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache("layer count differs".into()));
        }
        Ok(())
    }

    /// Backpropagates a gradient with respect to the network output.
    pub fn backward(&self, cache: &MlpCache, grad_output: &Matrix) -> Result<(MlpGrads, Matrix)> {
        self.check_cache(cache)?;
        if grad_output.shape() != cache.output.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.shape(),
                cache.output.shape()
            )));
        }
        let grad_logits = head_backward(self.head, self.activation, cache, grad_output);
        self.backward_logits(cache, &grad_logits)
    }

    /// Backpropagates a gradient with respect to the last layer's
    /// pre-head values; returns parameter gradients and the input gradient.
    pub fn backward_logits(&self, cache: &MlpCache, grad_logits: &Matrix) -> Result<(MlpGrads, Matrix)> {
        self.check_cache(cache)?;
        if grad_logits.shape() != cache.logits().shape() {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient {:?} vs logits {:?}",
                grad_logits.shape(),
                cache.logits().shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let gw = cache.inputs[i].transpose() * &delta;
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Dense { weights: gw, bias: gb });
            let grad_in = &delta * layer.weights.transpose();
            if i > 0 {
                let pre = &cache.pre[i - 1];
                let out = &cache.hidden_out[i - 1];
                delta = grad_in.zip_zip_map(pre, out, |g, p, o| g * self.activation.derivative(p, o));
            } else {
                delta = grad_in;
            }
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    /// `v <- momentum * v + grad; param <- param - lr * v`.
    pub fn sgd_step(&mut self, velocity: &mut MlpGrads, grads: &MlpGrads, lr: f64, momentum: f64) -> Result<()> {
        if !grads.same_shape(self) || !velocity.same_shape(self) {
            return Err(Error::ShapeMismatch("gradient shapes differ from parameters".into()));
        }
        velocity.scale(momentum);
        velocity.axpy(1.0, grads);
        for (p, v) in self.layers_mut().iter_mut().zip(&velocity.layers) {
            p.weights -= &v.weights * lr;
            p.bias.axpy(-lr, &v.bias, 1.0);
        }
        Ok(())
    }

    /// Text checkpoint: a header line of layer sizes, the activation and the
    /// head, then per layer the `fan_in` weight rows and one bias row.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "sizes,{}", sizes.join(","))?;
        writeln!(out, "activation,{}", self.activation.name())?;
        writeln!(out, "head,{}", self.head.name())?;
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                writeln!(out, "{}", join_f64(l.weights.row(r).iter()))?;
            }
            writeln!(out, "{}", join_f64(l.bias.iter()))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(lines: &mut LineReader<R>) -> Result<Self> {
        let sizes = lines.keyed("sizes")?;
        let sizes: Vec<usize> = sizes
            .iter()
            .map(|s| s.parse().map_err(|_| lines.error(format!("bad layer size {s:?}"))))
            .collect::<Result<_>>()?;
        let act = lines.keyed("activation")?;
        let activation = act
            .first()
            .and_then(|a| Activation::parse(a))
            .ok_or_else(|| lines.error("unknown activation".into()))?;
        let head = lines.keyed("head")?;
        let head = head
            .first()
            .and_then(|h| OutputHead::parse(h))
            .ok_or_else(|| lines.error("unknown head".into()))?;
        let mut mlp = Self::zeros(&sizes, activation, head)?;
        for l in &mut mlp.layers {
            let (fan_in, fan_out) = l.weights.shape();
            for r in 0..fan_in {
                let row = lines.floats(fan_out)?;
                for (c, v) in row.into_iter().enumerate() {
                    l.weights[(r, c)] = v;
                }
            }
            let bias = lines.floats(fan_out)?;
            l.bias = DVector::from_vec(bias);
        }
        Ok(mlp)
    }
}

fn join_f64<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Line cursor for the checkpoint format that reports 1-based line numbers.
pub struct LineReader<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(reader: R) -> Self {
        Self { inner: reader.lines(), line: 0 }
    }

    fn error(&self, message: String) -> Error {
        Error::Parse { line: self.line, message }
    }

    pub fn next_line(&mut self) -> Result<String> {
        loop {
            self.line += 1;
            match self.inner.next() {
                None => return Err(self.error("unexpected end of file".into())),
                Some(line) => {
                    let line = line?;
                    let trimmed = line.trim();
                    if trimmed.is_empty() || trimmed.starts_with('#') {
                        continue;
                    }
                    return Ok(trimmed.to_string());
                }
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut parts = line.split(',').map(|s| s.trim().to_string());
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            other => Err(self.error(format!("expected {key:?}, found {other:?}"))),
        }
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| self.error(format!("not a number: {s:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(self.error(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }
}

fn apply_head(head: OutputHead, activation: Activation, z: &Matrix) -> Matrix {
    match head {
        OutputHead::Linear => z.clone(),
        OutputHead::Activation => z.map(|v| activation.apply(v)),
        OutputHead::Sigmoid => z.map(sigmoid),
        OutputHead::Softmax => softmax_rows(z),
    }
}

fn head_backward(head: OutputHead, activation: Activation, cache: &MlpCache, grad_out: &Matrix) -> Matrix {
    let out = &cache.output;
    match head {
        OutputHead::Linear => grad_out.clone(),
        OutputHead::Activation => grad_out.zip_zip_map(cache.logits(), out, |g, p, o| {
            g * activation.derivative(p, o)
        }),
        OutputHead::Sigmoid => grad_out.zip_map(out, |g, o| g * o * (1.0 - o)),
        OutputHead::Softmax => softmax_backward(out, grad_out),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Maps a gradient with respect to softmax outputs `p` onto the logits:
/// `dL/dz_i = p_i (g_i - sum_j p_j g_j)`.
pub fn softmax_backward(probs: &Matrix, grad_probs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.nrows(), probs.ncols());
    for r in 0..probs.nrows() {
        let dot: f64 = (0..probs.ncols()).map(|c| probs[(r, c)] * grad_probs[(r, c)]).sum();
        for c in 0..probs.ncols() {
            out[(r, c)] = probs[(r, c)] * (grad_probs[(r, c)] - dot);
        }
    }
    out
}

/// What the discriminator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorInput {
    /// `g(x)`, as in DANN.
    Features,
    /// `h(g(x)) ⊗ g(x)`, as in CDAN.
    OuterProduct,
}

/// Layer sizes for the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// Hidden sizes of `g`; its last entry is the feature dimension.
    pub feature_layers: Vec<usize>,
    /// Hidden sizes of `d` between its input and the scalar output.
    pub discriminator_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            feature_layers: vec![64, 32],
            discriminator_hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

/// Momentum buffers and counters for the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub lr: f64,
    pub momentum: f64,
    pub velocity_g: MlpGrads,
    pub velocity_h: MlpGrads,
    pub velocity_d: MlpGrads,
    pub steps: u64,
}

/// Gradients for all three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub g: MlpGrads,
    pub h: MlpGrads,
    pub d: MlpGrads,
}

impl ModelGrads {
    pub fn zeros_like(state: &ModelState) -> Self {
        Self {
            g: MlpGrads::zeros_like(&state.g),
            h: MlpGrads::zeros_like(&state.h),
            d: MlpGrads::zeros_like(&state.d),
        }
    }
}

/// Which output [`ModelState::forward`] produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Features,
    Classify,
    DiscriminateZ,
    DiscriminateOuter,
}

/// Output of [`ModelState::forward`] with the caches needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Matrix,
    pub g: MlpCache,
    pub h: Option<MlpCache>,
    pub d: Option<MlpCache>,
}

/// Feature extractor, classifier, discriminator and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub g: Mlp,
    pub h: Mlp,
    pub d: Mlp,
    pub disc_input: DiscriminatorInput,
    pub optimizer: Optimizer,
}

impl ModelState {
    pub fn new<R: Rng>(
        input_dim: usize,
        k: usize,
        arch: &Architecture,
        disc_input: DiscriminatorInput,
        lr: f64,
        momentum: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if arch.feature_layers.is_empty() {
            return Err(Error::ConfigInvalid("feature extractor needs at least one layer".into()));
        }
        let mut g_sizes = vec![input_dim];
        g_sizes.extend(&arch.feature_layers);
        let z = *g_sizes.last().unwrap();
        let g = Mlp::new(&g_sizes, arch.activation, OutputHead::Activation, rng)?;
        let h = Mlp::new(&[z, k], arch.activation, OutputHead::Softmax, rng)?;
        let d_in = match disc_input {
            DiscriminatorInput::Features => z,
            DiscriminatorInput::OuterProduct => k * z,
        };
        let mut d_sizes = vec![d_in];
        d_sizes.extend(&arch.discriminator_hidden);
        d_sizes.push(1);
        let d = Mlp::new(&d_sizes, arch.activation, OutputHead::Sigmoid, rng)?;
        let optimizer = Optimizer {
            lr,
            momentum,
            velocity_g: MlpGrads::zeros_like(&g),
            velocity_h: MlpGrads::zeros_like(&h),
            velocity_d: MlpGrads::zeros_like(&d),
            steps: 0,
        };
        Ok(Self { g, h, d, disc_input, optimizer })
    }

    pub fn k(&self) -> usize {
        self.h.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.g.output_dim()
    }

    pub fn forward(&self, x: &Matrix, mode: ForwardMode) -> Result<ForwardPass> {
        let g = self.g.forward(x)?;
        match mode {
            ForwardMode::Features => Ok(ForwardPass { output: g.output.clone(), g, h: None, d: None }),
            ForwardMode::Classify => {
                let h = self.h.forward(&g.output)?;
                Ok(ForwardPass { output: h.output.clone(), g, h: Some(h), d: None })
            }
            ForwardMode::DiscriminateZ => {
                let d = self.d.forward(&g.output)?;
                Ok(ForwardPass { output: d.output.clone(), g, h: None, d: Some(d) })
            }
            ForwardMode::DiscriminateOuter => {
                let h = self.h.forward(&g.output)?;
                let outer = crate::losses::cdan_feature_map(&h.output, &g.output)?;
                let d = self.d.forward(&outer)?;
                Ok(ForwardPass { output: d.output.clone(), g, h: Some(h), d: Some(d) })
            }
        }
    }

    /// Applies one momentum-SGD step to every network.
    pub fn sgd_step(&mut self, grads: &ModelGrads) -> Result<()> {
        let (lr, m) = (self.optimizer.lr, self.optimizer.momentum);
        self.g.sgd_step(&mut self.optimizer.velocity_g, &grads.g, lr, m)?;
        self.h.sgd_step(&mut self.optimizer.velocity_h, &grads.h, lr, m)?;
        self.d.sgd_step(&mut self.optimizer.velocity_d, &grads.d, lr, m)?;
        self.optimizer.steps += 1;
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# gls-adapt checkpoint v1")?;
        let mode = match self.disc_input {
            DiscriminatorInput::Features => "features",
            DiscriminatorInput::OuterProduct => "outer",
        };
        writeln!(out, "discriminator_input,{mode}")?;
        for (name, mlp) in [("g", &self.g), ("h", &self.h), ("d", &self.d)] {
            writeln!(out, "network,{name}")?;
            mlp.write_checkpoint(out)?;
        }
        Ok(())
    }

    /// Restores parameters; the optimizer restarts with zero momentum and
    /// the given learning rate.
    pub fn read_checkpoint<R: BufRead>(reader: R, lr: f64, momentum: f64) -> Result<Self> {
        let mut lines = LineReader::new(reader);
        let mode = lines.keyed("discriminator_input")?;
        let disc_input = match mode.first().map(String::as_str) {
            Some("features") => DiscriminatorInput::Features,
            Some("outer") => DiscriminatorInput::OuterProduct,
            other => return Err(lines.error(format!("unknown discriminator input {other:?}"))),
        };
        let mut nets = Vec::new();
        for name in ["g", "h", "d"] {
            let found = lines.keyed("network")?;
            if found.first().map(String::as_str) != Some(name) {
                return Err(lines.error(format!("expected network {name}")));
            }
            nets.push(Mlp::read_checkpoint(&mut lines)?);
        }
        let d = nets.pop().unwrap();
        let h = nets.pop().unwrap();
        let g = nets.pop().unwrap();
        if h.input_dim() != g.output_dim() {
            return Err(Error::DimensionMismatch("classifier input differs from feature size".into()));
        }
        let optimizer = Optimizer {
            lr,
            momentum,
            velocity_g: MlpGrads::zeros_like(&g),
            velocity_h: MlpGrads::zeros_like(&h),
            velocity_d: MlpGrads::zeros_like(&d),
            steps: 0,
        };
        Ok(Self { g, h, d, disc_input, optimizer })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_classifies_uniformly() {
        let h = Mlp::zeros(&[4, 3], Activation::Tanh, OutputHead::Softmax).unwrap();
        let x = Matrix::from_fn(5, 4, |i, j| (i * 4 + j) as f64);
        let p = h.predict(&x).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn single_layer_hand_computation() {
        let mut net = Mlp::zeros(&[3, 1], Activation::Tanh, OutputHead::Activation).unwrap();
        net.layers_mut()[0].weights = Matrix::from_column_slice(3, 1, &[0.2, -0.5, 0.7]);
        net.layers_mut()[0].bias = DVector::from_vec(vec![0.1]);
        let x = Matrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let out = net.predict(&x).unwrap();
        assert!((out[(0, 0)] - (-0.5f64 + 0.1).tanh()).abs() < 1e-15);

        let mut sig = net.clone();
        sig.head = OutputHead::Sigmoid;
        let out = sig.predict(&x).unwrap();
        assert!((out[(0, 0)] - 1.0 / (1.0 + 0.4f64.exp())).abs() < 1e-15);
    }

    #[test]
    fn outer_product_discriminator_input_size() {
        let arch = Architecture { feature_layers: vec![4], discriminator_hidden: vec![5], activation: Activation::Tanh };
        let state = ModelState::new(2, 3, &arch, DiscriminatorInput::OuterProduct, 0.1, 0.9, &mut rng(1)).unwrap();
        assert_eq!(state.d.input_dim(), 12);
        let x = Matrix::from_fn(6, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let pass = state.forward(&x, ForwardMode::DiscriminateOuter).unwrap();
        assert_eq!(pass.output.shape(), (6, 1));
        assert!(pass.output.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = Mlp::new(&[3, 8, 4], Activation::Relu, OutputHead::Softmax, &mut rng(2)).unwrap();
        let x = Matrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let p = net.predict(&x).unwrap();
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        let extreme = Matrix::from_element(1, 3, 1e4);
        let p = net.predict(&extreme).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh, OutputHead::Linear).unwrap();
        assert!(matches!(net.forward(&Matrix::zeros(2, 4)), Err(Error::ShapeMismatch(_))));
        assert!(Mlp::zeros(&[3], Activation::Tanh, OutputHead::Linear).is_err());
    }

    // L = sum(R ∘ output) for a fixed random R; gradient checked by central differences.
    fn fd_check(net: &Mlp, x: &Matrix, seed: u64) {
        let mut r = rng(seed);
        let probe = Matrix::from_fn(x.nrows(), net.output_dim(), |_, _| r.gen_range(-1.0..1.0));
        let loss = |m: &Mlp| m.predict(x).unwrap().component_mul(&probe).sum();
        let cache = net.forward(x).unwrap();
        let (grads, grad_x) = net.backward(&cache, &probe).unwrap();
        let analytic = grads.flatten();
        let h = 1e-5;
        let mut idx = 0;
        for li in 0..net.layers.len() {
            let (rows, cols) = net.layers[li].weights.shape();
            for rr in 0..rows {
                for cc in 0..cols {
                    let mut p = net.clone();
                    p.layers[li].weights[(rr, cc)] += h;
                    let mut m = net.clone();
                    m.layers[li].weights[(rr, cc)] -= h;
                    let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                    assert_rel(analytic[idx], fd);
                    idx += 1;
                }
            }
            for bb in 0..cols {
                let mut p = net.clone();
                p.layers[li].bias[bb] += h;
                let mut m = net.clone();
                m.layers[li].bias[bb] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert_rel(analytic[idx], fd);
                idx += 1;
            }
        }
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fd = (net.predict(&xp).unwrap().component_mul(&probe).sum()
                    - net.predict(&xm).unwrap().component_mul(&probe).sum())
                    / (2.0 * h);
                assert_rel(grad_x[(i, j)], fd);
            }
        }
    }

    fn assert_rel(a: f64, b: f64) {
        let err = (a - b).abs() / (a.abs() + b.abs()).max(1e-6);
        assert!(err < 1e-4, "analytic {a} vs numeric {b}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = Matrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        for (seed, act, head) in [
            (1, Activation::Tanh, OutputHead::Softmax),
            (2, Activation::Tanh, OutputHead::Sigmoid),
            (3, Activation::Tanh, OutputHead::Activation),
            (4, Activation::Relu, OutputHead::Linear),
        ] {
            let out = if head == OutputHead::Sigmoid { 1 } else { 3 };
            let net = Mlp::new(&[3, 4, out], act, head, &mut rng(seed)).unwrap();
            fd_check(&net, &x, seed + 100);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Mlp::new(&[2, 2], Activation::Tanh, OutputHead::Linear, &mut rng(3)).unwrap();
        let cache = net.forward(&Matrix::zeros(1, 2)).unwrap();
        let grads = MlpGrads::zeros_like(&net);
        let mut vel = MlpGrads::zeros_like(&net);
        net.sgd_step(&mut vel, &grads, 0.1, 0.0).unwrap();
        assert!(matches!(
            net.backward(&cache, &Matrix::zeros(1, 2)),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn sgd_examples() {
        let net0 = Mlp::new(&[2, 3], Activation::Tanh, OutputHead::Linear, &mut rng(4)).unwrap();
        let mut grads = MlpGrads::zeros_like(&net0);
        for (i, v) in grads.layers[0].weights.iter_mut().enumerate() {
            *v = i as f64 * 0.1 - 0.2;
        }
        grads.layers[0].bias.fill(0.05);

        // momentum 0, lr 1: params decrease by the gradient
        let mut net = net0.clone();
        let mut vel = MlpGrads::zeros_like(&net);
        net.sgd_step(&mut vel, &grads, 1.0, 0.0).unwrap();
        let expected: Vec<f64> = net0.flatten().iter().zip(grads.flatten()).map(|(p, g)| p - g).collect();
        assert_eq!(net.flatten(), expected);

        // two steps with momentum 0.9: v1 = g, v2 = 0.9 g + g
        let mut net = net0.clone();
        let mut vel = MlpGrads::zeros_like(&net);
        let lr = 0.1;
        net.sgd_step(&mut vel, &grads, lr, 0.9).unwrap();
        net.sgd_step(&mut vel, &grads, lr, 0.9).unwrap();
        for ((p, p0), g) in net.flatten().iter().zip(net0.flatten()).zip(grads.flatten()) {
            let unrolled = p0 - lr * g - lr * (0.9 * g + g);
            assert!((p - unrolled).abs() < 1e-15);
        }

        // zero gradient leaves parameters unchanged
        let mut net = net0.clone();
        let mut vel = MlpGrads::zeros_like(&net);
        net.sgd_step(&mut vel, &MlpGrads::zeros_like(&net0), 0.5, 0.9).unwrap();
        assert_eq!(net.flatten(), net0.flatten());

        let other = Mlp::zeros(&[3, 3], Activation::Tanh, OutputHead::Linear).unwrap();
        let mut vel = MlpGrads::zeros_like(&net);
        assert!(net.sgd_step(&mut vel, &MlpGrads::zeros_like(&other), 0.1, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let arch = Architecture::default();
        let a = ModelState::new(2, 3, &arch, DiscriminatorInput::Features, 0.1, 0.9, &mut rng(9)).unwrap();
        let b = ModelState::new(2, 3, &arch, DiscriminatorInput::Features, 0.1, 0.9, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = Architecture::default();
        let state = ModelState::new(2, 3, &arch, DiscriminatorInput::OuterProduct, 0.1, 0.9, &mut rng(5)).unwrap();
        let mut buf = Vec::new();
        state.write_checkpoint(&mut buf).unwrap();
        let back = ModelState::read_checkpoint(buf.as_slice(), 0.1, 0.9).unwrap();
        assert_eq!(back, state);

        let text = String::from_utf8(buf).unwrap().replacen("sizes,2,64,32", "sizes,2,64,x", 1);
        match ModelState::read_checkpoint(text.as_bytes(), 0.1, 0.9) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
