//! Score-based classifiers.
//!
//! [`ScoreModel`] is the interface the attacks consume: per-class scores and
//! vector-Jacobian products back to the input. [`Network`] is the concrete
//! convolutional/dense ReLU network used as the attack target, with a
//! hand-written reverse pass.

mod checkpoint;
mod train;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::image::Shape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};
pub use train::{cross_entropy, train, train_with_log, training_batch, EpochStats, TrainConfig};

/// A differentiable classifier assigning one score per class.
pub trait ScoreModel: Sync {
    fn input_shape(&self) -> Shape;

    fn num_classes(&self) -> usize;

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Scores at `x` together with `d (upstream . scores) / dx`.
    fn vjp(&self, x: &[f64], upstream: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)>;

    fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }
}

/// A scalar function of the score vector together with its gradient.
pub trait ScoreObjective {
    /// Returns the objective value and `d value / d scores`.
    fn evaluate(&self, scores: &[f64]) -> (f64, Vec<f64>);
}

impl<F> ScoreObjective for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn evaluate(&self, scores: &[f64]) -> (f64, Vec<f64>) {
        self(scores)
    }
}

/// Result of differentiating an objective through a model.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scores: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Gradient of `objective(model(x))` with respect to the input `x`.
pub fn input_gradient<M, O>(model: &M, x: &[f64], objective: &O) -> Result<Evaluation>
where
    M: ScoreModel + ?Sized,
    O: ScoreObjective + ?Sized,
{
    let value = std::cell::Cell::new(0.0);
    let (scores, gradient) = model.vjp(x, &|s| {
        let (v, g) = objective.evaluate(s);
        value.set(v);
        g
    })?;
    Ok(Evaluation { scores, value: value.get(), gradient })
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// 2-D convolution without padding. Weights are laid out
/// `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels || input.height < self.kernel || input.width < self.kernel {
            return Err(Error::config(format!(
                "convolution expecting {} channels of at least {k}x{k} got {input:?}",
                self.in_channels,
                k = self.kernel
            )));
        }
        Ok(Shape::new(
            self.out_channels,
            (input.height - self.kernel) / self.stride + 1,
            (input.width - self.kernel) / self.stride + 1,
        ))
    }

    /// Unrolls every receptive field of `x` into a row of length
    /// `in_channels * kernel^2`, ordered like a weight row.
    fn patches(&self, input: Shape, output: Shape, x: &[f64]) -> Vec<f64> {
        let k = self.kernel;
        let (ih, iw) = (input.height, input.width);
        let row_len = self.in_channels * k * k;
        let mut cols = vec![0.0; output.height * output.width * row_len];
        for (p, row) in cols.chunks_exact_mut(row_len).enumerate() {
            let (oy, ox) = (p / output.width, p % output.width);
            for ic in 0..self.in_channels {
                for ky in 0..k {
                    let src = ic * ih * iw + (oy * self.stride + ky) * iw + ox * self.stride;
                    row[(ic * k + ky) * k..][..k].copy_from_slice(&x[src..src + k]);
                }
            }
        }
        cols
    }

    fn forward(&self, input: Shape, output: Shape, x: &[f64], out: &mut [f64]) {
        let row_len = self.in_channels * self.kernel * self.kernel;
        let cols = self.patches(input, output, x);
        let positions = output.height * output.width;
        for (oc, plane) in out.chunks_exact_mut(positions).enumerate() {
            let w = &self.weight[oc * row_len..(oc + 1) * row_len];
            for (acc, patch) in plane.iter_mut().zip(cols.chunks_exact(row_len)) {
                *acc = self.bias[oc] + dot(w, patch);
            }
        }
    }

    fn backward(
        &self,
        input: Shape,
        output: Shape,
        x: &[f64],
        d_out: &[f64],
        d_in: &mut [f64],
        grads: Option<&mut LayerGrad>,
    ) {
        let k = self.kernel;
        let (ih, iw) = (input.height, input.width);
        let row_len = self.in_channels * k * k;
        let positions = output.height * output.width;
        let cols = self.patches(input, output, x);

        if let Some(g) = grads {
            for oc in 0..self.out_channels {
                let g_plane = &d_out[oc * positions..(oc + 1) * positions];
                g.bias[oc] += g_plane.iter().sum::<f64>();
                let gw = &mut g.weight[oc * row_len..(oc + 1) * row_len];
                for (&go, patch) in g_plane.iter().zip(cols.chunks_exact(row_len)) {
                    if go != 0.0 {
                        axpy(go, patch, gw);
                    }
                }
            }
        }

        let mut d_cols = vec![0.0; cols.len()];
        for oc in 0..self.out_channels {
            let w = &self.weight[oc * row_len..(oc + 1) * row_len];
            let g_plane = &d_out[oc * positions..(oc + 1) * positions];
            for (&go, d_patch) in g_plane.iter().zip(d_cols.chunks_exact_mut(row_len)) {
                if go != 0.0 {
                    axpy(go, w, d_patch);
                }
            }
        }
        d_in.fill(0.0);
        for (p, row) in d_cols.chunks_exact(row_len).enumerate() {
            let (oy, ox) = (p / output.width, p % output.width);
            for ic in 0..self.in_channels {
                for ky in 0..k {
                    let dst = ic * ih * iw + (oy * self.stride + ky) * iw + ox * self.stride;
                    for (d, v) in d_in[dst..dst + k].iter_mut().zip(&row[(ic * k + ky) * k..][..k]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Fully connected layer over the flattened input. Weights are laid out
/// `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, acc) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *acc = self.bias[o] + dot(row, x);
        }
    }

    fn backward(&self, x: &[f64], d_out: &[f64], d_in: &mut [f64], grads: Option<&mut LayerGrad>) {
        d_in.fill(0.0);
        let mut grads = grads;
        for (o, &g) in d_out.iter().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            if g != 0.0 {
                for (d, w) in d_in.iter_mut().zip(row) {
                    *d += w * g;
                }
            }
            if let Some(gr) = grads.as_deref_mut() {
                gr.bias[o] += g;
                let g_row = &mut gr.weight[o * self.inputs..(o + 1) * self.inputs];
                for (gw, v) in g_row.iter_mut().zip(x) {
                    *gw += v * g;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
}

/// Parameter gradients for one layer; empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Layer recipe used to build a randomly initialized [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// `filters` output channels, square `kernel`, `stride`, followed by ReLU.
    Conv { filters: usize, kernel: usize, stride: usize },
    /// Fully connected hidden layer of `units`, followed by ReLU.
    Dense { units: usize },
}

/// Network presets for 28x28 grayscale digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Two strided 3x3 convolutions (16 and 32 filters), a 64-unit dense
    /// layer and a linear head.
    Desk,
    /// Three strided 3x3 convolutions (64, 128, 256 filters), a 128-unit
    /// dense layer and a linear head.
    Wide,
}

impl Architecture {
    pub fn layers(self) -> Vec<LayerSpec> {
        let conv = |filters| LayerSpec::Conv { filters, kernel: 3, stride: 2 };
        match self {
            Architecture::Desk => vec![conv(16), conv(32), LayerSpec::Dense { units: 64 }],
            Architecture::Wide => vec![conv(64), conv(128), conv(256), LayerSpec::Dense { units: 128 }],
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Architecture::Desk),
            "wide" => Ok(Architecture::Wide),
            other => Err(Error::config(format!("unknown architecture {other:?} (expected desk or wide)"))),
        }
    }
}

/// A feed-forward ReLU network ending in a linear layer with one output per
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape,
    layers: Vec<Layer>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the
    /// output shape.
    shapes: Vec<Shape>,
}

impl Network {
    /// Assembles a network from explicit layers, validating that the shapes
    /// chain and that the last layer is dense.
    pub fn from_layers(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::Empty);
        }
        let mut shapes = vec![input];
        let mut cur = input;
        for layer in &layers {
            cur = match layer {
                Layer::Conv2d(c) => {
                    check_len(c.out_channels * c.in_channels * c.kernel * c.kernel, c.weight.len())?;
                    check_len(c.out_channels, c.bias.len())?;
                    if c.stride == 0 || c.kernel == 0 {
                        return Err(Error::config("convolution kernel and stride must be positive"));
                    }
                    c.output_shape(cur)?
                }
                Layer::Dense(d) => {
                    check_len(cur.len(), d.inputs)?;
                    check_len(d.inputs * d.outputs, d.weight.len())?;
                    check_len(d.outputs, d.bias.len())?;
                    Shape::new(d.outputs, 1, 1)
                }
                Layer::Relu => cur,
            };
            shapes.push(cur);
        }
        match layers.last() {
            Some(Layer::Dense(d)) if d.outputs >= 2 => {}
            _ => return Err(Error::config("network must end in a dense layer with at least two outputs")),
        }
        Ok(Self { input, layers, shapes })
    }

    /// Random He-uniform initialization of `hidden` followed by a linear head.
    pub fn random<R: Rng + ?Sized>(input: Shape, hidden: &[LayerSpec], classes: usize, rng: &mut R) -> Result<Self> {
        let mut layers = Vec::new();
        let mut cur = input;
        for spec in hidden {
            match *spec {
                LayerSpec::Conv { filters, kernel, stride } => {
                    let fan_in = cur.channels * kernel * kernel;
                    let conv = Conv2d {
                        in_channels: cur.channels,
                        out_channels: filters,
                        kernel,
                        stride,
                        weight: he_uniform(rng, fan_in, filters * fan_in),
                        bias: vec![0.0; filters],
                    };
                    cur = conv.output_shape(cur)?;
                    layers.push(Layer::Conv2d(conv));
                }
                LayerSpec::Dense { units } => {
                    layers.push(Layer::Dense(dense(rng, cur.len(), units)));
                    cur = Shape::new(units, 1, 1);
                }
            }
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Dense(dense(rng, cur.len(), classes)));
        Self::from_layers(input, layers)
    }

    pub fn with_architecture<R: Rng + ?Sized>(arch: Architecture, input: Shape, classes: usize, rng: &mut R) -> Result<Self> {
        Self::random(input, &arch.layers(), classes, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
                Layer::Dense(d) => d.weight.len() + d.bias.len(),
                Layer::Relu => 0,
            })
            .sum()
    }

    /// Activations after every layer; `trace[0]` is the input.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len(self.input.len(), x.len())?;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = &trace[i];
            let mut out = vec![0.0; self.shapes[i + 1].len()];
            match layer {
                Layer::Conv2d(c) => c.forward(self.shapes[i], self.shapes[i + 1], prev, &mut out),
                Layer::Dense(d) => d.forward(prev, &mut out),
                Layer::Relu => {
                    for (o, &v) in out.iter_mut().zip(prev) {
                        *o = v.max(0.0);
                    }
                }
            }
            trace.push(out);
        }
        Ok(trace)
    }

    /// Reverse pass from `d_scores`. Returns the input gradient and, when
    /// `param_grads` is given, accumulates parameter gradients into it.
    pub fn backward(
        &self,
        trace: &[Vec<f64>],
        d_scores: &[f64],
        mut param_grads: Option<&mut [LayerGrad]>,
    ) -> Result<Vec<f64>> {
        check_len(self.layers.len() + 1, trace.len())?;
        check_len(self.num_classes(), d_scores.len())?;
        let mut grad = d_scores.to_vec();
        for i in (0..self.layers.len()).rev() {
            let input = &trace[i];
            let mut d_in = vec![0.0; input.len()];
            let lg = param_grads.as_deref_mut().map(|g| &mut g[i]);
            match &self.layers[i] {
                Layer::Conv2d(c) => c.backward(self.shapes[i], self.shapes[i + 1], input, &grad, &mut d_in, lg),
                Layer::Dense(d) => d.backward(input, &grad, &mut d_in, lg),
                // Subgradient 0 at the kink.
                Layer::Relu => {
                    for ((d, &g), &v) in d_in.iter_mut().zip(&grad).zip(input) {
                        *d = if v > 0.0 { g } else { 0.0 };
                    }
                }
            }
            grad = d_in;
        }
        Ok(grad)
    }

    /// Zeroed gradient buffers matching the parameter layout.
    pub fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => LayerGrad { weight: vec![0.0; c.weight.len()], bias: vec![0.0; c.bias.len()] },
                Layer::Dense(d) => LayerGrad { weight: vec![0.0; d.weight.len()], bias: vec![0.0; d.bias.len()] },
                Layer::Relu => LayerGrad::default(),
            })
            .collect()
    }

    /// Sign pattern of every ReLU input (true where strictly positive).
    /// Two points with equal patterns lie in the same linear piece.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let trace = self.forward_trace(x)?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu))
            .flat_map(|(i, _)| trace[i].iter().map(|v| *v > 0.0).collect::<Vec<_>>())
            .collect())
    }
}

impl ScoreModel for Network {
    fn input_shape(&self) -> Shape {
        self.input
    }

    fn num_classes(&self) -> usize {
        self.shapes.last().map_or(0, Shape::len)
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.pop().unwrap_or_default())
    }

    fn vjp(&self, x: &[f64], upstream: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let scores = trace[trace.len() - 1].clone();
        let d_scores = upstream(&scores);
        let grad = self.backward(&trace, &d_scores, None)?;
        Ok((scores, grad))
    }
}

fn he_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, count: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn dense<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Dense {
    Dense { inputs, outputs, weight: he_uniform(rng, inputs, inputs * outputs), bias: vec![0.0; outputs] }
}
