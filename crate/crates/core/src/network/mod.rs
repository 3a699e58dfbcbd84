//! Feedforward networks with a single dropout gate.
//!
//! A network is a chain of dense layers. Exactly one layer has its *input*
//! gated: during training by a Bernoulli mask, during inference by either the
//! uniform keep-probability or a per-unit scale vector. Everything below the
//! gate is independent of the mask, so callers that evaluate many masks for
//! the same input compute [`gate_input`] once and re-run only the head with
//! [`forward_head`].

mod io;

pub use io::{load_model, read_model, save_model, write_model, Model, MODEL_FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::tensor::{self, check_len, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    /// Only valid on the final layer.
    Softmax,
}

impl Activation {
    fn apply(self, pre: &[f64]) -> Vector {
        match self {
            Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Linear => Vector::new(pre.to_vec()),
            Activation::Softmax => tensor::softmax(pre),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// Builds the layer list for an MLP: `widths[0]` inputs, hidden layers with
/// `hidden` activation, softmax output of width `widths.last()`.
pub fn mlp_spec(widths: &[usize], hidden: Activation) -> Vec<LayerSpec> {
    let last = widths.len().saturating_sub(2);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last { Activation::Softmax } else { hidden };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub activation: Activation,
    /// `output_dim × input_dim`.
    pub weights: Matrix,
    pub bias: Vector,
}

impl Layer {
    pub fn new(activation: Activation, weights: Matrix, bias: Vector) -> Result<Self> {
        check_len("layer bias", weights.rows(), bias.len())?;
        if !bias.is_finite() {
            return Err(Error::InvalidNetwork("bias has non-finite entries".into()));
        }
        Ok(Layer {
            activation,
            weights,
            bias,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.weights.cols(), self.weights.rows(), self.activation)
    }

    fn pre_activation(&self, input: &[f64]) -> Result<Vector> {
        let mut pre = self.weights.matvec(input)?;
        for (v, b) in pre.iter_mut().zip(self.bias.iter()) {
            *v += b;
        }
        Ok(pre)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        validate_specs(&layers.iter().map(Layer::spec).collect::<Vec<_>>())?;
        Ok(NetworkParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for optimizers; shapes must not change.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.rows()
    }

    pub fn has_softmax_output(&self) -> bool {
        self.layers[self.layers.len() - 1].activation == Activation::Softmax
    }
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidNetwork("network has no layers".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::InvalidNetwork(format!("layer {i} has a zero dimension")));
        }
        if s.activation == Activation::Softmax && i + 1 != specs.len() {
            return Err(Error::InvalidNetwork(format!(
                "softmax activation on layer {i}, only the final layer may use it"
            )));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::InvalidNetwork(format!(
                "layer {i} outputs {} values but layer {} expects {}",
                pair[0].output_dim,
                i + 1,
                pair[1].input_dim
            )));
        }
    }
    Ok(())
}

/// How kept activations are scaled at training time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// Kept units pass unchanged; inference multiplies by `p`.
    Classical,
    /// Kept units are multiplied by `1/p`; inference needs no scaling.
    Inverted,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Classical => "classical",
            Convention::Inverted => "inverted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "classical" => Some(Convention::Classical),
            "inverted" => Some(Convention::Inverted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutGate {
    position: usize,
    p: f64,
    convention: Convention,
}

impl DropoutGate {
    /// `position` is the index of the layer whose input is gated; `p` is the
    /// keep-probability.
    pub fn new(position: usize, p: f64, convention: Convention) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(DropoutGate {
            position,
            p,
            convention,
        })
    }

    /// Gate on the input of the output layer.
    pub fn before_output(params: &NetworkParams, p: f64, convention: Convention) -> Result<Self> {
        DropoutGate::new(params.layers().len() - 1, p, convention)
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn keep_prob(&self) -> f64 {
        self.p
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    /// Multiplier applied to kept units when a mask is active.
    pub fn mask_factor(&self) -> f64 {
        match self.convention {
            Convention::Classical => 1.0,
            Convention::Inverted => 1.0 / self.p,
        }
    }

    /// Per-unit scale that reproduces uniform weight scaling.
    pub fn uniform_scale(&self) -> f64 {
        match self.convention {
            Convention::Classical => self.p,
            Convention::Inverted => 1.0,
        }
    }

    /// Largest admissible scale entry (a kept unit's multiplier).
    pub fn scale_upper_bound(&self) -> f64 {
        self.mask_factor()
    }

    pub fn gated_width(&self, params: &NetworkParams) -> Result<usize> {
        self.check(params)?;
        Ok(params.layers()[self.position].weights.cols())
    }

    pub fn check(&self, params: &NetworkParams) -> Result<()> {
        if self.position >= params.layers().len() {
            return Err(Error::InvalidNetwork(format!(
                "dropout position {} but network has {} layers",
                self.position,
                params.layers().len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardMode {
    Plain,
    /// Binary mask; under the inverted convention kept units are also scaled by `1/p`.
    Masked(Vector),
    /// Per-unit scale applied as is.
    Scaled(Vector),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Plain,
    Masked,
    Scaled,
}

/// Activation record of one forward pass, starting at layer `start`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    start: usize,
    position: usize,
    kind: ModeKind,
    /// Ungated input of the gated layer.
    gate_input: Vector,
    /// Multiplier applied at the gate (absent for `Plain`).
    gate_factor: Option<Vector>,
    /// Input actually fed to each layer (after gating at `position`).
    inputs: Vec<Vector>,
    pre: Vec<Vector>,
    output: Vector,
}

impl ForwardCache {
    pub fn output(&self) -> &Vector {
        &self.output
    }

    pub fn kind(&self) -> ModeKind {
        self.kind
    }

    pub fn gate_input(&self) -> &Vector {
        &self.gate_input
    }

    /// Pre-activations of every cached layer, indexed from `start`.
    pub fn pre_activations(&self) -> &[Vector] {
        &self.pre
    }
}

/// Gate multiplier for a forward mode, validated against the gated width.
pub fn gate_factor(gate: &DropoutGate, mode: &ForwardMode, width: usize) -> Result<Option<Vector>> {
    match mode {
        ForwardMode::Plain => Ok(None),
        ForwardMode::Masked(mask) => {
            check_len("dropout mask", width, mask.len())?;
            let factor = gate.mask_factor();
            let mut out = Vec::with_capacity(width);
            for (index, &value) in mask.iter().enumerate() {
                if value != 0.0 && value != 1.0 {
                    return Err(Error::InvalidMask { index, value });
                }
                out.push(value * factor);
            }
            Ok(Some(Vector::new(out)))
        }
        ForwardMode::Scaled(s) => {
            check_len("scale vector", width, s.len())?;
            Ok(Some(s.clone()))
        }
    }
}

fn mode_kind(mode: &ForwardMode) -> ModeKind {
    match mode {
        ForwardMode::Plain => ModeKind::Plain,
        ForwardMode::Masked(_) => ModeKind::Masked,
        ForwardMode::Scaled(_) => ModeKind::Scaled,
    }
}

/// Evaluates the layers below the gate, returning the gated layer's raw input.
pub fn gate_input(params: &NetworkParams, gate: &DropoutGate, x: &[f64]) -> Result<Vector> {
    gate.check(params)?;
    check_len("network input", params.input_dim(), x.len())?;
    let mut z = Vector::new(x.to_vec());
    for layer in &params.layers()[..gate.position()] {
        let pre = layer.pre_activation(&z)?;
        z = layer.activation.apply(&pre);
    }
    Ok(z)
}

/// Evaluates the gated layer and everything above it for one gate multiplier.
///
/// `factor` of `None` means no gating. Cheaper than [`forward_head`] when no
/// gradient is needed.
pub fn head_output(
    params: &NetworkParams,
    gate: &DropoutGate,
    z: &[f64],
    factor: Option<&[f64]>,
) -> Result<Vector> {
    let mut current = match factor {
        Some(f) => {
            check_len("gate factor", z.len(), f.len())?;
            z.iter().zip(f).map(|(a, b)| a * b).collect()
        }
        None => Vector::new(z.to_vec()),
    };
    for layer in &params.layers()[gate.position()..] {
        let pre = layer.pre_activation(&current)?;
        current = layer.activation.apply(&pre);
    }
    Ok(current)
}

/// Full forward pass with an activation record for backprop.
pub fn forward(
    params: &NetworkParams,
    gate: &DropoutGate,
    mode: &ForwardMode,
    x: &[f64],
) -> Result<(Vector, ForwardCache)> {
    gate.check(params)?;
    check_len("network input", params.input_dim(), x.len())?;
    run(params, gate, mode, 0, Vector::new(x.to_vec()))
}

/// Forward pass of the head only, given the gated layer's raw input `z`.
///
/// The resulting cache supports [`backprop_scale`] but not [`backprop_params`].
pub fn forward_head(
    params: &NetworkParams,
    gate: &DropoutGate,
    mode: &ForwardMode,
    z: &[f64],
) -> Result<(Vector, ForwardCache)> {
    gate.check(params)?;
    run(params, gate, mode, gate.position(), Vector::new(z.to_vec()))
}

fn run(
    params: &NetworkParams,
    gate: &DropoutGate,
    mode: &ForwardMode,
    start: usize,
    input: Vector,
) -> Result<(Vector, ForwardCache)> {
    let layers = params.layers();
    let width = layers[gate.position()].weights.cols();
    let factor = gate_factor(gate, mode, width)?;

    let count = layers.len() - start;
    let mut inputs = Vec::with_capacity(count);
    let mut pre = Vec::with_capacity(count);
    let mut gate_in = Vector::default();
    let mut current = input;
    for (i, layer) in layers.iter().enumerate().skip(start) {
        if i == gate.position() {
            gate_in = current.clone();
            if let Some(f) = &factor {
                check_len("gated input", f.len(), current.len())?;
                for (c, m) in current.iter_mut().zip(f.iter()) {
                    *c *= m;
                }
            }
        }
        let p = layer.pre_activation(&current)?;
        let next = layer.activation.apply(&p);
        inputs.push(current);
        pre.push(p);
        current = next;
    }
    let cache = ForwardCache {
        start,
        position: gate.position(),
        kind: mode_kind(mode),
        gate_input: gate_in,
        gate_factor: factor,
        inputs,
        pre,
        output: current.clone(),
    };
    Ok((current, cache))
}

/// Loss gradient seed at the network output.
#[derive(Debug, Clone)]
pub enum OutputGrad<'a> {
    /// Cross-entropy of a softmax output against a class label.
    CrossEntropy(usize),
    /// Arbitrary upstream gradient `∂ℒ/∂output`.
    Upstream(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vector,
}

/// Gradients for every layer, shaped like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            layers: params
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: Vector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
            g.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

fn check_cache(params: &NetworkParams, cache: &ForwardCache) -> Result<()> {
    let layers = params.layers();
    if cache.start > cache.position
        || cache.position >= layers.len()
        || cache.inputs.len() != layers.len() - cache.start
    {
        return Err(Error::CacheMismatch("layer count differs from the network"));
    }
    for (layer, input) in layers[cache.start..].iter().zip(&cache.inputs) {
        if layer.weights.cols() != input.len() {
            return Err(Error::CacheMismatch("cached activations have the wrong width"));
        }
    }
    Ok(())
}

fn output_delta(params: &NetworkParams, cache: &ForwardCache, seed: &OutputGrad) -> Result<Vector> {
    let last = params.layers().len() - 1;
    let act = params.layers()[last].activation;
    let out = &cache.output;
    match *seed {
        OutputGrad::CrossEntropy(label) => {
            if act != Activation::Softmax {
                return Err(Error::LossRequiresSoftmax);
            }
            if label >= out.len() {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: out.len(),
                });
            }
            let mut delta = out.clone();
            delta[label] -= 1.0;
            Ok(delta)
        }
        OutputGrad::Upstream(g) => {
            check_len("upstream gradient", out.len(), g.len())?;
            let pre = &cache.pre[cache.pre.len() - 1];
            Ok(match act {
                Activation::Softmax => {
                    let gp = tensor::dot(g, out);
                    out.iter().zip(g).map(|(p, gi)| p * (gi - gp)).collect()
                }
                Activation::Relu => relu_mask(g, pre),
                Activation::Linear => Vector::new(g.to_vec()),
            })
        }
    }
}

// ReLU derivative at exactly zero is taken as zero.
fn relu_mask(g: &[f64], pre: &[f64]) -> Vector {
    g.iter()
        .zip(pre)
        .map(|(gi, &z)| if z > 0.0 { *gi } else { 0.0 })
        .collect()
}

/// Reverse pass. Parameter gradients are *added* into `grads` when given;
/// the scale gradient is returned when `want_scale` is set.
fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    seed: &OutputGrad,
    mut grads: Option<&mut Gradients>,
    want_scale: bool,
) -> Result<Option<Vector>> {
    check_cache(params, cache)?;
    let layers = params.layers();
    if let Some(g) = grads.as_deref() {
        if g.layers.len() != layers.len() {
            return Err(Error::CacheMismatch("gradient buffer does not match the network"));
        }
    }
    let want_params = grads.is_some();
    let mut scale = None;
    let mut delta = output_delta(params, cache, seed)?;

    for l in (cache.start..layers.len()).rev() {
        let local = l - cache.start;
        if let Some(g) = grads.as_deref_mut() {
            g.layers[l].weights.add_outer(1.0, &delta, &cache.inputs[local])?;
            for (b, d) in g.layers[l].bias.iter_mut().zip(delta.iter()) {
                *b += d;
            }
        }
        let below_needed = l > cache.start && (want_params || l > cache.position);
        let at_gate = l == cache.position;
        if !below_needed && !(at_gate && want_scale) {
            break;
        }
        let mut g_in = layers[l].weights.matvec_transposed(&delta)?;
        if at_gate {
            if want_scale {
                scale = Some(tensor::hadamard(&g_in, &cache.gate_input)?);
            }
            if let Some(f) = &cache.gate_factor {
                for (g, m) in g_in.iter_mut().zip(f.iter()) {
                    *g *= m;
                }
            }
        }
        if !below_needed {
            break;
        }
        delta = match layers[l - 1].activation {
            Activation::Relu => relu_mask(&g_in, &cache.pre[local - 1]),
            Activation::Linear => g_in,
            Activation::Softmax => unreachable!("softmax only on the final layer"),
        };
    }
    Ok(scale)
}

/// Cross-entropy gradients for every weight and bias. Gating enters the chain
/// rule as a constant multiplier.
pub fn backprop_params(params: &NetworkParams, cache: &ForwardCache, label: usize) -> Result<Gradients> {
    backprop_params_with(params, cache, &OutputGrad::CrossEntropy(label))
}

pub fn backprop_params_with(
    params: &NetworkParams,
    cache: &ForwardCache,
    seed: &OutputGrad,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(params);
    accumulate_params(params, cache, seed, &mut grads)?;
    Ok(grads)
}

/// Adds this example's parameter gradients into `grads`.
pub fn accumulate_params(
    params: &NetworkParams,
    cache: &ForwardCache,
    seed: &OutputGrad,
    grads: &mut Gradients,
) -> Result<()> {
    if cache.start != 0 {
        return Err(Error::CacheMismatch("parameter gradients need a full forward cache"));
    }
    backward(params, cache, seed, Some(grads), false).map(|_| ())
}

/// Cross-entropy gradient with respect to the scale vector:
/// `∂ℒ/∂s_k = z_k · (Wᵀδ)_k` at the gated layer.
pub fn backprop_scale(params: &NetworkParams, cache: &ForwardCache, label: usize) -> Result<Vector> {
    backprop_scale_with(params, cache, &OutputGrad::CrossEntropy(label))
}

pub fn backprop_scale_with(params: &NetworkParams, cache: &ForwardCache, seed: &OutputGrad) -> Result<Vector> {
    if cache.kind != ModeKind::Scaled {
        return Err(Error::CacheMismatch("scale gradient needs a Scaled forward pass"));
    }
    Ok(backward(params, cache, seed, None, true)?.expect("requested scale gradient"))
}
