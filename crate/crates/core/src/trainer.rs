//! Mini-batch training with sampled dropout masks.
//!
//! One Bernoulli mask is drawn per example per presentation. After every
//! epoch the network is scored on the validation set with uniform weight
//! scaling, and the best-scoring snapshot is kept. When `p = 1` no masks are
//! drawn at all, so the run is exactly a dropout-free run with the same seed.
//!
//! Random streams (all keyed by `TrainConfig::seed`):
//! `("init", layer)`, `("shuffle", epoch)`, `("mask", epoch)`.

use std::io::Write;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{error_rate, weight_scaled_head};
use crate::network::{
    accumulate_params, forward, gate_input, validate_specs, DropoutGate, ForwardMode, Gradients, Layer,
    LayerSpec, NetworkParams, OutputGrad,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{cross_entropy, RngStream, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// SGD, learning rate 0.01, momentum 0.9, batches of 32, at most 64 epochs,
    /// patience 8.
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::sgd_momentum(0.9),
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 64,
            early_stop_patience: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub epoch: usize,
    pub val_error: f64,
}

/// He-uniform initialization: weights `U(−a, a)` with `a = √(6 / fan_in)`,
/// biases zero.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<NetworkParams> {
    validate_specs(specs)?;
    let layers = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let limit = (6.0 / s.input_dim as f64).sqrt();
            let mut rng = RngStream::for_purpose(seed, "init", i as u64);
            let w = (0..s.input_dim * s.output_dim)
                .map(|_| rng.uniform(-limit, limit))
                .collect();
            let weights = crate::tensor::Matrix::new(s.output_dim, s.input_dim, w)?;
            Layer::new(s.activation, weights, Vector::zeros(s.output_dim))
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(layers)
}

/// Validation error of `params` with uniform weight scaling.
pub fn weight_scaled_error(params: &NetworkParams, gate: &DropoutGate, ds: &Dataset) -> Result<f64> {
    let preds = ds
        .features()
        .iter()
        .map(|x| {
            let z = gate_input(params, gate, x)?;
            weight_scaled_head(params, gate, &z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(error_rate(&preds, ds.labels()))
}

fn check_data(params: &NetworkParams, train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    for ds in [train, val] {
        if ds.dim() != params.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "dataset features vs network input",
                expected: params.input_dim(),
                actual: ds.dim(),
            });
        }
        if ds.class_count() > params.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "dataset classes vs network output",
                expected: params.output_dim(),
                actual: ds.class_count(),
            });
        }
    }
    Ok(())
}

/// Trains from a fresh initialization of `specs`.
pub fn train(
    specs: &[LayerSpec],
    gate: &DropoutGate,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<Checkpoint> {
    let params = init_params(specs, cfg.seed)?;
    train_from(params, gate, train_set, val_set, cfg, log)
}

/// Trains starting from `params`. The initial network is scored as epoch 0.
pub fn train_from(
    mut params: NetworkParams,
    gate: &DropoutGate,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    gate.check(&params)?;
    check_data(&params, train_set, val_set)?;

    let mut emit = |line: String| -> Result<()> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        Ok(())
    };
    emit("epoch,train_loss,val_error".into())?;

    let initial_error = weight_scaled_error(&params, gate, val_set)?;
    emit(format!("0,,{initial_error}"))?;
    let mut best = Checkpoint {
        params: params.clone(),
        epoch: 0,
        val_error: initial_error,
    };

    let sizes: Vec<usize> = params
        .layers()
        .iter()
        .flat_map(|l| [l.weights.as_slice().len(), l.bias.len()])
        .collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &sizes)?;
    let width = gate.gated_width(&params)?;
    let dropout_active = gate.keep_prob() < 1.0;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        RngStream::for_purpose(cfg.seed, "shuffle", epoch as u64).shuffle(&mut order);
        let mut masks = RngStream::for_purpose(cfg.seed, "mask", epoch as u64);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&params);
            for &i in batch {
                let x = &train_set.features()[i];
                let label = train_set.labels()[i];
                let mode = if dropout_active {
                    ForwardMode::Masked(masks.bernoulli_mask(width, gate.keep_prob())?)
                } else {
                    ForwardMode::Plain
                };
                let (probs, cache) = forward(&params, gate, &mode, x)?;
                let loss = cross_entropy(&probs, label)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite loss on example {i}"),
                    });
                }
                loss_sum += loss;
                accumulate_params(&params, &cache, &OutputGrad::CrossEntropy(label), &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.begin_step();
            for (l, (layer, g)) in params.layers_mut().iter_mut().zip(&grads.layers).enumerate() {
                opt.update(2 * l, layer.weights.as_mut_slice(), g.weights.as_slice());
                opt.update(2 * l + 1, &mut layer.bias, &g.bias);
            }
        }
        if params
            .layers()
            .iter()
            .any(|l| !l.bias.is_finite() || l.weights.as_slice().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged {
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let val_error = weight_scaled_error(&params, gate, val_set)?;
        emit(format!("{epoch},{train_loss},{val_error}"))?;
        if val_error < best.val_error {
            best = Checkpoint {
                params: params.clone(),
                epoch,
                val_error,
            };
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(best)
}
