//! Approximations of the dropout inference expectation.
//!
//! * uniform weight scaling: gated inputs multiplied by `p` (classical) or
//!   left alone (inverted, the `1/p` was applied during training);
//! * Monte Carlo: `N` sampled submodels combined by arithmetic or geometric mean;
//! * non-uniform scaling: gated inputs multiplied by a per-unit scale vector.
//!
//! Uniform scaling and MC arithmetic average all submodels with equal weight,
//! like bagging. A non-uniform scale vector weights units (and so submodels)
//! unequally, closer to a boosted combination.

use crate::error::{Error, Result};
use crate::network::{gate_input, head_output, DropoutGate, NetworkParams};
use crate::oracle::{self, clamped_log, require_distribution, MaskEnumeration};
use crate::tensor::{normalize_log, stream_id, Accumulator, RngStream, Vector};

/// Slack allowed on the scale-vector box before it is rejected.
pub const SCALE_BOUND_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `samples` masks drawn from Bernoulli(p); sample `k` uses stream `("mc", k)`.
    Random,
    /// Every mask exactly once, weighted by its probability. `samples` is ignored.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub mean: MeanKind,
    pub sampling: Sampling,
}

impl McConfig {
    pub fn arithmetic(samples: usize, seed: u64) -> Self {
        McConfig {
            samples,
            seed,
            mean: MeanKind::Arithmetic,
            sampling: Sampling::Random,
        }
    }

    pub fn geometric(samples: usize, seed: u64) -> Self {
        McConfig {
            mean: MeanKind::Geometric,
            ..McConfig::arithmetic(samples, seed)
        }
    }

    pub fn exhaustive(mut self) -> Self {
        self.sampling = Sampling::Exhaustive;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Which output approximation to apply.
#[derive(Debug, Clone, PartialEq)]
pub enum InferenceMode {
    ExactArithmetic,
    ExactGeometric,
    WeightScaling,
    MonteCarlo(McConfig),
    NonUniform(Vector),
}

pub fn predict(params: &NetworkParams, gate: &DropoutGate, x: &[f64], mode: &InferenceMode) -> Result<Vector> {
    match mode {
        InferenceMode::ExactArithmetic => oracle::exact_arithmetic(params, gate, x),
        InferenceMode::ExactGeometric => oracle::exact_geometric(params, gate, x),
        InferenceMode::WeightScaling => predict_weight_scaled(params, gate, x),
        InferenceMode::MonteCarlo(cfg) => predict_mc(params, gate, x, cfg),
        InferenceMode::NonUniform(s) => predict_scaled(params, gate, s, x),
    }
}

/// Uniform weight scaling.
pub fn predict_weight_scaled(params: &NetworkParams, gate: &DropoutGate, x: &[f64]) -> Result<Vector> {
    let z = gate_input(params, gate, x)?;
    weight_scaled_head(params, gate, &z)
}

pub(crate) fn weight_scaled_head(params: &NetworkParams, gate: &DropoutGate, z: &[f64]) -> Result<Vector> {
    let s = vec![gate.uniform_scale(); z.len()];
    head_output(params, gate, z, Some(&s))
}

/// Checks `s` against the box `[0, u]` of the gate's convention.
pub fn check_scale(gate: &DropoutGate, s: &[f64]) -> Result<()> {
    let upper = gate.scale_upper_bound();
    for (index, &value) in s.iter().enumerate() {
        if !(value >= -SCALE_BOUND_TOLERANCE && value <= upper + SCALE_BOUND_TOLERANCE) {
            return Err(Error::InfeasibleScale {
                index,
                value,
                lower: 0.0,
                upper,
            });
        }
    }
    Ok(())
}

/// Non-uniform scaling with scale vector `s`.
pub fn predict_scaled(params: &NetworkParams, gate: &DropoutGate, s: &[f64], x: &[f64]) -> Result<Vector> {
    let z = gate_input(params, gate, x)?;
    scaled_head(params, gate, s, &z)
}

pub(crate) fn scaled_head(params: &NetworkParams, gate: &DropoutGate, s: &[f64], z: &[f64]) -> Result<Vector> {
    crate::tensor::check_len("scale vector", z.len(), s.len())?;
    check_scale(gate, s)?;
    head_output(params, gate, z, Some(s))
}

/// Outputs of the individual sampled submodels, in sample order.
pub fn submodel_outputs(
    params: &NetworkParams,
    gate: &DropoutGate,
    x: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vector>> {
    let z = gate_input(params, gate, x)?;
    let mut eval = oracle::submodel(params, gate, &z);
    (0..samples as u64)
        .map(|k| eval(&sample_mask(seed, k, z.len(), gate.keep_prob())?))
        .collect()
}

/// Mask of Monte Carlo sample `k`; independent of how many samples are drawn.
pub fn sample_mask(seed: u64, k: u64, n: usize, p: f64) -> Result<Vector> {
    RngStream::new(seed, stream_id("mc", k)).bernoulli_mask(n, p)
}

/// Monte Carlo average over sampled submodels.
pub fn predict_mc(params: &NetworkParams, gate: &DropoutGate, x: &[f64], cfg: &McConfig) -> Result<Vector> {
    let z = gate_input(params, gate, x)?;
    mc_head(params, gate, &z, cfg)
}

pub(crate) fn mc_head(params: &NetworkParams, gate: &DropoutGate, z: &Vector, cfg: &McConfig) -> Result<Vector> {
    if cfg.mean == MeanKind::Geometric {
        require_distribution(params)?;
    }
    let mut eval = oracle::submodel(params, gate, z);
    if cfg.sampling == Sampling::Exhaustive {
        let enumeration = MaskEnumeration::new(z.len(), gate.keep_prob())?;
        return match cfg.mean {
            MeanKind::Arithmetic => enumeration.arithmetic_mean(eval),
            MeanKind::Geometric => enumeration.geometric_mean(eval),
        };
    }
    if cfg.samples == 0 {
        return Err(Error::InvalidConfig("Monte Carlo needs at least one sample".into()));
    }
    let weight = 1.0 / cfg.samples as f64;
    let mut acc: Option<Accumulator> = None;
    for k in 0..cfg.samples as u64 {
        let out = eval(&sample_mask(cfg.seed, k, z.len(), gate.keep_prob())?)?;
        let values = match cfg.mean {
            MeanKind::Arithmetic => out.into_inner(),
            MeanKind::Geometric => clamped_log(&out),
        };
        acc.get_or_insert_with(|| Accumulator::new(values.len()))
            .add_scaled(weight, &values);
    }
    let mean = acc.expect("samples >= 1").finish();
    Ok(match cfg.mean {
        MeanKind::Arithmetic => mean,
        MeanKind::Geometric => normalize_log(&mean),
    })
}

/// Fraction of examples whose argmax prediction differs from the label.
pub fn error_rate(predictions: &[Vector], labels: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let wrong = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &l)| p.argmax() != l)
        .count();
    wrong as f64 / predictions.len() as f64
}
