//! Exact dropout inference by enumerating every mask of the gate.
//!
//! Ground truth for the approximations in [`crate::inference`]. Masks are
//! enumerated in index order (bit `k` of the index is unit `k`) and reduced
//! with a compensated accumulator, so results are deterministic.

use crate::error::{Error, Result};
use crate::inference::{self, InferenceMode};
use crate::network::{gate_input, head_output, DropoutGate, NetworkParams};
use crate::tensor::{normalize_log, Accumulator, Vector};

/// Widest gate the oracle will enumerate (2²² ≈ 4.2M head evaluations).
pub const MAX_ENUMERATION_WIDTH: usize = 22;

/// Floor applied to log-probabilities in geometric means.
pub const LOG_PROB_FLOOR: f64 = -690.0;

/// All `2ⁿ` masks of an `n`-unit gate with keep-probability `p`.
#[derive(Debug, Clone)]
pub struct MaskEnumeration {
    n: usize,
    p: f64,
    // weight of a mask with k kept units, k = 0..=n
    by_count: Vec<f64>,
}

impl MaskEnumeration {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if n > MAX_ENUMERATION_WIDTH {
            return Err(Error::WidthCapExceeded {
                width: n,
                cap: MAX_ENUMERATION_WIDTH,
            });
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        let by_count = (0..=n)
            .map(|k| p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
            .collect();
        Ok(MaskEnumeration { n, p, by_count })
    }

    pub fn width(&self) -> usize {
        self.n
    }

    pub fn keep_prob(&self) -> f64 {
        self.p
    }

    pub fn count(&self) -> u64 {
        1u64 << self.n
    }

    /// `p^‖d‖₀ (1−p)^(n−‖d‖₀)`.
    pub fn weight(&self, index: u64) -> f64 {
        self.by_count[index.count_ones() as usize]
    }

    pub fn mask(&self, index: u64) -> Vector {
        (0..self.n)
            .map(|k| if index >> k & 1 == 1 { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        let mut acc = Accumulator::new(1);
        for i in 0..self.count() {
            acc.add_scaled(self.weight(i), &[1.0]);
        }
        acc.finish()[0]
    }

    /// `Σ_d Pr(d) · F(d)`. Masks with zero weight are skipped.
    pub fn arithmetic_mean<F>(&self, mut submodel: F) -> Result<Vector>
    where
        F: FnMut(&Vector) -> Result<Vector>,
    {
        let mut acc: Option<Accumulator> = None;
        for i in 0..self.count() {
            let w = self.weight(i);
            if w == 0.0 {
                continue;
            }
            let out = submodel(&self.mask(i))?;
            acc.get_or_insert_with(|| Accumulator::new(out.len()))
                .add_scaled(w, &out);
        }
        Ok(acc.expect("at least one mask has positive weight").finish())
    }

    /// `exp(Σ_d Pr(d) · log F(d))`, renormalized to sum to one.
    pub fn geometric_mean<F>(&self, mut submodel: F) -> Result<Vector>
    where
        F: FnMut(&Vector) -> Result<Vector>,
    {
        let mut acc: Option<Accumulator> = None;
        for i in 0..self.count() {
            let w = self.weight(i);
            if w == 0.0 {
                continue;
            }
            let logs = clamped_log(&submodel(&self.mask(i))?);
            acc.get_or_insert_with(|| Accumulator::new(logs.len()))
                .add_scaled(w, &logs);
        }
        Ok(normalize_log(
            &acc.expect("at least one mask has positive weight").finish(),
        ))
    }
}

pub(crate) fn clamped_log(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln().max(LOG_PROB_FLOOR) } else { LOG_PROB_FLOOR })
        .collect()
}

pub(crate) fn require_distribution(params: &NetworkParams) -> Result<()> {
    if params.has_softmax_output() {
        Ok(())
    } else {
        Err(Error::InvalidNetwork(
            "geometric means need a softmax output layer".into(),
        ))
    }
}

fn enumeration_for(params: &NetworkParams, gate: &DropoutGate) -> Result<MaskEnumeration> {
    MaskEnumeration::new(gate.gated_width(params)?, gate.keep_prob())
}

/// Submodel evaluator for a fixed input: the part below the gate runs once.
pub(crate) fn submodel<'a>(
    params: &'a NetworkParams,
    gate: &'a DropoutGate,
    z: &'a Vector,
) -> impl FnMut(&Vector) -> Result<Vector> + 'a {
    let factor = gate.mask_factor();
    let mut scaled = vec![0.0; z.len()];
    move |mask: &Vector| {
        for (s, m) in scaled.iter_mut().zip(mask.iter()) {
            *s = m * factor;
        }
        head_output(params, gate, z, Some(&scaled))
    }
}

/// The dropout inference expectation `E_d[F(x, d)]`, computed exactly.
pub fn exact_arithmetic(params: &NetworkParams, gate: &DropoutGate, x: &[f64]) -> Result<Vector> {
    let enumeration = enumeration_for(params, gate)?;
    let z = gate_input(params, gate, x)?;
    enumeration.arithmetic_mean(submodel(params, gate, &z))
}

/// Probability-weighted geometric mean over all submodels, renormalized.
pub fn exact_geometric(params: &NetworkParams, gate: &DropoutGate, x: &[f64]) -> Result<Vector> {
    require_distribution(params)?;
    let enumeration = enumeration_for(params, gate)?;
    let z = gate_input(params, gate, x)?;
    enumeration.geometric_mean(submodel(params, gate, &z))
}

/// `|method(x) − exact_arithmetic(x)|` per output entry.
pub fn approximation_gap(
    params: &NetworkParams,
    gate: &DropoutGate,
    x: &[f64],
    method: &InferenceMode,
) -> Result<Vector> {
    let exact = exact_arithmetic(params, gate, x)?;
    let approx = inference::predict(params, gate, x, method)?;
    Ok(exact
        .iter()
        .zip(approx.iter())
        .map(|(a, b)| (a - b).abs())
        .collect())
}
