//! Non-uniform scale vectors by penalized, reparametrized optimization.
//!
//! The scale vector `s` must satisfy `mean(s) = m` and `0 ≤ s_k ≤ u`. The mean
//! constraint is built in by writing `s = e − mean(e) + m` for a free vector
//! `e`; the box is enforced softly by the hinge penalty
//! `Σ_k λ_k (max(0, s_k − u) − min(0, s_k))`. The objective is minimized over
//! `e` with mini-batch Adam on the training data, and after every epoch the
//! current `s` (repaired to be strictly feasible) is scored on validation
//! data. Optimization starts from `e = 0`, i.e. uniform weight scaling, and
//! that starting point is a selection candidate too.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{error_rate, scaled_head};
use crate::network::{forward_head, gate_input, backprop_scale, Convention, DropoutGate, ForwardMode, NetworkParams};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{cross_entropy, stable_mean, stable_sum, RngStream, Vector};

pub const DEFAULT_LAMBDA: f64 = 10_000.0;
pub const REPAIR_TOLERANCE: f64 = 1e-9;
pub const REPAIR_MAX_ITERATIONS: usize = 100;

/// `mean(s) = mean_target`, `0 ≤ s_k ≤ upper_bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSet {
    mean_target: f64,
    upper_bound: f64,
}

impl ConstraintSet {
    pub fn new(mean_target: f64, upper_bound: f64) -> Result<Self> {
        if !(mean_target > 0.0 && mean_target <= upper_bound && upper_bound.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale constraints need 0 < mean ({mean_target}) <= upper bound ({upper_bound})"
            )));
        }
        Ok(ConstraintSet {
            mean_target,
            upper_bound,
        })
    }

    /// Classical: mean `p`, bound 1. Inverted: mean 1, bound `1/p`.
    pub fn for_gate(gate: &DropoutGate) -> Result<Self> {
        let p = gate.keep_prob();
        match gate.convention() {
            Convention::Classical => ConstraintSet::new(p, 1.0),
            Convention::Inverted => ConstraintSet::new(1.0, 1.0 / p),
        }
    }

    /// `m = u` (keep probability 1): the only feasible vector is uniform.
    pub fn is_degenerate(&self) -> bool {
        self.mean_target == self.upper_bound
    }

    pub fn mean_target(&self) -> f64 {
        self.mean_target
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    /// Largest distance of any entry outside `[0, u]`.
    pub fn box_violation(&self, s: &[f64]) -> f64 {
        s.iter()
            .map(|&v| (v - self.upper_bound).max(-v).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.iter().all(|&v| (0.0..=self.upper_bound).contains(&v))
    }
}

/// `s = e − mean(e) + m`.
pub fn reparametrize(e: &[f64], cs: &ConstraintSet) -> Vector {
    let mean = stable_mean(e);
    e.iter().map(|&v| (v - mean) + cs.mean_target).collect()
}

/// Per-unit penalty weights `λ_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyConfig {
    Shared(f64),
    PerUnit(Vector),
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig::Shared(DEFAULT_LAMBDA)
    }
}

impl PenaltyConfig {
    pub fn weight(&self, k: usize) -> f64 {
        match self {
            PenaltyConfig::Shared(l) => *l,
            PenaltyConfig::PerUnit(ls) => ls[k],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = match self {
            PenaltyConfig::Shared(l) => *l > 0.0 && l.is_finite(),
            PenaltyConfig::PerUnit(ls) => ls.len() == n && ls.iter().all(|l| *l > 0.0 && l.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("penalty weights must be {n} positive finite values")))
        }
    }
}

/// `Σ_k λ_k (max(0, s_k − u) − min(0, s_k))`.
pub fn penalty(s: &[f64], cs: &ConstraintSet, lambda: &PenaltyConfig) -> f64 {
    let terms: Vec<f64> = s
        .iter()
        .enumerate()
        .map(|(k, &v)| lambda.weight(k) * ((v - cs.upper_bound).max(0.0) - v.min(0.0)))
        .collect();
    stable_sum(&terms)
}

/// `+λ` above the box, `−λ` below it, zero inside and on the bounds.
pub fn penalty_subgradient(s: &[f64], cs: &ConstraintSet, lambda: &PenaltyConfig) -> Vector {
    s.iter()
        .enumerate()
        .map(|(k, &v)| {
            if v > cs.upper_bound {
                lambda.weight(k)
            } else if v < 0.0 {
                -lambda.weight(k)
            } else {
                0.0
            }
        })
        .collect()
}

/// A data loss over scale vectors that [`optimize_scale_with`] can minimize.
pub trait ScaleObjective {
    /// Length of the scale vector.
    fn dim(&self) -> usize;

    /// Number of optimization examples (mini-batches index into `0..len`).
    fn train_len(&self) -> usize;

    /// Mean loss over `batch` and its gradient with respect to `s`.
    fn loss_and_grad(&self, s: &[f64], batch: &[usize]) -> Result<(f64, Vector)>;

    /// Selection metric for a feasible `s`; lower is better.
    fn validation_error(&self, s: &[f64]) -> Result<f64>;
}

/// Which split the scale vector is fitted on. Selection always uses validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveData {
    Train,
    /// Fits on the validation split itself. Not the default: the selected
    /// validation error is then no longer a held-out estimate.
    Validation,
}

/// Cross-entropy of a frozen network under scaled inference. Inputs to the
/// gated layer are computed once up front.
#[derive(Debug, Clone)]
pub struct NetworkObjective<'a> {
    params: &'a NetworkParams,
    gate: &'a DropoutGate,
    fit_inputs: Vec<Vector>,
    fit_labels: Vec<usize>,
    val_inputs: Vec<Vector>,
    val_labels: Vec<usize>,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(params: &'a NetworkParams, gate: &'a DropoutGate, fit: &Dataset, val: &Dataset) -> Result<Self> {
        if !params.has_softmax_output() {
            return Err(Error::LossRequiresSoftmax);
        }
        let inputs = |ds: &Dataset| -> Result<Vec<Vector>> {
            ds.features().iter().map(|x| gate_input(params, gate, x)).collect()
        };
        Ok(NetworkObjective {
            params,
            gate,
            fit_inputs: inputs(fit)?,
            fit_labels: fit.labels().to_vec(),
            val_inputs: inputs(val)?,
            val_labels: val.labels().to_vec(),
        })
    }
}

impl ScaleObjective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.gate.gated_width(self.params).expect("gate checked at construction")
    }

    fn train_len(&self) -> usize {
        self.fit_labels.len()
    }

    fn loss_and_grad(&self, s: &[f64], batch: &[usize]) -> Result<(f64, Vector)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mode = ForwardMode::Scaled(Vector::new(s.to_vec()));
        let mut loss = 0.0;
        let mut grad = Vector::zeros(s.len());
        for &i in batch {
            let (probs, cache) = forward_head(self.params, self.gate, &mode, &self.fit_inputs[i])?;
            loss += cross_entropy(&probs, self.fit_labels[i])?;
            let g = backprop_scale(self.params, &cache, self.fit_labels[i])?;
            for (a, b) in grad.iter_mut().zip(g.iter()) {
                *a += b;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    fn validation_error(&self, s: &[f64]) -> Result<f64> {
        let preds = self
            .val_inputs
            .iter()
            .map(|z| scaled_head(self.params, self.gate, s, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(error_rate(&preds, &self.val_labels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub penalty: f64,
    /// Gradient of `loss + penalty` with respect to `e`.
    pub grad_e: Vector,
}

impl ObjectiveValue {
    pub fn total(&self) -> f64 {
        self.loss + self.penalty
    }
}

/// Penalized objective at `e` and its gradient through the reparametrization:
/// `∂/∂e_k = g_k − mean_j g_j` where `g = ∂/∂s`.
pub fn objective_and_gradient<O: ScaleObjective + ?Sized>(
    e: &[f64],
    cs: &ConstraintSet,
    lambda: &PenaltyConfig,
    objective: &O,
    batch: &[usize],
) -> Result<ObjectiveValue> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let s = reparametrize(e, cs);
    let (loss, mut g) = objective.loss_and_grad(&s, batch)?;
    for (gk, pk) in g.iter_mut().zip(penalty_subgradient(&s, cs, lambda).iter()) {
        *gk += pk;
    }
    let mean = stable_mean(&g);
    Ok(ObjectiveValue {
        loss,
        penalty: penalty(&s, cs, lambda),
        grad_e: g.iter().map(|v| v - mean).collect(),
    })
}

/// Clip to `[0, u]` then shift back to mean `m`, repeated until the box
/// violation is at most [`REPAIR_TOLERANCE`].
pub fn feasibility_repair(s: &[f64], cs: &ConstraintSet) -> Result<Vector> {
    let mut cur = Vector::new(s.to_vec());
    for _ in 0..REPAIR_MAX_ITERATIONS {
        if cs.box_violation(&cur) <= REPAIR_TOLERANCE {
            return Ok(cur);
        }
        for v in cur.iter_mut() {
            *v = v.clamp(0.0, cs.upper_bound);
        }
        let shift = cs.mean_target - cur.mean();
        for v in cur.iter_mut() {
            *v += shift;
        }
    }
    let violation = cs.box_violation(&cur);
    if violation <= REPAIR_TOLERANCE {
        Ok(cur)
    } else {
        Err(Error::RepairDidNotConverge {
            iterations: REPAIR_MAX_ITERATIONS,
            violation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleOptConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub objective_data: ObjectiveData,
}

impl Default for ScaleOptConfig {
    /// Adam (lr 0.001, β₁ 0.9, β₂ 0.999), 50 epochs, batches of 32, fitted on
    /// the training split.
    fn default() -> Self {
        ScaleOptConfig {
            optimizer: OptimizerKind::adam(),
            learning_rate: 0.001,
            max_epochs: 50,
            batch_size: 32,
            seed: 0,
            objective_data: ObjectiveData::Train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    /// Mean loss over the whole fitting set, without penalty.
    pub loss: f64,
    pub penalty: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOptResult {
    /// Selected, feasibility-repaired scale vector.
    pub scale: Vector,
    pub selected_epoch: usize,
    pub val_error: f64,
    /// Validation error of iterate 0 (uniform scaling).
    pub uniform_val_error: f64,
    pub trace: Vec<TraceRecord>,
}

/// Fits a scale vector for a frozen network.
pub fn optimize_scale(
    params: &NetworkParams,
    gate: &DropoutGate,
    cs: &ConstraintSet,
    lambda: &PenaltyConfig,
    cfg: &ScaleOptConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<ScaleOptResult> {
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let fit = match cfg.objective_data {
        ObjectiveData::Train => train_set,
        ObjectiveData::Validation => val_set,
    };
    let objective = NetworkObjective::new(params, gate, fit, val_set)?;
    optimize_scale_with(&objective, cs, lambda, cfg)
}

fn full_loss<O: ScaleObjective + ?Sized>(objective: &O, s: &[f64], batch: &[usize]) -> Result<f64> {
    Ok(objective.loss_and_grad(s, batch)?.0)
}

/// The optimization loop for any [`ScaleObjective`].
pub fn optimize_scale_with<O: ScaleObjective + ?Sized>(
    objective: &O,
    cs: &ConstraintSet,
    lambda: &PenaltyConfig,
    cfg: &ScaleOptConfig,
) -> Result<ScaleOptResult> {
    let n = objective.dim();
    lambda.validate(n)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    if objective.train_len() == 0 {
        return Err(Error::Empty("scale fitting set"));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &[n])?;
    let all: Vec<usize> = (0..objective.train_len()).collect();

    let mut e = vec![0.0; n];
    let record = |epoch: usize, e: &[f64], trace: &mut Vec<TraceRecord>| -> Result<(Vector, f64)> {
        let s = reparametrize(e, cs);
        let loss = full_loss(objective, &s, &all)?;
        let pen = penalty(&s, cs, lambda);
        if !(loss + pen).is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("scale objective is {}", loss + pen),
            });
        }
        let repaired = feasibility_repair(&s, cs)?;
        let val_error = objective.validation_error(&repaired)?;
        trace.push(TraceRecord {
            epoch,
            loss,
            penalty: pen,
            val_error,
        });
        Ok((repaired, val_error))
    };

    let mut trace = Vec::new();
    let (uniform, uniform_val_error) = record(0, &e, &mut trace)?;
    let mut best = (uniform, 0, uniform_val_error);

    let epochs = if cs.is_degenerate() { 0 } else { cfg.max_epochs };
    for epoch in 1..=epochs {
        let mut order = all.clone();
        RngStream::for_purpose(cfg.seed, "scale-shuffle", epoch as u64).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let value = objective_and_gradient(&e, cs, lambda, objective, batch)?;
            if !value.total().is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite mini-batch objective".into(),
                });
            }
            opt.begin_step();
            opt.update(0, &mut e, &value.grad_e);
        }
        let (s, val_error) = record(epoch, &e, &mut trace)?;
        if val_error < best.2 {
            best = (s, epoch, val_error);
        }
    }

    Ok(ScaleOptResult {
        scale: best.0,
        selected_epoch: best.1,
        val_error: best.2,
        uniform_val_error,
        trace,
    })
}

/// Counts of `s` entries in `bins` equal-width bins over `[0, u]`; the last
/// bin includes `u`. Returns `(lower, upper, count)` rows.
pub fn histogram(s: &[f64], upper: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let edge = |i: usize| upper * i as f64 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in s {
        let b = ((v * bins as f64 / upper).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (edge(i), edge(i + 1), c)).collect()
}

pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("epoch,train_objective,penalty,val_error\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.loss + r.penalty, r.penalty, r.val_error);
    }
    out
}

pub fn histogram_csv(s: &[f64], upper: f64, bins: usize) -> String {
    let mut out = String::from("bin_lower,bin_upper,count\n");
    for (lo, hi, c) in histogram(s, upper, bins) {
        let _ = writeln!(out, "{lo},{hi},{c}");
    }
    out
}

/// A fitted scale vector with the constraints it was fitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFile {
    pub convention: Convention,
    pub keep_prob: f64,
    pub constraints: ConstraintSet,
    pub lambda: f64,
    pub selected_epoch: usize,
    pub val_error: f64,
    pub scale: Vector,
}

const SCALE_HEADER: &str = "dropscale-scale v1";

impl ScaleFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SCALE_HEADER}");
        let _ = writeln!(out, "convention={}", self.convention.name());
        let _ = writeln!(out, "keep_prob={:?}", self.keep_prob);
        let _ = writeln!(out, "mean_target={:?}", self.constraints.mean_target);
        let _ = writeln!(out, "upper_bound={:?}", self.constraints.upper_bound);
        let _ = writeln!(out, "lambda={:?}", self.lambda);
        let _ = writeln!(out, "selected_epoch={}", self.selected_epoch);
        let _ = writeln!(out, "val_error={:?}", self.val_error);
        let _ = writeln!(out, "n={}", self.scale.len());
        for v in self.scale.iter() {
            let _ = writeln!(out, "{v:?}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        let mut lines = text.lines();
        if lines.next() != Some(SCALE_HEADER) {
            return Err(bad("missing scale file header".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected {key}=..., found {line:?}")))
        };
        let num = |s: String| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let convention = Convention::parse(&field("convention")?).ok_or_else(|| bad("unknown convention".into()))?;
        let keep_prob = num(field("keep_prob")?)?;
        let mean_target = num(field("mean_target")?)?;
        let upper_bound = num(field("upper_bound")?)?;
        let lambda = num(field("lambda")?)?;
        let selected_epoch = field("selected_epoch")?
            .parse()
            .map_err(|_| bad("bad selected_epoch".into()))?;
        let val_error = num(field("val_error")?)?;
        let n: usize = field("n")?.parse().map_err(|_| bad("bad n".into()))?;
        let scale = lines
            .map(|l| l.parse::<f64>().map_err(|_| bad(format!("bad scale entry {l:?}"))))
            .collect::<Result<Vector>>()?;
        if scale.len() != n {
            return Err(bad(format!("expected {n} scale entries, found {}", scale.len())));
        }
        Ok(ScaleFile {
            convention,
            keep_prob,
            constraints: ConstraintSet::new(mean_target, upper_bound)?,
            lambda,
            selected_epoch,
            val_error,
            scale,
        })
    }

    /// Confirms the file was fitted for this gate and that `s` is feasible.
    pub fn validate_for(&self, params: &NetworkParams, gate: &DropoutGate) -> Result<()> {
        let expected = ConstraintSet::for_gate(gate)?;
        if self.convention != gate.convention() || self.keep_prob != gate.keep_prob() || self.constraints != expected {
            return Err(Error::Format(format!(
                "scale vector was fitted for {} dropout with p={} (mean {}, bound {}), model uses {} with p={}",
                self.convention.name(),
                self.keep_prob,
                self.constraints.mean_target,
                self.constraints.upper_bound,
                gate.convention().name(),
                gate.keep_prob()
            )));
        }
        let width = gate.gated_width(params)?;
        crate::tensor::check_len("scale vector", width, self.scale.len())?;
        crate::inference::check_scale(gate, &self.scale)?;
        if (self.scale.mean() - expected.mean_target).abs() > 1e-6 {
            return Err(Error::Format(format!(
                "scale vector mean {} differs from target {}",
                self.scale.mean(),
                expected.mean_target
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScaleFile::parse(&text)
    }
}
