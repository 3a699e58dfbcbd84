//! Command implementations behind the `dropscale` binary.
//!
//! Seeds for repeat `i` of a run with base seed `b`: the train/validation
//! split uses `b + i`; network training, scale optimization and Monte Carlo
//! evaluation use `derive_seed(b + i, 1)`, `derive_seed(b + i, 2)` and
//! `derive_seed(b + i, 3)`. Monte Carlo masks for example `j` are drawn from
//! `derive_seed(derive_seed(mc_seed, d), j)` with `d = 0` on validation and
//! `d = 1` on test. `train`, `eval` and `optimize-scale` act on repeat 0.

pub mod config;
pub mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{read_delimited, read_idx, split, synth_gaussians, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::inference::{error_rate, mc_head, scaled_head, weight_scaled_head, InferenceMode, McConfig};
use crate::network::{load_model, save_model, Model};
use crate::network::{gate_input, mlp_spec, DropoutGate, LayerSpec, NetworkParams};
use crate::oracle::{approximation_gap, exact_geometric};
use crate::scaleopt::{histogram_csv, optimize_scale, trace_csv, ConstraintSet, PenaltyConfig, ScaleFile, ScaleOptResult};
use crate::tensor::{derive_seed, RngStream, Vector};
use crate::trainer::train;

pub use config::{DatasetKind, Method, RunConfig};
pub use report::{ExperimentReport, SplitRecord, SummaryRow};

pub const HISTOGRAM_BINS: usize = 20;

pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SCALE_FILE: &str = "scale.txt";
pub const SCALE_TRACE_FILE: &str = "scale_trace.csv";
pub const SCALE_HIST_FILE: &str = "scale_hist.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const SPLITS_FILE: &str = "splits.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSeeds {
    pub split: u64,
    pub train: u64,
    pub scale: u64,
    pub mc: u64,
}

impl SplitSeeds {
    pub fn new(base: u64, repeat: usize) -> Self {
        let split = base.wrapping_add(repeat as u64);
        SplitSeeds {
            split,
            train: derive_seed(split, 1),
            scale: derive_seed(split, 2),
            mc: derive_seed(split, 3),
        }
    }
}

/// Full training pool and the fixed test set.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Dataset,
    pub test: Dataset,
}

fn require_file(key: &str, path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidConfig(format!("key `{key}` is not set")));
    }
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!("key `{key}`: no such file {}", path.display())));
    }
    Ok(())
}

fn limit(ds: Dataset, n: usize) -> Dataset {
    if n == 0 || n >= ds.len() {
        ds
    } else {
        ds.take(n)
    }
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Idx => {
            require_file("train_images", &cfg.train_images)?;
            require_file("train_labels", &cfg.train_labels)?;
            require_file("test_images", &cfg.test_images)?;
            require_file("test_labels", &cfg.test_labels)?;
            (
                read_idx(&cfg.train_images, &cfg.train_labels)?,
                read_idx(&cfg.test_images, &cfg.test_labels)?,
            )
        }
        DatasetKind::Delimited => {
            require_file("train_path", &cfg.train_path)?;
            require_file("test_path", &cfg.test_path)?;
            (read_delimited(&cfg.train_path)?, read_delimited(&cfg.test_path)?)
        }
        DatasetKind::Synth => {
            let make = |per_class, index| {
                synth_gaussians(
                    cfg.synth_classes,
                    cfg.synth_dim,
                    per_class,
                    cfg.synth_spread,
                    derive_seed(cfg.seed, index),
                )
            };
            (make(cfg.synth_train_per_class, 0x7261)?, make(cfg.synth_test_per_class, 0x7465)?)
        }
    };
    let train = limit(train, cfg.train_limit);
    let test = limit(test, cfg.test_limit);
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            context: "training vs test features",
            expected: train.dim(),
            actual: test.dim(),
        });
    }
    Ok(Corpus { train, test })
}

pub fn class_count(corpus: &Corpus) -> usize {
    corpus.train.class_count().max(corpus.test.class_count())
}

pub fn architecture(cfg: &RunConfig, input_dim: usize, classes: usize) -> Vec<LayerSpec> {
    let mut widths = vec![input_dim];
    widths.extend(&cfg.hidden);
    widths.push(classes);
    mlp_spec(&widths, cfg.activation)
}

/// Gate on the input of the output layer.
pub fn output_gate(cfg: &RunConfig, specs: &[LayerSpec]) -> Result<DropoutGate> {
    DropoutGate::new(specs.len() - 1, cfg.keep_prob, cfg.convention)
}

pub fn split_corpus(cfg: &RunConfig, corpus: &Corpus, seeds: &SplitSeeds) -> Result<(Dataset, Dataset)> {
    split(&corpus.train, &SplitSpec::new(cfg.val_fraction, seeds.split)?)
}

/// Trains one network and returns it with its CSV log.
pub fn train_model(
    cfg: &RunConfig,
    corpus: &Corpus,
    train_set: &Dataset,
    val_set: &Dataset,
    seeds: &SplitSeeds,
) -> Result<(Model, Vec<u8>)> {
    let specs = architecture(cfg, corpus.train.dim(), class_count(corpus));
    let gate = output_gate(cfg, &specs)?;
    let mut log = Vec::new();
    let ckpt = train(&specs, &gate, train_set, val_set, &cfg.train_config(seeds.train)?, Some(&mut log))?;
    let model = Model {
        params: ckpt.params,
        gate,
        epoch: ckpt.epoch as u64,
        val_error: ckpt.val_error,
    };
    Ok((model, log))
}

/// Error rates of `methods` on `ds`, in the order given.
pub fn evaluate(
    params: &NetworkParams,
    gate: &DropoutGate,
    ds: &Dataset,
    methods: &[Method],
    scale: Option<&[f64]>,
    mc: &McConfig,
) -> Result<Vec<f64>> {
    let inputs = ds
        .features()
        .iter()
        .map(|x| gate_input(params, gate, x))
        .collect::<Result<Vec<_>>>()?;
    methods
        .iter()
        .map(|method| {
            let preds = inputs
                .iter()
                .enumerate()
                .map(|(j, z)| match method {
                    Method::Uniform => weight_scaled_head(params, gate, z),
                    Method::MonteCarlo => mc_head(params, gate, z, &mc.with_seed(derive_seed(mc.seed, j as u64))),
                    Method::NonUniform => {
                        let s = scale.ok_or_else(|| {
                            Error::InvalidConfig("the nonuniform method needs a scale vector (--scale)".into())
                        })?;
                        scaled_head(params, gate, s, z)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(error_rate(&preds, ds.labels()))
        })
        .collect()
}

fn mc_config(cfg: &RunConfig, seed: u64) -> McConfig {
    McConfig {
        mean: cfg.mc_mean,
        ..McConfig::arithmetic(cfg.mc_samples, seed)
    }
}

/// Validation and test error rates per method.
pub fn evaluate_splits(
    cfg: &RunConfig,
    model: &Model,
    val_set: &Dataset,
    test_set: &Dataset,
    methods: &[Method],
    scale: Option<&[f64]>,
    mc_seed: u64,
) -> Result<Vec<(Method, f64, f64)>> {
    let val = evaluate(&model.params, &model.gate, val_set, methods, scale, &mc_config(cfg, derive_seed(mc_seed, 0)))?;
    let test = evaluate(&model.params, &model.gate, test_set, methods, scale, &mc_config(cfg, derive_seed(mc_seed, 1)))?;
    Ok(methods
        .iter()
        .zip(val.into_iter().zip(test))
        .map(|(&m, (v, t))| (m, v, t))
        .collect())
}

pub fn fit_scale(
    cfg: &RunConfig,
    model: &Model,
    train_set: &Dataset,
    val_set: &Dataset,
    seed: u64,
) -> Result<(ScaleOptResult, ScaleFile)> {
    let cs = ConstraintSet::for_gate(&model.gate)?;
    let lambda = PenaltyConfig::Shared(cfg.lambda);
    let result = optimize_scale(&model.params, &model.gate, &cs, &lambda, &cfg.scale_config(seed), train_set, val_set)?;
    let file = ScaleFile {
        convention: model.gate.convention(),
        keep_prob: model.gate.keep_prob(),
        constraints: cs,
        lambda: cfg.lambda,
        selected_epoch: result.selected_epoch,
        val_error: result.val_error,
        scale: result.scale.clone(),
    };
    Ok((result, file))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_scale_outputs(dir: &Path, result: &ScaleOptResult, file: &ScaleFile) -> Result<()> {
    file.save(&dir.join(SCALE_FILE))?;
    write_file(&dir.join(SCALE_TRACE_FILE), trace_csv(&result.trace))?;
    write_file(
        &dir.join(SCALE_HIST_FILE),
        histogram_csv(&result.scale, file.constraints.upper_bound(), HISTOGRAM_BINS),
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub model_path: PathBuf,
}

/// `train`: fits repeat 0 and writes the model, log and resolved config.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let seeds = SplitSeeds::new(cfg.seed, 0);
    let (train_set, val_set) = split_corpus(cfg, &corpus, &seeds)?;
    let (model, log) = train_model(cfg, &corpus, &train_set, &val_set, &seeds)?;
    create_dir(&cfg.out)?;
    let model_path = cfg.out.join(MODEL_FILE);
    save_model(&model, &model_path)?;
    write_file(&cfg.out.join(TRAIN_LOG_FILE), log)?;
    write_file(&cfg.out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(TrainOutcome { model, model_path })
}

fn load_model_for(model_path: &Path, corpus: &Corpus) -> Result<Model> {
    let model = load_model(model_path)?;
    if model.params.input_dim() != corpus.train.dim() {
        return Err(Error::DimensionMismatch {
            context: "model input vs dataset features",
            expected: model.params.input_dim(),
            actual: corpus.train.dim(),
        });
    }
    if model.params.output_dim() < class_count(corpus) {
        return Err(Error::DimensionMismatch {
            context: "model outputs vs dataset classes",
            expected: model.params.output_dim(),
            actual: class_count(corpus),
        });
    }
    Ok(model)
}

/// `eval`: error rates per method on the validation split of repeat 0 and
/// on the test set. Writes `eval.csv`.
pub fn cmd_eval(cfg: &RunConfig, model_path: &Path, scale_path: Option<&Path>) -> Result<Vec<(Method, f64, f64)>> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let model = load_model_for(model_path, &corpus)?;
    let scale = if cfg.methods.contains(&Method::NonUniform) {
        let path = match scale_path {
            Some(p) => p.to_path_buf(),
            None => model_path.parent().unwrap_or(Path::new(".")).join(SCALE_FILE),
        };
        if !path.is_file() {
            return Err(Error::InvalidConfig(format!(
                "the nonuniform method needs a scale file; {} not found (run optimize-scale or pass --scale)",
                path.display()
            )));
        }
        let file = ScaleFile::load(&path)?;
        file.validate_for(&model.params, &model.gate)?;
        Some(file.scale)
    } else {
        None
    };
    let seeds = SplitSeeds::new(cfg.seed, 0);
    let (_, val_set) = split_corpus(cfg, &corpus, &seeds)?;
    let rows = evaluate_splits(cfg, &model, &val_set, &corpus.test, &cfg.methods, scale.as_deref(), seeds.mc)?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join(EVAL_FILE), report::eval_csv(&rows))?;
    Ok(rows)
}

/// `optimize-scale`: fits the scale vector of a trained model on repeat 0.
pub fn cmd_optimize_scale(cfg: &RunConfig, model_path: &Path) -> Result<(ScaleOptResult, ScaleFile)> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let model = load_model_for(model_path, &corpus)?;
    let seeds = SplitSeeds::new(cfg.seed, 0);
    let (train_set, val_set) = split_corpus(cfg, &corpus, &seeds)?;
    let (result, file) = fit_scale(cfg, &model, &train_set, &val_set, seeds.scale)?;
    create_dir(&cfg.out)?;
    write_scale_outputs(&cfg.out, &result, &file)?;
    Ok((result, file))
}

fn run_split(cfg: &RunConfig, corpus: &Corpus, repeat: usize, dir: &Path) -> Result<SplitRecord> {
    let seeds = SplitSeeds::new(cfg.seed, repeat);
    let (train_set, val_set) = split_corpus(cfg, corpus, &seeds)?;
    let (model, log) = train_model(cfg, corpus, &train_set, &val_set, &seeds)?;
    create_dir(dir)?;
    save_model(&model, &dir.join(MODEL_FILE))?;
    write_file(&dir.join(TRAIN_LOG_FILE), log)?;
    let (result, file) = fit_scale(cfg, &model, &train_set, &val_set, seeds.scale)?;
    write_scale_outputs(dir, &result, &file)?;
    let rows = evaluate_splits(cfg, &model, &val_set, &corpus.test, &Method::ALL, Some(&result.scale), seeds.mc)?;
    Ok(SplitRecord {
        repeat,
        seeds,
        outcome: Ok(report::SplitErrors {
            train_epoch: model.epoch,
            scale_epoch: result.selected_epoch,
            errors: rows.iter().map(|&(_, v, t)| (v, t)).collect(),
        }),
    })
}

/// `experiment`: `repeats` independent split → train → optimize → eval runs.
/// A failing repeat is recorded with its diagnostic and left out of the
/// aggregates.
pub fn cmd_experiment(cfg: &RunConfig, mut progress: Option<&mut dyn Write>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    create_dir(&cfg.out)?;
    let mut splits = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let dir = cfg.out.join(format!("split_{repeat}"));
        let record = run_split(cfg, &corpus, repeat, &dir).unwrap_or_else(|e| SplitRecord {
            repeat,
            seeds: SplitSeeds::new(cfg.seed, repeat),
            outcome: Err(format!("{}: {e}", e.category())),
        });
        if let Some(w) = progress.as_deref_mut() {
            let _ = writeln!(w, "{}", record.progress_line());
        }
        splits.push(record);
    }
    let report = ExperimentReport::new(cfg.to_text(), splits);
    write_file(&cfg.out.join(CONFIG_FILE), &report.config_text)?;
    write_file(&cfg.out.join(SPLITS_FILE), report.splits_csv())?;
    write_file(&cfg.out.join(SUMMARY_FILE), report.summary_csv())?;
    write_file(&cfg.out.join(TABLE_FILE), report.table())?;
    Ok(report)
}

/// One random instance in the `oracle-check` suite.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDeviation {
    pub instance: usize,
    pub head: &'static str,
    /// Largest |weight scaling − exact arithmetic| over outputs.
    pub weight_scaling: f64,
    /// Largest |weight scaling − exact geometric| over outputs.
    pub weight_scaling_geometric: f64,
    /// Largest |Monte Carlo − exact arithmetic| over outputs.
    pub monte_carlo: f64,
}

fn random_head(rng: &mut RngStream, input: usize, width: usize, classes: usize, relu_head: bool) -> Result<NetworkParams> {
    use crate::network::{Activation, Layer};
    use crate::tensor::Matrix;
    let mut layer = |i: usize, o: usize, act| -> Result<Layer> {
        let w = Matrix::new(o, i, (0..o * i).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
        let b = Vector::new((0..o).map(|_| rng.uniform(-0.5, 0.5)).collect());
        Layer::new(act, w, b)
    };
    let mut layers = vec![layer(input, width, Activation::Relu)?];
    if relu_head {
        layers.push(layer(width, width, Activation::Relu)?);
    }
    layers.push(layer(width, classes, Activation::Softmax)?);
    NetworkParams::new(layers)
}

/// `oracle-check`: compares weight scaling and Monte Carlo against the exact
/// enumeration on random networks. Heads are either a single softmax layer
/// after the gate (weight scaling equals the geometric mean) or a ReLU layer
/// then softmax (no equality expected).
pub fn cmd_oracle_check(seed: u64, width: usize, instances: usize, mc_samples: usize, p: f64) -> Result<Vec<OracleDeviation>> {
    let mut out = Vec::with_capacity(2 * instances);
    for instance in 0..instances {
        for (head, relu_head) in [("softmax", false), ("relu-softmax", true)] {
            let mut rng = RngStream::for_purpose(seed, "oracle-check", instance as u64);
            let params = random_head(&mut rng, 4, width, 3, relu_head)?;
            let gate = DropoutGate::new(1, p, crate::network::Convention::Classical)?;
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let max = |v: Vector| v.iter().copied().fold(0.0, f64::max);
            let ws = crate::inference::predict_weight_scaled(&params, &gate, &x)?;
            let geo = exact_geometric(&params, &gate, &x)?;
            out.push(OracleDeviation {
                instance,
                head,
                weight_scaling: max(approximation_gap(&params, &gate, &x, &InferenceMode::WeightScaling)?),
                weight_scaling_geometric: ws.max_abs_diff(&geo),
                monte_carlo: max(approximation_gap(
                    &params,
                    &gate,
                    &x,
                    &InferenceMode::MonteCarlo(McConfig::arithmetic(mc_samples, derive_seed(seed, instance as u64))),
                )?),
            });
        }
    }
    Ok(out)
}
