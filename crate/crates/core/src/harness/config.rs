//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored and
//! unknown keys are rejected. Relative paths are taken relative to the
//! working directory. [`RunConfig::to_text`] writes every key, so the echoed
//! file reproduces the run on its own.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inference::MeanKind;
use crate::network::{Activation, Convention};
use crate::optim::OptimizerKind;
use crate::scaleopt::{ObjectiveData, ScaleOptConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Idx,
    Delimited,
    Synth,
}

impl DatasetKind {
    fn name(self) -> &'static str {
        match self {
            DatasetKind::Idx => "idx",
            DatasetKind::Delimited => "delimited",
            DatasetKind::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Uniform,
    MonteCarlo,
    NonUniform,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Uniform, Method::MonteCarlo, Method::NonUniform];

    pub fn name(self) -> &'static str {
        match self {
            Method::Uniform => "uniform",
            Method::MonteCarlo => "mc",
            Method::NonUniform => "nonuniform",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m = match part {
                "uniform" => Method::Uniform,
                "mc" => Method::MonteCarlo,
                "nonuniform" => Method::NonUniform,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown method {part:?} (expected uniform, mc, nonuniform)"
                    )))
                }
            };
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("methods list is empty".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_spread: f64,
    /// Keep the first `train_limit` training examples; 0 keeps all.
    pub train_limit: usize,
    pub test_limit: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub keep_prob: f64,
    pub convention: Convention,
    pub optimizer: String,
    pub learning_rate: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub mc_samples: usize,
    pub mc_mean: MeanKind,
    pub scale_learning_rate: f64,
    pub scale_epochs: usize,
    pub scale_batch_size: usize,
    pub lambda: f64,
    pub scale_data: ObjectiveData,
    pub methods: Vec<Method>,
    pub val_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    /// The Fashion-MNIST subset protocol: 784-256-10 ReLU MLP, p = 0.5 before
    /// the output layer, SGD 0.01 with momentum 0.9, Adam 0.001 for the scale
    /// vector with λ = 10⁴, 8 repeats.
    fn default() -> Self {
        let fm = |name: &str| PathBuf::from(format!("data/fashion-mnist/{name}"));
        RunConfig {
            dataset: DatasetKind::Idx,
            train_images: fm("train-images-idx3-ubyte.gz"),
            train_labels: fm("train-labels-idx1-ubyte.gz"),
            test_images: fm("test-images-idx3-ubyte.gz"),
            test_labels: fm("test-labels-idx1-ubyte.gz"),
            train_path: PathBuf::new(),
            test_path: PathBuf::new(),
            synth_classes: 10,
            synth_dim: 20,
            synth_train_per_class: 100,
            synth_test_per_class: 50,
            synth_spread: 1.0,
            train_limit: 10_000,
            test_limit: 0,
            hidden: vec![256],
            activation: Activation::Relu,
            keep_prob: 0.5,
            convention: Convention::Classical,
            optimizer: "sgd".into(),
            learning_rate: 0.01,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-7,
            batch_size: 32,
            max_epochs: 64,
            patience: 8,
            mc_samples: 128,
            mc_mean: MeanKind::Arithmetic,
            scale_learning_rate: 0.001,
            scale_epochs: 50,
            scale_batch_size: 32,
            lambda: 10_000.0,
            scale_data: ObjectiveData::Train,
            methods: Method::ALL.to_vec(),
            val_fraction: 0.2,
            repeats: 8,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("key `{key}`: cannot parse {value:?}")))
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, found {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::InvalidConfig(m) => parse_err(m),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || PathBuf::from(value);
        match key {
            "dataset" => {
                self.dataset = match value {
                    "idx" => DatasetKind::Idx,
                    "delimited" => DatasetKind::Delimited,
                    "synth" => DatasetKind::Synth,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "key `dataset`: expected idx, delimited or synth, found {value:?}"
                        )))
                    }
                }
            }
            "train_images" => self.train_images = path(),
            "train_labels" => self.train_labels = path(),
            "test_images" => self.test_images = path(),
            "test_labels" => self.test_labels = path(),
            "train_path" => self.train_path = path(),
            "test_path" => self.test_path = path(),
            "synth_classes" => self.synth_classes = num(key, value)?,
            "synth_dim" => self.synth_dim = num(key, value)?,
            "synth_train_per_class" => self.synth_train_per_class = num(key, value)?,
            "synth_test_per_class" => self.synth_test_per_class = num(key, value)?,
            "synth_spread" => self.synth_spread = num(key, value)?,
            "train_limit" => self.train_limit = num(key, value)?,
            "test_limit" => self.test_limit = num(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| num(key, v))
                    .collect::<Result<_>>()?
            }
            "activation" => {
                self.activation = match Activation::parse(value) {
                    Some(a @ (Activation::Relu | Activation::Linear)) => a,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "key `activation`: expected relu or linear, found {value:?}"
                        )))
                    }
                }
            }
            "keep_prob" => self.keep_prob = num(key, value)?,
            "convention" => {
                self.convention = Convention::parse(value).ok_or_else(|| {
                    Error::InvalidConfig(format!("key `convention`: expected classical or inverted, found {value:?}"))
                })?
            }
            "optimizer" => match value {
                "sgd" | "adam" => self.optimizer = value.to_string(),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "key `optimizer`: expected sgd or adam, found {value:?}"
                    )))
                }
            },
            "learning_rate" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "mc_samples" => self.mc_samples = num(key, value)?,
            "mc_mean" => {
                self.mc_mean = match value {
                    "arithmetic" => MeanKind::Arithmetic,
                    "geometric" => MeanKind::Geometric,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "key `mc_mean`: expected arithmetic or geometric, found {value:?}"
                        )))
                    }
                }
            }
            "scale_learning_rate" => self.scale_learning_rate = num(key, value)?,
            "scale_epochs" => self.scale_epochs = num(key, value)?,
            "scale_batch_size" => self.scale_batch_size = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "scale_data" => {
                self.scale_data = match value {
                    "train" => ObjectiveData::Train,
                    "validation" => ObjectiveData::Validation,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "key `scale_data`: expected train or validation, found {value:?}"
                        )))
                    }
                }
            }
            "methods" => self.methods = Method::parse_list(value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = path(),
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key in a fixed order, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("dataset", self.dataset.name().into());
        kv("train_images", self.train_images.display().to_string());
        kv("train_labels", self.train_labels.display().to_string());
        kv("test_images", self.test_images.display().to_string());
        kv("test_labels", self.test_labels.display().to_string());
        kv("train_path", self.train_path.display().to_string());
        kv("test_path", self.test_path.display().to_string());
        kv("synth_classes", self.synth_classes.to_string());
        kv("synth_dim", self.synth_dim.to_string());
        kv("synth_train_per_class", self.synth_train_per_class.to_string());
        kv("synth_test_per_class", self.synth_test_per_class.to_string());
        kv("synth_spread", format!("{:?}", self.synth_spread));
        kv("train_limit", self.train_limit.to_string());
        kv("test_limit", self.test_limit.to_string());
        kv("hidden", join(&self.hidden));
        kv("activation", self.activation.name().into());
        kv("keep_prob", format!("{:?}", self.keep_prob));
        kv("convention", self.convention.name().into());
        kv("optimizer", self.optimizer.clone());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("momentum", format!("{:?}", self.momentum));
        kv("adam_beta1", format!("{:?}", self.adam_beta1));
        kv("adam_beta2", format!("{:?}", self.adam_beta2));
        kv("adam_eps", format!("{:?}", self.adam_eps));
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("mc_samples", self.mc_samples.to_string());
        kv(
            "mc_mean",
            match self.mc_mean {
                MeanKind::Arithmetic => "arithmetic",
                MeanKind::Geometric => "geometric",
            }
            .into(),
        );
        kv("scale_learning_rate", format!("{:?}", self.scale_learning_rate));
        kv("scale_epochs", self.scale_epochs.to_string());
        kv("scale_batch_size", self.scale_batch_size.to_string());
        kv("lambda", format!("{:?}", self.lambda));
        kv(
            "scale_data",
            match self.scale_data {
                ObjectiveData::Train => "train",
                ObjectiveData::Validation => "validation",
            }
            .into(),
        );
        kv("methods", self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
        kv("val_fraction", format!("{:?}", self.val_fraction));
        kv("repeats", self.repeats.to_string());
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        o
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => OptimizerKind::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            _ => OptimizerKind::sgd_momentum(self.momentum),
        };
        let cfg = TrainConfig {
            optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            early_stop_patience: self.patience,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scale_config(&self, seed: u64) -> ScaleOptConfig {
        ScaleOptConfig {
            learning_rate: self.scale_learning_rate,
            max_epochs: self.scale_epochs,
            batch_size: self.scale_batch_size,
            seed,
            objective_data: self.scale_data,
            ..ScaleOptConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("key `keep_prob`: {} must lie in (0, 1]", self.keep_prob));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("key `val_fraction`: {} must lie in (0, 1)", self.val_fraction));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("key `hidden`: widths must be positive".into());
        }
        if self.mc_samples == 0 {
            return bad("key `mc_samples`: must be at least 1".into());
        }
        if self.scale_batch_size == 0 {
            return bad("key `scale_batch_size`: must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("key `lambda`: {} must be positive", self.lambda));
        }
        if !(self.scale_learning_rate > 0.0 && self.scale_learning_rate.is_finite()) {
            return bad(format!("key `scale_learning_rate`: {} must be positive", self.scale_learning_rate));
        }
        if self.repeats == 0 {
            return bad("key `repeats`: must be at least 1".into());
        }
        if self.dataset == DatasetKind::Synth
            && (self.synth_classes < 2 || self.synth_dim == 0 || self.synth_train_per_class == 0 || self.synth_test_per_class == 0)
        {
            return bad("synth dataset needs at least 2 classes, dim ≥ 1 and non-empty splits".into());
        }
        self.train_config(0).map(|_| ())
    }
}
