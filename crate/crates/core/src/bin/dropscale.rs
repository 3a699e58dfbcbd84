use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dropscale::harness::{self, Method, RunConfig};
use dropscale::{Error, Result};

#[derive(Parser)]
#[command(name = "dropscale", version, about = "Dropout inference: weight scaling, Monte Carlo and non-uniform scale vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value run configuration; defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides `seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on repeat 0 of the configured split
    Train(Common),
    /// Error rates per inference method on validation and test data
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Scale file for the nonuniform method [default: scale.txt next to the model]
        #[arg(long)]
        scale: Option<PathBuf>,
        /// Comma-separated subset of uniform, mc, nonuniform
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Fit a non-uniform scale vector for a trained model
    OptimizeScale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Repeated split, train, optimize and evaluate runs with summary tables
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Compare approximations with exact mask enumeration on random networks
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of gated units
        #[arg(long, default_value_t = 10)]
        width: usize,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 10_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0.5)]
        keep_prob: f64,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, found {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = resolve(&common)?;
            let outcome = harness::cmd_train(&cfg)?;
            println!(
                "saved {} (epoch {}, validation error {:.2}%)",
                outcome.model_path.display(),
                outcome.model.epoch,
                100.0 * outcome.model.val_error
            );
        }
        Command::Eval {
            common,
            model,
            scale,
            methods,
            mc_samples,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = methods {
                cfg.methods = Method::parse_list(&m)?;
            }
            if let Some(n) = mc_samples {
                cfg.mc_samples = n;
            }
            let rows = harness::cmd_eval(&cfg, &model, scale.as_deref())?;
            println!("{:<12} {:>10} {:>10}", "method", "val err %", "test err %");
            for (m, v, t) in rows {
                println!("{:<12} {:>10.2} {:>10.2}", m.name(), 100.0 * v, 100.0 * t);
            }
        }
        Command::OptimizeScale { common, model } => {
            let cfg = resolve(&common)?;
            let (result, _) = harness::cmd_optimize_scale(&cfg, &model)?;
            println!(
                "selected epoch {} of {}: validation error {:.2}% (uniform {:.2}%)",
                result.selected_epoch,
                result.trace.len() - 1,
                100.0 * result.val_error,
                100.0 * result.uniform_val_error
            );
        }
        Command::Experiment { common, mc_samples } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = mc_samples {
                cfg.mc_samples = n;
            }
            let mut stderr = std::io::stderr();
            let report = harness::cmd_experiment(&cfg, Some(&mut stderr))?;
            print!("{}", report.table());
        }
        Command::OracleCheck {
            seed,
            width,
            instances,
            mc_samples,
            keep_prob,
        } => {
            let rows = harness::cmd_oracle_check(seed, width, instances, mc_samples, keep_prob)?;
            println!("instance,head,ws_vs_arith,ws_vs_geo,mc_vs_arith");
            for r in rows {
                println!(
                    "{},{},{:.3e},{:.3e},{:.3e}",
                    r.instance, r.head, r.weight_scaling, r.weight_scaling_geometric, r.monte_carlo
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
