//! Acceptance gate. Runs every criterion and prints one PASS/FAIL line each;
//! exits non-zero if any fails.
//!
//! `DROPSCALE_ACCEPTANCE=1,5,8` runs a subset. The Fashion-MNIST criteria
//! (6, 7 and part of 9) read `data/fashion-mnist/` at the workspace root; when
//! those files are absent they fail, unless `DROPSCALE_ALLOW_MISSING_DATA=1`
//! turns them into SKIP.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{flatten, fsum, random_net, random_vec, rel_err, unflatten, workspace_root};
use dropscale::data::Dataset;
use dropscale::harness::{self, ExperimentReport, Method, RunConfig};
use dropscale::inference::{predict_mc, predict_weight_scaled, submodel_outputs, McConfig};
use dropscale::network::{
    backprop_params, forward, forward_head, gate_input, Activation, Convention, DropoutGate, ForwardMode,
};
use dropscale::oracle::{exact_arithmetic, exact_geometric};
use dropscale::scaleopt::{
    objective_and_gradient, optimize_scale_with, penalty, reparametrize, ConstraintSet, NetworkObjective,
    PenaltyConfig, ScaleFile, ScaleObjective, ScaleOptConfig,
};
use dropscale::tensor::{cross_entropy, RngStream, Vector};
use dropscale::Result;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome {
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

// 1 ------------------------------------------------------------------------

fn constraint_exactness() -> Outcome {
    assert_eq!(fsum(&[1e16, 1.0, -1e16]), 1.0);
    assert_eq!(fsum(&[0.1; 10]), 1.0);
    let start = Instant::now();
    let mut rng = RngStream::for_purpose(1, "acceptance", 1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = 2 + (rng.next_u64() % 63) as usize;
        let p = rng.uniform(0.05, 0.95);
        let cs = if rng.next_f64() < 0.5 {
            ConstraintSet::new(p, 1.0).unwrap()
        } else {
            ConstraintSet::new(1.0, 1.0 / p).unwrap()
        };
        let e = random_vec(&mut rng, n, -1e6, 1e6);
        let s = reparametrize(&e, &cs);
        worst = worst.max((fsum(&s) / n as f64 - cs.mean_target()).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && within(elapsed, 1.0),
        format!("max |mean(s) - m| = {worst:.2e} over 10^4 vectors (tol 1e-9), {:.3}s (limit 1s)", elapsed.as_secs_f64()),
    )
}

// 2 ------------------------------------------------------------------------

/// Exact penalty of float inputs, correctly rounded: every term is a multiple
/// of 2^-60 and the integer numerator is summed exactly.
fn exact_penalty(s: &[f64], upper: f64, lambda: i128) -> f64 {
    let fixed = |v: f64| -> i128 {
        let scaled = v * 2f64.powi(60);
        assert_eq!(scaled.fract(), 0.0, "{v} not a multiple of 2^-60");
        scaled as i128
    };
    let u = fixed(upper);
    let total = s.iter().map(|&v| fixed(v)).fold(0i128, |acc, v| acc + lambda * ((v - u).max(0) - v.min(0)));
    total as f64 / 2f64.powi(60)
}

fn penalty_correctness() -> Outcome {
    let mut rng = RngStream::for_purpose(2, "acceptance", 2);
    let mut mismatches = 0;
    let mut negatives = 0;
    for trial in 0..10_000 {
        let cs = if trial % 2 == 0 {
            ConstraintSet::new(0.5, 1.0).unwrap()
        } else {
            ConstraintSet::new(1.0, 1.0 / rng.uniform(0.2, 0.9)).unwrap()
        };
        let u = cs.upper_bound();
        let n = 1 + (rng.next_u64() % 16) as usize;
        let boundary = trial % 4 >= 2;
        let s: Vec<f64> = (0..n)
            .map(|_| {
                if boundary {
                    match rng.next_u64() % 6 {
                        0 => 0.0,
                        1 => u,
                        2 => u.next_up(),
                        3 => (-0.0f64).next_down(),
                        4 => 0.0f64.next_up(),
                        _ => u.next_down(),
                    }
                } else {
                    rng.uniform(-0.5, u + 0.5)
                }
            })
            .collect();
        let lambda = PenaltyConfig::Shared(10_000.0);
        let value = penalty(&s, &cs, &lambda);
        let inside = s.iter().all(|&v| v >= 0.0 && v <= u);
        if (value == 0.0) != inside {
            mismatches += 1;
        }
        if value < 0.0 {
            negatives += 1;
        }
    }
    let hand = penalty(&[1.2, -0.1, 0.5], &ConstraintSet::new(0.5, 1.0).unwrap(), &PenaltyConfig::Shared(1e4));
    let hand_exact = exact_penalty(&[1.2, -0.1, 0.5], 1.0, 10_000);
    let dyadic = penalty(&[1.25, -0.125, 0.5], &ConstraintSet::new(0.5, 1.0).unwrap(), &PenaltyConfig::Shared(1e4));
    let ulps = ((hand - 3000.0) / (3000.0f64.next_up() - 3000.0)).abs();
    outcome(
        mismatches == 0 && negatives == 0 && hand == hand_exact && ulps <= 1.0 && dyadic == 3750.0,
        format!(
            "zero-iff-feasible mismatches {mismatches}/10^4; hand case = {hand:?} \
             (exact penalty of the float input {hand_exact:?}; {ulps:.0} ulp from 3000 since 1.2 is inexact); \
             dyadic case [1.25,-0.125,0.5] = {dyadic:?}"
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn oracle_equivalences() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::for_purpose(3, "acceptance", 3);
    let mut linear_worst = 0.0f64;
    let mut softmax_worst = 0.0f64;
    for trial in 0..20 {
        let conv = if trial % 2 == 0 { Convention::Classical } else { Convention::Inverted };
        let p = rng.uniform(0.1, 0.9);
        let x = random_vec(&mut rng, 5, -1.0, 1.0);

        let lin = random_net(&mut rng, &[5, 12, 6, 3], Activation::Relu, Activation::Linear);
        let lin = unflatten_with_linear_head(&lin);
        let gate = DropoutGate::new(1, p, conv).unwrap();
        let ws = predict_weight_scaled(&lin, &gate, &x).unwrap();
        linear_worst = linear_worst.max(ws.max_abs_diff(&exact_arithmetic(&lin, &gate, &x).unwrap()));

        for n in [1, 4, 8, 12] {
            let net = random_net(&mut rng, &[5, n, 3], Activation::Relu, Activation::Softmax);
            let gate = DropoutGate::new(1, p, conv).unwrap();
            let ws = predict_weight_scaled(&net, &gate, &x).unwrap();
            softmax_worst = softmax_worst.max(ws.max_abs_diff(&exact_geometric(&net, &gate, &x).unwrap()));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        linear_worst <= 1e-12 && softmax_worst <= 1e-10 && within(elapsed, 30.0),
        format!(
            "(a) linear head, n=12: max |ws - exact arithmetic| = {linear_worst:.2e} (tol 1e-12); \
             (b) softmax after gate, n<=12: max |ws - exact geometric| = {softmax_worst:.2e} (tol 1e-10); {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Keeps the ReLU input layer and makes every layer after the gate linear.
fn unflatten_with_linear_head(net: &dropscale::network::NetworkParams) -> dropscale::network::NetworkParams {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let act = if i == 0 { Activation::Relu } else { Activation::Linear };
            dropscale::network::Layer::new(act, l.weights.clone(), l.bias.clone()).unwrap()
        })
        .collect();
    dropscale::network::NetworkParams::new(layers).unwrap()
}

// 4 ------------------------------------------------------------------------

fn mc_convergence() -> Outcome {
    const N: usize = 100_000;
    let start = Instant::now();
    let mut rng = RngStream::for_purpose(4, "acceptance", 4);
    let net = random_net(&mut rng, &[6, 10, 8, 4], Activation::Relu, Activation::Softmax);
    let gate = DropoutGate::new(1, 0.5, Convention::Classical).unwrap();
    let x = random_vec(&mut rng, 6, -1.0, 1.0);
    let exact = exact_arithmetic(&net, &gate, &x).unwrap();
    let mut ok = 0;
    let mut worst_ratio = 0.0f64;
    for trial in 0..100u64 {
        let seed = 1000 + trial;
        let mc = predict_mc(&net, &gate, &x, &McConfig::arithmetic(N, seed)).unwrap();
        let samples = submodel_outputs(&net, &gate, &x, N, seed).unwrap();
        let mut inside = true;
        for c in 0..exact.len() {
            let col: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            let mean = fsum(&col) / N as f64;
            let var = fsum(&col.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>()) / (N - 1) as f64;
            let bound = 4.0 * var.sqrt() / (N as f64).sqrt();
            let dev = (mc[c] - exact[c]).abs();
            worst_ratio = worst_ratio.max(dev / bound);
            inside &= dev < bound;
        }
        ok += usize::from(inside);
    }
    let elapsed = start.elapsed();
    outcome(
        ok >= 99 && within(elapsed, 120.0),
        format!(
            "{ok}/100 trials within 4σ/√N at N=10^5 (need ≥99); worst |dev|/bound = {worst_ratio:.2}; {:.1}s (limit 120s)",
            elapsed.as_secs_f64()
        ),
    )
}

// 5 ------------------------------------------------------------------------

const FD_STEP: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-4;

fn near_relu_kink(net: &dropscale::network::NetworkParams, pre: &[Vector], start: usize) -> bool {
    pre.iter()
        .enumerate()
        .any(|(i, z)| net.layers()[start + i].activation == Activation::Relu && z.iter().any(|v| v.abs() < KINK_MARGIN))
}

fn param_gradient_instance(rng: &mut RngStream) -> Option<f64> {
    let depth = 2 + (rng.next_u64() % 2) as usize;
    let mut widths = vec![3 + (rng.next_u64() % 3) as usize];
    for _ in 1..depth {
        widths.push(3 + (rng.next_u64() % 4) as usize);
    }
    widths.push(3);
    let net = random_net(rng, &widths, Activation::Relu, Activation::Softmax);
    let position = (rng.next_u64() % depth as u64) as usize;
    let conv = if rng.next_f64() < 0.5 { Convention::Classical } else { Convention::Inverted };
    let gate = DropoutGate::new(position, rng.uniform(0.3, 0.9), conv).unwrap();
    let mask = Vector::new((0..widths[position]).map(|_| f64::from(u8::from(rng.next_f64() < 0.7))).collect());
    let mode = ForwardMode::Masked(mask);
    let x = random_vec(rng, widths[0], -1.0, 1.0);
    let label = (rng.next_u64() % 3) as usize;

    let (_, cache) = forward(&net, &gate, &mode, &x).unwrap();
    if near_relu_kink(&net, cache.pre_activations(), 0) {
        return None;
    }
    let grads = backprop_params(&net, &cache, label).unwrap();
    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|g| g.weights.as_slice().iter().chain(g.bias.iter()).copied().collect::<Vec<_>>())
        .collect();
    let theta = flatten(&net);
    let loss = |t: &[f64]| {
        let (probs, _) = forward(&unflatten(&net, t), &gate, &mode, &x).unwrap();
        cross_entropy(&probs, label).unwrap()
    };
    let numeric: Vec<f64> = (0..theta.len())
        .map(|i| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += FD_STEP;
            minus[i] -= FD_STEP;
            (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP)
        })
        .collect();
    Some(rel_err(&analytic, &numeric))
}

fn scale_gradient_instance(rng: &mut RngStream) -> Option<(f64, f64)> {
    let hidden = 3 + (rng.next_u64() % 4) as usize;
    let n = 2 + (rng.next_u64() % 7) as usize;
    let net = random_net(rng, &[4, hidden, n, 3], Activation::Relu, Activation::Softmax);
    let position = 2;
    let conv = if rng.next_f64() < 0.5 { Convention::Classical } else { Convention::Inverted };
    let gate = DropoutGate::new(position, rng.uniform(0.3, 0.9), conv).unwrap();
    let feats: Vec<Vector> = (0..6).map(|_| Vector::new(random_vec(rng, 4, -1.0, 1.0))).collect();
    let labels: Vec<usize> = (0..6).map(|_| (rng.next_u64() % 3) as usize).collect();
    let ds = Dataset::new(feats, labels, 3).unwrap();
    let objective = NetworkObjective::new(&net, &gate, &ds, &ds).unwrap();
    let cs = ConstraintSet::for_gate(&gate).unwrap();
    let lambda = PenaltyConfig::Shared(if rng.next_f64() < 0.5 { 10_000.0 } else { 0.5 });
    let e = random_vec(rng, n, -0.8 * cs.upper_bound(), 0.8 * cs.upper_bound());
    let s = reparametrize(&e, &cs);
    if s.iter().any(|&v| v.abs() < KINK_MARGIN || (v - cs.upper_bound()).abs() < KINK_MARGIN) {
        return None;
    }
    for x in ds.features() {
        let z = gate_input(&net, &gate, x).unwrap();
        let (_, cache) = forward_head(&net, &gate, &ForwardMode::Scaled(s.clone()), &z).unwrap();
        if near_relu_kink(&net, cache.pre_activations(), position) {
            return None;
        }
    }
    let batch: Vec<usize> = (0..ds.len()).collect();
    let value = objective_and_gradient(&e, &cs, &lambda, &objective, &batch).unwrap();
    let total = |e: &[f64]| objective_and_gradient(e, &cs, &lambda, &objective, &batch).unwrap().total();
    let numeric: Vec<f64> = (0..n)
        .map(|k| {
            let mut plus = e.clone();
            let mut minus = e.clone();
            plus[k] += FD_STEP;
            minus[k] -= FD_STEP;
            (total(&plus) - total(&minus)) / (2.0 * FD_STEP)
        })
        .collect();
    Some((rel_err(&value.grad_e, &numeric), fsum(&value.grad_e).abs()))
}

fn gradient_fidelity() -> Outcome {
    let mut rng = RngStream::for_purpose(5, "acceptance", 5);
    let (mut params_worst, mut params_done, mut params_skipped) = (0.0f64, 0, 0);
    while params_done < 100 {
        match param_gradient_instance(&mut rng) {
            Some(err) => {
                params_worst = params_worst.max(err);
                params_done += 1;
            }
            None => params_skipped += 1,
        }
    }
    let (mut scale_worst, mut sum_worst, mut scale_done, mut scale_skipped) = (0.0f64, 0.0f64, 0, 0);
    while scale_done < 100 {
        match scale_gradient_instance(&mut rng) {
            Some((err, sum)) => {
                scale_worst = scale_worst.max(err);
                sum_worst = sum_worst.max(sum);
                scale_done += 1;
            }
            None => scale_skipped += 1,
        }
    }
    outcome(
        params_worst <= 1e-5 && scale_worst <= 1e-5 && sum_worst <= 1e-10,
        format!(
            "params: max rel err {params_worst:.2e} ({params_skipped} near-kink draws skipped); \
             scale (w.r.t. e): max rel err {scale_worst:.2e} ({scale_skipped} skipped); \
             max |Σ g_e| = {sum_worst:.2e} (tol 1e-5 / 1e-10)"
        ),
    )
}

// 6, 7, 9 (Fashion-MNIST) -------------------------------------------------

struct FashionRun {
    report: ExperimentReport,
    out: PathBuf,
    _dir: tempfile::TempDir,
    elapsed: Duration,
}

fn fashion_config(out: &Path) -> Option<RunConfig> {
    let root = workspace_root();
    let mut cfg = RunConfig::load(&root.join("configs/fashion_mnist.conf")).expect("fashion_mnist.conf parses");
    for path in [&mut cfg.train_images, &mut cfg.train_labels, &mut cfg.test_images, &mut cfg.test_labels] {
        *path = root.join(&*path);
        if !path.is_file() {
            return None;
        }
    }
    cfg.out = out.to_path_buf();
    Some(cfg)
}

fn fashion_run() -> &'static std::result::Result<FashionRun, String> {
    static RUN: OnceLock<std::result::Result<FashionRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = dir.path().join("fashion");
        let cfg = fashion_config(&out).ok_or("Fashion-MNIST files not found under data/fashion-mnist (run scripts/fetch_fashion_mnist.py)")?;
        let start = Instant::now();
        let mut progress = std::io::stdout();
        let report = harness::cmd_experiment(&cfg, Some(&mut progress)).map_err(|e| e.to_string())?;
        Ok(FashionRun {
            report,
            out,
            _dir: dir,
            elapsed: start.elapsed(),
        })
    })
}

fn missing_data(msg: &str) -> Outcome {
    let allow = std::env::var("DROPSCALE_ALLOW_MISSING_DATA").is_ok_and(|v| v == "1");
    Outcome {
        status: if allow { Status::Skip } else { Status::Fail },
        detail: msg.to_string(),
    }
}

fn selection_invariant() -> Outcome {
    let run = match fashion_run() {
        Ok(run) => run,
        Err(msg) => return missing_data(msg),
    };
    let report = &run.report;
    let complete = report.splits.iter().filter(|s| s.outcome.is_ok()).count();
    let violations = report.selection_violations();
    let mut bookkeeping = Vec::new();
    for s in &report.splits {
        let dir = run.out.join(format!("split_{}", s.repeat));
        let Ok(file) = ScaleFile::load(&dir.join(harness::SCALE_FILE)) else {
            bookkeeping.push(s.repeat);
            continue;
        };
        let trace = std::fs::read_to_string(dir.join(harness::SCALE_TRACE_FILE)).unwrap_or_default();
        let min = trace
            .lines()
            .skip(1)
            .filter_map(|l| l.rsplit(',').next()?.parse::<f64>().ok())
            .fold(f64::INFINITY, f64::min);
        let matches_row = s
            .outcome
            .as_ref()
            .is_ok_and(|e| e.get(Method::NonUniform).0 == file.val_error && e.scale_epoch == file.selected_epoch);
        if min != file.val_error || !matches_row {
            bookkeeping.push(s.repeat);
        }
    }
    outcome(
        complete == 8 && violations.is_empty() && bookkeeping.is_empty(),
        format!(
            "{complete}/8 splits complete; non-uniform val err > uniform in splits {violations:?}; \
             trace/selection mismatches in splits {bookkeeping:?}"
        ),
    )
}

fn desk_experiment() -> Outcome {
    let run = match fashion_run() {
        Ok(run) => run,
        Err(msg) => return missing_data(msg),
    };
    let report = &run.report;
    let u = report.row(Method::Uniform);
    let mc = report.row(Method::MonteCarlo);
    let nu = report.row(Method::NonUniform);
    let gap = (u.val_mean - mc.val_mean).abs();
    let summary = std::fs::read_to_string(run.out.join(harness::SUMMARY_FILE)).unwrap_or_default();
    let lines: Vec<&str> = summary.lines().collect();
    let format_ok = lines.first() == Some(&"method,val_err_mean,val_err_sd,test_err_mean,test_err_sd,n,note")
        && lines.len() == 4
        && ["uniform,", "mc,", "nonuniform,"]
            .iter()
            .zip(&lines[1..])
            .all(|(m, l)| l.starts_with(m) && l.split(',').count() == 7)
        && run.out.join(harness::TABLE_FILE).is_file();
    print!("{}", report.table());
    outcome(
        report.selection_violations().is_empty() && gap < 0.5 && format_ok && u.n == 8 && within(run.elapsed, 1800.0),
        format!(
            "val err %: uniform {:.2}±{:.2}, mc {:.2}±{:.2}, nonuniform {:.2}±{:.2}; |uniform - mc| = {gap:.3} pp (< 0.5); \
             test err % (reported): uniform {:.2}±{:.2}, mc {:.2}±{:.2}, nonuniform {:.2}±{:.2}; format ok: {format_ok}; {:.0}s",
            u.val_mean,
            u.val_sd,
            mc.val_mean,
            mc.val_sd,
            nu.val_mean,
            nu.val_sd,
            u.test_mean,
            u.test_sd,
            mc.test_mean,
            mc.test_sd,
            nu.test_mean,
            nu.test_sd,
            run.elapsed.as_secs_f64()
        ),
    )
}

// 8 ------------------------------------------------------------------------

/// `½ Σ_k a_k (s_k − c_ik)²` averaged over examples `i`, with per-example
/// offsets that cancel in the mean. Selection uses the full objective.
struct Quadratic {
    a: [f64; 2],
    targets: Vec<[f64; 2]>,
}

impl Quadratic {
    fn new(a: [f64; 2], c: [f64; 2], noise: f64, examples: usize) -> Self {
        let targets = (0..examples)
            .map(|i| {
                let d = if i % 2 == 0 { noise } else { -noise };
                [c[0] + d, c[1] - d]
            })
            .collect();
        Quadratic { a, targets }
    }

    fn full(&self, s: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.targets.len()).collect();
        self.loss_and_grad(s, &all).unwrap().0
    }
}

impl ScaleObjective for Quadratic {
    fn dim(&self) -> usize {
        2
    }

    fn train_len(&self) -> usize {
        self.targets.len()
    }

    fn loss_and_grad(&self, s: &[f64], batch: &[usize]) -> Result<(f64, Vector)> {
        let mut loss = 0.0;
        let mut grad = [0.0; 2];
        for &i in batch {
            for k in 0..2 {
                let d = s[k] - self.targets[i][k];
                loss += 0.5 * self.a[k] * d * d;
                grad[k] += self.a[k] * d;
            }
        }
        let m = batch.len() as f64;
        Ok((loss / m, Vector::new(vec![grad[0] / m, grad[1] / m])))
    }

    fn validation_error(&self, s: &[f64]) -> Result<f64> {
        Ok(self.full(s))
    }
}

fn grid_search(q: &Quadratic, cs: &ConstraintSet) -> f64 {
    let total = 2.0 * cs.mean_target();
    let lo = (total - cs.upper_bound()).max(0.0);
    let hi = cs.upper_bound().min(total);
    let steps = 1_000_000;
    (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .map(|s1| (q.full(&[s1, total - s1]), s1))
        .fold((f64::INFINITY, lo), |best, cand| if cand.0 < best.0 { cand } else { best })
        .1
}

fn optimizer_oracle() -> Outcome {
    let start = Instant::now();
    let cases = [
        ("interior", ConstraintSet::new(0.5, 1.0).unwrap(), Quadratic::new([1.0, 3.0], [0.2, 0.9], 0.0, 100)),
        ("interior+noise", ConstraintSet::new(0.5, 1.0).unwrap(), Quadratic::new([1.0, 3.0], [0.2, 0.9], 0.3, 100)),
        ("bound", ConstraintSet::new(1.0, 2.0).unwrap(), Quadratic::new([1.0, 1.0], [-1.0, 3.5], 0.0, 100)),
        ("bound+noise", ConstraintSet::new(1.0, 2.0).unwrap(), Quadratic::new([2.0, 1.0], [-1.0, 3.5], 0.3, 100)),
    ];
    let cfg = ScaleOptConfig {
        max_epochs: 1000,
        batch_size: 10,
        seed: 8,
        ..ScaleOptConfig::default()
    };
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (name, cs, q) in &cases {
        let result = optimize_scale_with(q, cs, &PenaltyConfig::default(), &cfg).unwrap();
        let s1 = grid_search(q, cs);
        let dev = (result.scale[0] - s1).abs().max((result.scale[1] - (2.0 * cs.mean_target() - s1)).abs());
        worst = worst.max(dev);
        details.push(format!("{name} {dev:.1e}"));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-3 && within(elapsed, 10.0),
        format!(
            "max |s_opt - s_grid| = {worst:.2e} (tol 1e-3) [{}]; {:.2}s (limit 10s)",
            details.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&workspace_root().join("configs/quickstart.conf")).unwrap();
    // same out path both times: config.txt echoes it
    cfg.out = tmp.path().join("quickstart");
    let mut trees = Vec::new();
    for _ in 0..2 {
        harness::cmd_experiment(&cfg, None).unwrap();
        trees.push(read_tree(&cfg.out));
        std::fs::remove_dir_all(&cfg.out).unwrap();
    }
    let synth_same = trees[0] == trees[1];
    let synth_files = trees[0].len();

    let fashion = match fashion_run() {
        Ok(run) => {
            let out = tmp.path().join("fashion-rerun");
            let mut cfg = fashion_config(&out).unwrap();
            cfg.repeats = 1;
            harness::cmd_experiment(&cfg, None).unwrap();
            let first = read_tree(&run.out.join("split_0"));
            let again = read_tree(&out.join("split_0"));
            let row = |p: &Path| std::fs::read_to_string(p.join(harness::SPLITS_FILE)).unwrap().lines().nth(1).map(String::from);
            Some(first == again && row(&run.out) == row(&out))
        }
        Err(_) => None,
    };
    let detail = format!(
        "quickstart experiment rerun: {synth_files} files byte-identical: {synth_same}; \
         Fashion-MNIST split 0 rerun identical: {}",
        fashion.map_or("not run (data missing)".to_string(), |b| b.to_string())
    );
    match fashion {
        Some(f) => outcome(synth_same && f, detail),
        None if !synth_same => outcome(false, detail),
        None => missing_data(&detail),
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "constraint exactness", constraint_exactness),
        (2, "penalty correctness", penalty_correctness),
        (3, "oracle equivalences", oracle_equivalences),
        (4, "Monte Carlo convergence", mc_convergence),
        (5, "gradient fidelity", gradient_fidelity),
        (8, "small-instance optimizer oracle", optimizer_oracle),
        (7, "desk-scale Fashion-MNIST experiment", desk_experiment),
        (6, "selection invariant", selection_invariant),
        (9, "determinism", determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("DROPSCALE_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut lines = Vec::new();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let result = check();
        let tag = match result.status {
            Status::Pass => "PASS",
            Status::Skip => "SKIP",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
        };
        let line = format!("[{tag}] criterion {id} ({name}): {}", result.detail);
        println!("{line}");
        lines.push((id, line));
    }
    lines.sort_by_key(|(id, _)| *id);
    println!("\nacceptance summary");
    for (_, line) in &lines {
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
