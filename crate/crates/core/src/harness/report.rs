//! Experiment records and their CSV/text renderings. Error rates are stored
//! as fractions and printed in percent.

use std::fmt::Write as _;

use super::{Method, SplitSeeds};

/// Per-repeat results; `errors[i]` is `(validation, test)` for `Method::ALL[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitErrors {
    pub train_epoch: u64,
    pub scale_epoch: usize,
    pub errors: Vec<(f64, f64)>,
}

impl SplitErrors {
    pub fn get(&self, method: Method) -> (f64, f64) {
        let i = Method::ALL.iter().position(|&m| m == method).expect("method listed in ALL");
        self.errors[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub repeat: usize,
    pub seeds: SplitSeeds,
    /// Diagnostic text on failure.
    pub outcome: Result<SplitErrors, String>,
}

impl SplitRecord {
    pub fn progress_line(&self) -> String {
        match &self.outcome {
            Ok(e) => {
                let mut line = format!("split {}:", self.repeat);
                for m in Method::ALL {
                    let (v, t) = e.get(m);
                    let _ = write!(line, " {} val {:.2}% test {:.2}%;", m.name(), 100.0 * v, 100.0 * t);
                }
                line.pop();
                line
            }
            Err(msg) => format!("split {}: failed ({msg})", self.repeat),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    /// Percent.
    pub val_mean: f64,
    pub val_sd: f64,
    pub test_mean: f64,
    pub test_sd: f64,
    pub n: usize,
    pub note: String,
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = crate::tensor::stable_mean(values);
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (crate::tensor::stable_sum(&sq) / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config_text: String,
    pub splits: Vec<SplitRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn new(config_text: String, splits: Vec<SplitRecord>) -> Self {
        let done: Vec<&SplitErrors> = splits.iter().filter_map(|s| s.outcome.as_ref().ok()).collect();
        let failed = splits.len() - done.len();
        let mut note = Vec::new();
        if done.len() == 1 {
            note.push("n=1".to_string());
        }
        if failed > 0 {
            note.push(format!("incomplete: {failed} of {} splits failed", splits.len()));
        }
        let note = note.join("; ");
        let summary = Method::ALL
            .iter()
            .map(|&method| {
                let pct = |f: fn(&(f64, f64)) -> f64| done.iter().map(|e| 100.0 * f(&e.get(method))).collect::<Vec<_>>();
                let (val_mean, val_sd) = mean_sd(&pct(|e| e.0));
                let (test_mean, test_sd) = mean_sd(&pct(|e| e.1));
                SummaryRow {
                    method,
                    val_mean,
                    val_sd,
                    test_mean,
                    test_sd,
                    n: done.len(),
                    note: note.clone(),
                }
            })
            .collect();
        ExperimentReport {
            config_text,
            splits,
            summary,
        }
    }

    pub fn row(&self, method: Method) -> &SummaryRow {
        self.summary.iter().find(|r| r.method == method).expect("every method summarized")
    }

    /// Repeats whose non-uniform validation error exceeds the uniform one.
    pub fn selection_violations(&self) -> Vec<usize> {
        self.splits
            .iter()
            .filter_map(|s| {
                let e = s.outcome.as_ref().ok()?;
                (e.get(Method::NonUniform).0 > e.get(Method::Uniform).0).then_some(s.repeat)
            })
            .collect()
    }

    pub fn splits_csv(&self) -> String {
        let mut out = String::from("split,split_seed,train_seed,scale_seed,mc_seed,status,train_epoch,scale_epoch");
        for m in Method::ALL {
            let _ = write!(out, ",{0}_val_err,{0}_test_err", m.name());
        }
        out.push('\n');
        for s in &self.splits {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                s.repeat, s.seeds.split, s.seeds.train, s.seeds.scale, s.seeds.mc
            );
            match &s.outcome {
                Ok(e) => {
                    let _ = write!(out, ",ok,{},{}", e.train_epoch, e.scale_epoch);
                    for &(v, t) in &e.errors {
                        let _ = write!(out, ",{:.4},{:.4}", 100.0 * v, 100.0 * t);
                    }
                }
                Err(msg) => {
                    let _ = write!(out, ",\"failed: {}\",,", msg.replace('"', "'"));
                    out.push_str(&",".repeat(2 * Method::ALL.len()));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,val_err_mean,val_err_sd,test_err_mean,test_err_sd,n,note\n");
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{:.4},{},{}",
                r.method.name(),
                r.val_mean,
                r.val_sd,
                r.test_mean,
                r.test_sd,
                r.n,
                r.note
            );
        }
        out
    }

    /// Mean ± standard deviation of error rates (%) per method.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let n = self.summary.first().map_or(0, |r| r.n);
        let _ = writeln!(out, "Error rate (%), mean ± sd over {n} splits");
        let _ = writeln!(out, "{:<12} {:>16} {:>16}", "method", "validation", "test");
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{:<12} {:>16} {:>16}",
                r.method.name(),
                format!("{:.2} ± {:.2}", r.val_mean, r.val_sd),
                format!("{:.2} ± {:.2}", r.test_mean, r.test_sd)
            );
        }
        if let Some(note) = self.summary.first().map(|r| &r.note).filter(|n| !n.is_empty()) {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }
}

/// `method,val_err,test_err` in percent.
pub fn eval_csv(rows: &[(Method, f64, f64)]) -> String {
    let mut out = String::from("method,val_err,test_err\n");
    for (m, v, t) in rows {
        let _ = writeln!(out, "{},{:.4},{:.4}", m.name(), 100.0 * v, 100.0 * t);
    }
    out
}
