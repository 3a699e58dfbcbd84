#![allow(dead_code)]

use std::path::PathBuf;

use dropscale::network::{Activation, Layer, NetworkParams};
use dropscale::tensor::{Matrix, RngStream, Vector};

/// Correctly rounded sum of floats (Shewchuk's exact partials).
pub fn fsum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // Round the nonoverlapping partials, largest first, with the half-way fix-up.
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Dense network with the given widths; every layer but the last uses
/// `hidden`, the last uses `last`. Weights in [-1, 1], biases in [-0.5, 0.5].
pub fn random_net(rng: &mut RngStream, widths: &[usize], hidden: Activation, last: Activation) -> NetworkParams {
    let n = widths.len() - 1;
    let layers = (0..n)
        .map(|l| {
            let (i, o) = (widths[l], widths[l + 1]);
            let w = Matrix::new(o, i, (0..o * i).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
            let b = Vector::new((0..o).map(|_| rng.uniform(-0.5, 0.5)).collect());
            Layer::new(if l + 1 == n { last } else { hidden }, w, b).unwrap()
        })
        .collect();
    NetworkParams::new(layers).unwrap()
}

pub fn random_vec(rng: &mut RngStream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Parameters as one flat vector (weights row-major then bias, per layer).
pub fn flatten(params: &NetworkParams) -> Vec<f64> {
    params
        .layers()
        .iter()
        .flat_map(|l| l.weights.as_slice().iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

pub fn unflatten(template: &NetworkParams, theta: &[f64]) -> NetworkParams {
    let mut at = 0;
    let layers = template
        .layers()
        .iter()
        .map(|l| {
            let (o, i) = (l.weights.rows(), l.weights.cols());
            let w = Matrix::new(o, i, theta[at..at + o * i].to_vec()).unwrap();
            at += o * i;
            let b = Vector::new(theta[at..at + o].to_vec());
            at += o;
            Layer::new(l.activation, w, b).unwrap()
        })
        .collect();
    NetworkParams::new(layers).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(a).max(scale(b)).max(f64::MIN_POSITIVE)
}
