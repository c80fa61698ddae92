//! One linear SVM per angle bin, trained by full-batch subgradient descent
//! on the L2-regularised hinge loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::patch::N_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c_grid: Vec<f64>,
    /// Fraction of each bin held out to choose C.
    pub validation_fraction: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_grid: vec![0.01, 0.1, 1.0, 10.0],
            validation_fraction: 0.2,
            iterations: 300,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub c: f64,
    pub bins: Vec<LinearSvm>,
}

impl SvmModel {
    pub fn predict(&self, x: &[f64], bin: usize) -> bool {
        self.bins[bin].predict(x)
    }
}

/// `½‖w‖² + C·Σ max(0, 1 − y(w·x + b))`.
pub fn objective(svm: &LinearSvm, xs: &[&[f64]], ys: &[bool], c: f64) -> f64 {
    let reg = 0.5 * svm.w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let s = if y { 1.0 } else { -1.0 };
            (1.0 - s * svm.decision(x)).max(0.0)
        })
        .sum();
    reg + c * hinge
}

/// Subgradient descent with a backtracking step: a step is only taken if
/// it lowers the objective, so the recorded objective never increases.
/// Returns the model and the objective after each iteration.
pub fn train_linear(xs: &[&[f64]], ys: &[bool], c: f64, iterations: usize) -> (LinearSvm, Vec<f64>) {
    let dim = xs.first().map_or(0, |x| x.len());
    let pos = ys.iter().filter(|&&y| y).count();
    if pos == 0 || pos == ys.len() {
        // one class only: constant classifier for the majority
        let b = if pos > 0 { 1.0 } else { -1.0 };
        return (LinearSvm { w: vec![0.0; dim], b }, Vec::new());
    }
    let mut svm = LinearSvm {
        w: vec![0.0; dim],
        b: 0.0,
    };
    let mut obj = objective(&svm, xs, ys, c);
    let mut step = 1.0 / (1.0 + c * xs.len() as f64);
    let mut curve = Vec::with_capacity(iterations);
    let mut gw = vec![0.0; dim];
    for _ in 0..iterations {
        gw.copy_from_slice(&svm.w);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let s = if y { 1.0 } else { -1.0 };
            if s * svm.decision(x) < 1.0 {
                for (g, v) in gw.iter_mut().zip(x.iter()) {
                    *g -= c * s * v;
                }
                gb -= c * s;
            }
        }
        let mut accepted = false;
        for _ in 0..30 {
            let cand = LinearSvm {
                w: svm.w.iter().zip(&gw).map(|(w, g)| w - step * g).collect(),
                b: svm.b - step * gb,
            };
            let o = objective(&cand, xs, ys, c);
            if o < obj {
                svm = cand;
                obj = o;
                step *= 1.2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        curve.push(obj);
        if !accepted {
            break;
        }
    }
    (svm, curve)
}

/// Per-bin training data: descriptors and labels.
pub type BinData<'a> = Vec<(Vec<&'a [f64]>, Vec<bool>)>;

pub fn split_by_bin<'a>(items: &'a [(Vec<f64>, usize, bool)]) -> BinData<'a> {
    let mut out: BinData<'a> = vec![(Vec::new(), Vec::new()); N_BINS];
    for (x, b, y) in items {
        out[*b].0.push(x.as_slice());
        out[*b].1.push(*y);
    }
    out
}

fn train_all(data: &BinData<'_>, c: f64, iterations: usize) -> SvmModel {
    let bins = data
        .par_iter()
        .map(|(xs, ys)| train_linear(xs, ys, c, iterations).0)
        .collect();
    SvmModel { c, bins }
}

/// Chooses C by accuracy on a seeded per-bin hold-out, then retrains every
/// bin on all its data. Ties keep the earlier grid value.
pub fn svm_train(items: &[(Vec<f64>, usize, bool)], cfg: &SvmConfig) -> SvmModel {
    let data = split_by_bin(items);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fit: BinData<'_> = Vec::with_capacity(N_BINS);
    let mut val: BinData<'_> = Vec::with_capacity(N_BINS);
    for (xs, ys) in &data {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.shuffle(&mut rng);
        let n_val = (xs.len() as f64 * cfg.validation_fraction).round() as usize;
        let (v, f) = idx.split_at(n_val.min(xs.len()));
        fit.push((f.iter().map(|&i| xs[i]).collect(), f.iter().map(|&i| ys[i]).collect()));
        val.push((v.iter().map(|&i| xs[i]).collect(), v.iter().map(|&i| ys[i]).collect()));
    }
    let mut best: Option<(f64, usize)> = None;
    for &c in &cfg.c_grid {
        let m = train_all(&fit, c, cfg.iterations);
        let correct: usize = val
            .iter()
            .enumerate()
            .map(|(b, (xs, ys))| xs.iter().zip(ys).filter(|(x, &y)| m.predict(x, b) == y).count())
            .sum();
        if best.is_none_or(|(_, bc)| correct > bc) {
            best = Some((c, correct));
        }
    }
    let c = best.map_or(1.0, |(c, _)| c);
    train_all(&data, c, cfg.iterations)
}
