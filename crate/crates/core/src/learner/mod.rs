//! The grasp classifier: network, masked per-bin loss, SGD training,
//! auxiliary-task pretraining and checkpoints.

pub mod checkpoint;
mod net;
pub mod pretrain;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use net::{binary_score, softmax_xent, ActivationMatrix, Arch, Layout, Network, Scratch};
pub use pretrain::{aux_dataset, pretrain_features, AuxSample, PretrainConfig, PretrainReport};

use crate::patch::{TrainingSample, N_BINS};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("bin {0} out of range")]
    BinOutOfRange(usize),
    #[error("training diverged in epoch {epoch}: non-finite {what}")]
    Divergence { epoch: usize, what: &'static str },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A labelled input: which head it trains and the target class.
pub trait Example: Sync {
    fn pixels(&self) -> &[f32];
    fn group(&self) -> usize;
    fn class(&self) -> usize;
}

impl Example for TrainingSample {
    fn pixels(&self) -> &[f32] {
        self.pixels.data()
    }
    fn group(&self) -> usize {
        self.bin.index()
    }
    fn class(&self) -> usize {
        self.label as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::stage0()
    }
}

impl TrainConfig {
    /// Schedule for the first model.
    pub fn stage0() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
        }
    }

    /// Schedule for fine-tuning in later stages.
    pub fn stage_k() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 5,
            ..Self::stage0()
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.batch_size == 0 {
            return Err(LearnError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(LearnError::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LearnError::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Batch loss: the sum of per-sample cross-entropies of each sample's own
/// head. Other heads contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_sample: Vec<f64>,
}

pub fn loss(batch: &[ActivationMatrix], labels: &[(usize, bool)]) -> Result<LossReport, LearnError> {
    if batch.len() != labels.len() {
        return Err(LearnError::ShapeMismatch {
            expected: batch.len(),
            got: labels.len(),
        });
    }
    let per_sample = batch
        .iter()
        .zip(labels)
        .map(|(a, &(bin, label))| {
            if bin >= a.groups {
                return Err(LearnError::BinOutOfRange(bin));
            }
            Ok(softmax_xent(a.row(bin), label as usize).0)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(LossReport {
        total: per_sample.iter().sum(),
        per_sample,
    })
}

/// Mean-gradient of a batch, accumulated into `grad` (which is zeroed
/// first). Returns the batch's summed loss.
pub fn batch_gradient<E: Example>(
    net: &Network,
    batch: &[&E],
    scratch: &mut Scratch,
    grad: &mut [f64],
) -> Result<f64, LearnError> {
    grad.fill(0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        if ex.group() >= net.arch.groups {
            return Err(LearnError::BinOutOfRange(ex.group()));
        }
        net.forward_into(ex.pixels(), scratch)?;
        total += net.backward_into(scratch, ex.group(), ex.class(), scale, grad);
    }
    Ok(total)
}

/// One SGD-with-momentum update: `v ← μv + g; θ ← θ − ηv`.
pub fn sgd_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
}

/// Trains in place through each schedule phase in turn. `weights`
/// replicates examples inside every epoch's shuffle. Single-threaded, so
/// the result depends only on the inputs and seeds.
pub fn train<E: Example>(
    net: &mut Network,
    examples: &[E],
    weights: Option<&[u32]>,
    schedule: &[TrainConfig],
) -> Result<Vec<EpochLoss>, LearnError> {
    if examples.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if let Some(w) = weights {
        if w.len() != examples.len() {
            return Err(LearnError::ShapeMismatch {
                expected: examples.len(),
                got: w.len(),
            });
        }
    }
    let order: Vec<usize> = match weights {
        Some(w) => (0..examples.len())
            .flat_map(|i| std::iter::repeat_n(i, w[i] as usize))
            .collect(),
        None => (0..examples.len()).collect(),
    };
    if order.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut scratch = net.scratch();
    let mut grad = vec![0.0; net.params.len()];
    let mut curve = Vec::new();
    let mut epoch = 0;
    for cfg in schedule {
        cfg.validate()?;
        let mut velocity = vec![0.0; net.params.len()];
        for _ in 0..cfg.epochs {
            let mut idx = order.clone();
            idx.shuffle(&mut stream_rng(cfg.seed, Stream::Train, epoch as u64));
            let mut sum = 0.0;
            for chunk in idx.chunks(cfg.batch_size) {
                let batch: Vec<&E> = chunk.iter().map(|&i| &examples[i]).collect();
                let l = batch_gradient(net, &batch, &mut scratch, &mut grad)?;
                if !l.is_finite() {
                    return Err(LearnError::Divergence { epoch, what: "loss" });
                }
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(LearnError::Divergence {
                        epoch,
                        what: "gradient",
                    });
                }
                sum += l;
                sgd_step(&mut net.params, &mut velocity, &grad, cfg.learning_rate, cfg.momentum);
            }
            curve.push(EpochLoss {
                epoch,
                loss: sum / idx.len() as f64,
            });
            epoch += 1;
        }
    }
    Ok(curve)
}

/// Writes a loss curve as `epoch,loss`.
pub fn write_loss_csv<W: std::io::Write>(curve: &[EpochLoss], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for e in curve {
        out.serialize(e)?;
    }
    out.flush()?;
    Ok(())
}

const SCORE_CHUNK: usize = 64;

/// All 18 scores for every input, computed in parallel in fixed chunks.
pub fn score_all(net: &Network, inputs: &[&[f32]]) -> Result<Vec<[f64; N_BINS]>, LearnError> {
    let parts: Result<Vec<Vec<[f64; N_BINS]>>, LearnError> = inputs
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let mut s = net.scratch();
            chunk
                .iter()
                .map(|px| {
                    let mut out = [0.0; N_BINS];
                    net.scores_into(px, &mut s, &mut out)?;
                    Ok(out)
                })
                .collect()
        })
        .collect();
    Ok(parts?.into_iter().flatten().collect())
}

/// Score of each example's own head.
pub fn score_examples<E: Example>(net: &Network, examples: &[E]) -> Result<Vec<f64>, LearnError> {
    let inputs: Vec<&[f32]> = examples.iter().map(|e| e.pixels()).collect();
    let all = score_all(net, &inputs)?;
    Ok(all.iter().zip(examples).map(|(s, e)| s[e.group()]).collect())
}

/// Fraction of examples whose arg-max class over their own head is right.
pub fn classification_accuracy<E: Example>(net: &Network, examples: &[E]) -> Result<f64, LearnError> {
    if examples.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let correct: Result<Vec<bool>, LearnError> = examples
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let mut s = net.scratch();
            chunk
                .iter()
                .map(|e| {
                    net.forward_into(e.pixels(), &mut s)?;
                    let c = net.arch.classes;
                    let row = &s.logits()[e.group() * c..(e.group() + 1) * c];
                    let best = (0..c).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                    Ok(best == e.class())
                })
                .collect::<Result<Vec<bool>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().flatten().collect());
    let correct = correct?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Ex {
        px: Vec<f32>,
        g: usize,
        c: usize,
    }

    impl Example for Ex {
        fn pixels(&self) -> &[f32] {
            &self.px
        }
        fn group(&self) -> usize {
            self.g
        }
        fn class(&self) -> usize {
            self.c
        }
    }

    fn tiny() -> Arch {
        Arch {
            input_side: 8,
            kernel: 3,
            conv_channels: vec![2, 3],
            fc: vec![6, 5],
            groups: 18,
            classes: 2,
        }
    }

    #[test]
    fn zero_heads_score_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::init(&tiny(), 0.0, &mut rng).unwrap();
        let a = net.forward(&vec![0.3; 64]).unwrap();
        assert!(a.scores().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::init(&tiny(), 0.01, &mut rng).unwrap();
        assert!(matches!(net.forward(&[0.0; 63]), Err(LearnError::ShapeMismatch { .. })));
    }

    #[test]
    fn equal_logits_cost_ln2() {
        let a = ActivationMatrix {
            groups: 18,
            classes: 2,
            logits: vec![0.7; 36],
        };
        let r = loss(&[a.clone()], &[(4, true)]).unwrap();
        assert!((r.total - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss(&[a], &[(18, true)]).is_err());
        let (l, _) = softmax_xent(&[-40.0, 40.0], 1);
        assert!(l < 1e-30);
        let (l, _) = softmax_xent(&[1000.0, -1000.0], 1);
        assert_eq!(l, 2000.0);
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::init(&tiny(), 0.01, &mut rng).unwrap();
        let before = net.params.clone();
        let ex: Vec<Ex> = (0..10)
            .map(|i| Ex {
                px: (0..64).map(|_| rng.random()).collect(),
                g: i % 18,
                c: i % 2,
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 3,
            ..TrainConfig::stage0()
        };
        train(&mut net, &ex, None, &[cfg]).unwrap();
        assert_eq!(net.params, before);
    }

    #[test]
    fn separable_toy_set_is_learned() {
        // bright-left vs bright-right images, each class on a fixed head
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex: Vec<Ex> = (0..50)
            .map(|i| {
                let c = i % 2;
                let px = (0..64)
                    .map(|k| {
                        let left = (k % 8) < 4;
                        let hot = if c == 1 { left } else { !left };
                        if hot {
                            0.9
                        } else {
                            0.1 + 0.05 * rng.random::<f32>()
                        }
                    })
                    .collect();
                Ex { px, g: i % 3, c }
            })
            .collect();
        let mut net = Network::init(&tiny(), 0.01, &mut rng).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 60,
            batch_size: 10,
            ..TrainConfig::stage0()
        };
        let curve = train(&mut net, &ex, None, &[cfg]).unwrap();
        assert_eq!(curve.len(), 60);
        assert_eq!(classification_accuracy(&net, &ex).unwrap(), 1.0);
    }

    #[test]
    fn weights_replicate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ex: Vec<Ex> = (0..4)
            .map(|i| Ex {
                px: (0..64).map(|_| rng.random()).collect(),
                g: i,
                c: i % 2,
            })
            .collect();
        let base = Network::init(&tiny(), 0.01, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 100,
            ..TrainConfig::stage0()
        };
        // one full batch: weight 2 on every example equals the plain mean
        let mut a = base.clone();
        train(&mut a, &ex, Some(&[2, 2, 2, 2]), &[cfg]).unwrap();
        let mut b = base.clone();
        train(&mut b, &ex, None, &[cfg]).unwrap();
        for (x, y) in a.params.iter().zip(&b.params) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
