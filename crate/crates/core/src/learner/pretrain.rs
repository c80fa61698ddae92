//! Auxiliary-task initialization: classify which outline category a patch
//! shows, then reuse the learned convolution filters for grasping.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, EpochLoss, Example, LearnError, Network, TrainConfig};
use crate::patch::{extract_patch, PatchGeometry};
use crate::raster::Raster;
use crate::rng::{stream_rng, Stream};
use crate::scene::random_shape;
use crate::scene::{render, ObjectId, Placement, Pose, RenderStyle, Scene, ShapeCategory, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub samples: usize,
    /// Extra samples, from different shapes, kept aside to measure the
    /// auxiliary accuracy.
    pub heldout_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Also transfer the fully connected trunk, not only the convolutions.
    pub keep_fc: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            samples: 1200,
            heldout_samples: 300,
            epochs: 8,
            learning_rate: 0.01,
            batch_size: 64,
            momentum: 0.9,
            keep_fc: false,
            seed: 4242,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxSample {
    pub pixels: Raster,
    pub category: ShapeCategory,
}

impl Example for AuxSample {
    fn pixels(&self) -> &[f32] {
        self.pixels.data()
    }
    fn group(&self) -> usize {
        0
    }
    fn class(&self) -> usize {
        self.category.index()
    }
}

/// Patches of single freshly generated outlines, categories in rotation.
/// Sample `i` depends only on `(seed, i)`.
pub fn aux_dataset(n: usize, geo: &PatchGeometry, style: &RenderStyle, seed: u64) -> Vec<AuxSample> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, Stream::Pretrain, i as u64);
            let category = ShapeCategory::ALL[i % ShapeCategory::ALL.len()];
            let shape = random_shape(category, 15.0, &mut rng);
            let crop_mm = geo.crop_side as f64 / geo.px_per_mm;
            let side = 2.0 * shape.radius() + crop_mm + 10.0;
            let ws = Workspace::new(side, side, geo.px_per_mm).expect("positive extent");
            let c = side / 2.0;
            let pose = Pose {
                x_mm: c,
                y_mm: c,
                rotation_deg: rng.random_range(0.0..360.0),
            };
            let placement = Placement::new(ObjectId(0), shape, pose);
            let scene = Scene::from_placements(ws, vec![placement], 0).expect("object fits by construction");
            let (image, _) = render(&scene, style);
            let jitter = 10.0;
            let x = c + rng.random_range(-jitter..jitter);
            let y = c + rng.random_range(-jitter..jitter);
            let patch = extract_patch(&image, x, y, geo).expect("centre inside image");
            AuxSample {
                pixels: patch.pixels,
                category,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub curve: Vec<EpochLoss>,
    /// The auxiliary network, trunk plus category head.
    pub aux_net: Network,
}

/// Trains a copy of `net`'s trunk on the auxiliary task and returns `net`
/// with the trained convolutions (and fc layers if `keep_fc`) swapped in.
/// Everything else keeps `net`'s values, so zero epochs return `net`
/// unchanged.
pub fn pretrain_features(
    net: &Network,
    aux: &[AuxSample],
    cfg: &PretrainConfig,
) -> Result<(Network, PretrainReport), LearnError> {
    let aux_arch = net.arch.with_heads(1, ShapeCategory::ALL.len());
    let mut rng = stream_rng(cfg.seed, Stream::Init, 0);
    let mut aux_net = Network::init(&aux_arch, 0.01, &mut rng)?;
    let trunk_end = net.layout().head_start();
    aux_net.params[..trunk_end].copy_from_slice(&net.params[..trunk_end]);
    let schedule = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        momentum: cfg.momentum,
        seed: cfg.seed,
    };
    let curve = if cfg.epochs == 0 {
        Vec::new()
    } else {
        train(&mut aux_net, aux, None, &[schedule])?
    };
    let keep = if cfg.keep_fc {
        0..trunk_end
    } else {
        net.layout().conv_range()
    };
    let mut out = net.clone();
    out.params[keep.clone()].copy_from_slice(&aux_net.params[keep]);
    Ok((out, PretrainReport { curve, aux_net }))
}
