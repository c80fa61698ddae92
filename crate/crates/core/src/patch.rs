//! Grasp-centred patch extraction, angle binning and rotation augmentation.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collect::{Dataset, TrialRecord};
use crate::raster::Raster;
use crate::rng::{stream_rng, Stream};
use crate::scene::{reduce_angle, render, GripperSpec, RenderStyle, Workspace};

pub const N_BINS: usize = 18;
pub const BIN_WIDTH_DEG: f64 = 180.0 / N_BINS as f64;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PatchError {
    #[error("grasp centre ({x_mm}, {y_mm}) mm lies outside the image")]
    CenterOutsideImage { x_mm: f64, y_mm: f64 },
    #[error("angle bin {0} out of range")]
    BinOutOfRange(usize),
    #[error("invalid patch config: {0}")]
    Config(String),
}

/// One of the 18 ten-degree intervals of [0, 180).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AngleBin(u8);

impl AngleBin {
    pub fn new(index: usize) -> Result<Self, PatchError> {
        if index < N_BINS {
            Ok(AngleBin(index as u8))
        } else {
            Err(PatchError::BinOutOfRange(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn center_deg(self) -> f64 {
        self.0 as f64 * BIN_WIDTH_DEG + BIN_WIDTH_DEG / 2.0
    }

    pub fn shifted(self, k: usize) -> AngleBin {
        AngleBin(((self.0 as usize + k) % N_BINS) as u8)
    }
}

pub fn bin_angle(theta_deg: f64) -> AngleBin {
    let idx = (reduce_angle(theta_deg) / BIN_WIDTH_DEG).floor() as usize;
    AngleBin(idx.min(N_BINS - 1) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    /// Network input side in pixels.
    pub input_side: usize,
    /// Crop side as a multiple of the gripper's maximum opening.
    pub context_scale: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            input_side: 48,
            context_scale: 1.5,
        }
    }
}

/// Everything needed to cut patches out of rendered scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGeometry {
    pub px_per_mm: f64,
    pub crop_side: usize,
    pub input_side: usize,
    pub background: f32,
}

impl PatchGeometry {
    pub fn new(
        cfg: &PatchConfig,
        gripper: &GripperSpec,
        ws: &Workspace,
        style: &RenderStyle,
    ) -> Result<Self, PatchError> {
        let crop_side = (cfg.context_scale * gripper.max_open_mm * ws.px_per_mm).round() as usize;
        if cfg.input_side == 0 || crop_side == 0 {
            return Err(PatchError::Config("patch sides must be positive".into()));
        }
        Ok(Self {
            px_per_mm: ws.px_per_mm,
            crop_side,
            input_side: cfg.input_side,
            background: style.background,
        })
    }

    /// Mean millimetres covered by one input pixel.
    pub fn mm_per_input_px(&self) -> f64 {
        self.crop_side as f64 / self.px_per_mm / self.input_side as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Raster,
    pub center_mm: (f64, f64),
    /// Crop side before resizing.
    pub source_scale_px: usize,
}

/// Top-left image pixel of a `side`-pixel crop centred at the point.
fn crop_origin(x_mm: f64, y_mm: f64, ppm: f64, side: usize) -> (i64, i64) {
    let half = side as f64 / 2.0;
    ((y_mm * ppm - half).round() as i64, (x_mm * ppm - half).round() as i64)
}

/// Square crop, padded with `fill` where it leaves the image.
pub fn crop(image: &Raster, row0: i64, col0: i64, side: usize, fill: f32) -> Raster {
    let mut out = Raster::filled(side, side, fill);
    for r in 0..side {
        for c in 0..side {
            out.set(r, c, image.get_or(row0 + r as i64, col0 + c as i64, fill));
        }
    }
    out
}

/// Bilinear resize with half-pixel centres; taps clamp to the source edge.
pub fn resize(src: &Raster, side: usize) -> Raster {
    let (sw, sh) = (src.width(), src.height());
    if sw == side && sh == side {
        return src.clone();
    }
    let sx = sw as f64 / side as f64;
    let sy = sh as f64 / side as f64;
    let mut out = Raster::filled(side, side, 0.0);
    for r in 0..side {
        let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        for c in 0..side {
            let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            out.set(r, c, src.bilinear(y, x, 0.0) as f32);
        }
    }
    out
}

fn check_inside(image: &Raster, x_mm: f64, y_mm: f64, ppm: f64) -> Result<(), PatchError> {
    let (r, c) = (y_mm * ppm, x_mm * ppm);
    if r < 0.0 || c < 0.0 || r > image.height() as f64 || c > image.width() as f64 || !r.is_finite() || !c.is_finite() {
        return Err(PatchError::CenterOutsideImage { x_mm, y_mm });
    }
    Ok(())
}

pub fn extract_patch(image: &Raster, x_mm: f64, y_mm: f64, geo: &PatchGeometry) -> Result<Patch, PatchError> {
    check_inside(image, x_mm, y_mm, geo.px_per_mm)?;
    let (r0, c0) = crop_origin(x_mm, y_mm, geo.px_per_mm, geo.crop_side);
    let raw = crop(image, r0, c0, geo.crop_side, geo.background);
    Ok(Patch {
        pixels: resize(&raw, geo.input_side),
        center_mm: (x_mm, y_mm),
        source_scale_px: geo.crop_side,
    })
}

/// Margin that keeps a rotated crop fully supported by real pixels.
fn rotation_margin(side: usize) -> usize {
    ((std::f64::consts::SQRT_2 - 1.0) * side as f64 / 2.0).ceil() as usize + 1
}

/// Rotates `src` counterclockwise (in x-right, y-down-the-rows axes) by
/// `deg` about its centre and samples the central `crop_side` pixels onto a
/// `side`-pixel grid, in one bilinear pass. At 0° the taps coincide with
/// [`resize`] of the central crop, so rotated copies are interpolated
/// exactly as often as plain extractions.
fn rotate_resample(src: &Raster, deg: f64, crop_side: usize, side: usize, fill: f32) -> Raster {
    let (s, c) = deg.to_radians().sin_cos();
    let cx = (src.width() as f64 - 1.0) / 2.0;
    let cy = (src.height() as f64 - 1.0) / 2.0;
    let scale = crop_side as f64 / side as f64;
    let half = (side as f64 - 1.0) / 2.0;
    let mut out = Raster::filled(side, side, fill);
    for r in 0..side {
        let dy = (r as f64 - half) * scale;
        for col in 0..side {
            let dx = (col as f64 - half) * scale;
            let sx = cx + dx * c + dy * s;
            let sy = cy - dx * s + dy * c;
            out.set(r, col, src.bilinear(sy, sx, fill) as f32);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    /// Multiples of 10 degrees; bins shift exactly.
    BinAligned,
    /// Any angle; the new label is re-binned.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Rotated copies per collected sample.
    pub copies: usize,
    pub mode: RotationMode,
    /// Give positives extra rotated copies until the classes are roughly
    /// even.
    pub balance: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            copies: 4,
            mode: RotationMode::BinAligned,
            balance: false,
        }
    }
}

/// Most distinct non-trivial bin-aligned rotations of a patch.
pub const MAX_ALIGNED_COPIES: usize = 35;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub pixels: Raster,
    pub bin: AngleBin,
    pub label: bool,
    /// Index of the trial record the sample came from.
    pub source: usize,
    /// Augmentation rotation in degrees (0 for the original).
    pub rotation_deg: f64,
}

/// Source for rotated copies: a crop wide enough that any rotation of the
/// central crop stays inside real image content.
#[derive(Debug, Clone)]
pub struct AugmentSource {
    wide: Raster,
    theta_deg: f64,
    label: bool,
    source: usize,
}

impl AugmentSource {
    pub fn new(image: &Raster, record: &TrialRecord, source: usize, geo: &PatchGeometry) -> Result<Self, PatchError> {
        let g = &record.grasp;
        check_inside(image, g.x_mm, g.y_mm, geo.px_per_mm)?;
        let m = rotation_margin(geo.crop_side);
        let (r0, c0) = crop_origin(g.x_mm, g.y_mm, geo.px_per_mm, geo.crop_side);
        let wide = crop(
            image,
            r0 - m as i64,
            c0 - m as i64,
            geo.crop_side + 2 * m,
            geo.background,
        );
        Ok(Self {
            wide,
            theta_deg: g.theta_deg,
            label: record.label,
            source,
        })
    }

    /// The sample rotated by `deg`. A bin-aligned rotation of `k`×10°
    /// shifts the bin by exactly `k`.
    pub fn rotated(&self, deg: f64, geo: &PatchGeometry, mode: RotationMode) -> TrainingSample {
        let base = bin_angle(self.theta_deg);
        let bin = match mode {
            RotationMode::BinAligned => {
                let k = (deg / BIN_WIDTH_DEG).round().rem_euclid(N_BINS as f64) as usize;
                base.shifted(k)
            }
            RotationMode::Continuous => bin_angle(self.theta_deg + deg),
        };
        let pixels = if deg == 0.0 {
            let m = rotation_margin(geo.crop_side) as i64;
            resize(&crop(&self.wide, m, m, geo.crop_side, geo.background), geo.input_side)
        } else {
            rotate_resample(&self.wide, deg, geo.crop_side, geo.input_side, geo.background)
        };
        TrainingSample {
            pixels,
            bin,
            label: self.label,
            source: self.source,
            rotation_deg: deg,
        }
    }
}

/// `count` rotated copies with distinct rotations drawn without replacement.
pub fn augment<R: Rng + ?Sized>(
    src: &AugmentSource,
    count: usize,
    mode: RotationMode,
    geo: &PatchGeometry,
    rng: &mut R,
) -> Vec<TrainingSample> {
    let angles: Vec<f64> = match mode {
        RotationMode::BinAligned => {
            let n = count.min(MAX_ALIGNED_COPIES);
            index::sample(rng, MAX_ALIGNED_COPIES, n)
                .into_iter()
                .map(|i| (i + 1) as f64 * BIN_WIDTH_DEG)
                .collect()
        }
        RotationMode::Continuous => (0..count).map(|_| rng.random_range(0.0..360.0)).collect(),
    };
    angles.into_iter().map(|a| src.rotated(a, geo, mode)).collect()
}

/// Copies per positive needed to roughly even out the classes.
fn balanced_copies(positives: usize, negatives: usize, base: usize) -> usize {
    if positives == 0 {
        return base;
    }
    let want = (negatives as f64 * (1 + base) as f64 / positives as f64).round() as usize;
    want.saturating_sub(1).clamp(base, MAX_ALIGNED_COPIES)
}

/// Turns a dataset into training samples: each record's own patch followed
/// by its rotated copies. Rotations come from a stream keyed by record
/// index, so the output does not depend on thread count.
pub fn build_samples(
    dataset: &Dataset,
    geo: &PatchGeometry,
    aug: &AugmentConfig,
    style: &RenderStyle,
    seed: u64,
) -> Result<Vec<TrainingSample>, PatchError> {
    build_weighted_samples(dataset, None, geo, aug, style, seed)
}

/// [`build_samples`] for records that will be replicated by `weights`
/// during training: class balancing counts each record `weight` times.
pub fn build_weighted_samples(
    dataset: &Dataset,
    weights: Option<&[u32]>,
    geo: &PatchGeometry,
    aug: &AugmentConfig,
    style: &RenderStyle,
    seed: u64,
) -> Result<Vec<TrainingSample>, PatchError> {
    let weight = |i: usize| weights.map_or(1, |w| w[i] as usize);
    let (pos, neg) = dataset.records.iter().enumerate().fold((0, 0), |(p, n), (i, r)| {
        if r.label {
            (p + weight(i), n)
        } else {
            (p, n + weight(i))
        }
    });
    let pos_copies = if aug.balance {
        balanced_copies(pos, neg, aug.copies)
    } else {
        aug.copies
    };
    let groups = group_by_scene(&dataset.records);
    let per_group: Result<Vec<Vec<TrainingSample>>, PatchError> = groups
        .par_iter()
        .map(|&(start, end)| {
            let scene = dataset.scene_of(&dataset.records[start]);
            let (image, _) = render(scene, style);
            let mut out = Vec::new();
            for i in start..end {
                let rec = &dataset.records[i];
                let src = AugmentSource::new(&image, rec, i, geo)?;
                let base = extract_patch(&image, rec.grasp.x_mm, rec.grasp.y_mm, geo)?;
                out.push(TrainingSample {
                    pixels: base.pixels,
                    bin: bin_angle(rec.grasp.theta_deg),
                    label: rec.label,
                    source: i,
                    rotation_deg: 0.0,
                });
                let copies = if rec.label { pos_copies } else { aug.copies };
                if copies > 0 {
                    let mut rng = stream_rng(seed, Stream::Augment, i as u64);
                    out.extend(augment(&src, copies, aug.mode, geo, &mut rng));
                }
            }
            Ok(out)
        })
        .collect();
    Ok(per_group?.into_iter().flatten().collect())
}

/// Un-augmented samples, one per record.
pub fn record_samples(
    dataset: &Dataset,
    geo: &PatchGeometry,
    style: &RenderStyle,
) -> Result<Vec<TrainingSample>, PatchError> {
    let none = AugmentConfig {
        copies: 0,
        balance: false,
        ..Default::default()
    };
    build_samples(dataset, geo, &none, style, 0)
}

/// Runs of consecutive records sharing a scene, as `[start, end)` ranges.
fn group_by_scene(records: &[TrialRecord]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].scene_id != records[start].scene_id {
            if i > start {
                out.push((start, i));
            }
            start = i;
        }
    }
    out
}

/// Writes each record's patch as PGM under `dir` at its `patch_path`.
pub fn write_record_patches(
    dataset: &Dataset,
    dir: &std::path::Path,
    geo: &PatchGeometry,
    style: &RenderStyle,
) -> std::io::Result<()> {
    let samples = record_samples(dataset, geo, style).map_err(std::io::Error::other)?;
    for s in samples {
        let path = dir.join(&dataset.records[s.source].patch_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        s.pixels.write_pgm(&mut f)?;
        f.flush()?;
    }
    Ok(())
}

/// Manifest of an augmented set: `patch_path,bin,label`.
pub fn write_manifest<W: Write>(rows: &[(String, AngleBin, bool)], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["patch_path", "bin", "label"])?;
    for (p, b, l) in rows {
        out.write_record([p.as_str(), &b.index().to_string(), if *l { "1" } else { "0" }])?;
    }
    out.flush()?;
    Ok(())
}
