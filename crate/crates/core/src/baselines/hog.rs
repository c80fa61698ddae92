//! Histogram-of-oriented-gradients descriptor.

use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HogConfig {
    pub cell_size: usize,
    /// Unsigned orientation bins over [0, 180).
    pub orientation_bins: usize,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            orientation_bins: 9,
        }
    }
}

impl HogConfig {
    /// Descriptor length for a square patch of `side` pixels.
    pub fn len(&self, side: usize) -> usize {
        let cells = side / self.cell_size;
        (cells - 1) * (cells - 1) * 4 * self.orientation_bins
    }
}

/// Central-difference gradients (clamped at the border), magnitude-weighted
/// hard orientation voting per cell, then L2-normalised overlapping 2×2
/// cell blocks.
pub fn hog(patch: &Raster, cfg: &HogConfig) -> Result<Vec<f64>, BaselineError> {
    let (w, h) = (patch.width(), patch.height());
    let cs = cfg.cell_size;
    if cs == 0 || cfg.orientation_bins == 0 || w != h || w % cs != 0 || w / cs < 2 {
        return Err(BaselineError::Shape(format!(
            "patch {w}×{h} does not tile into at least 2×2 cells of {cs} px"
        )));
    }
    let nb = cfg.orientation_bins;
    let cells = w / cs;
    let mut hist = vec![0.0; cells * cells * nb];
    for r in 0..h {
        for c in 0..w {
            let gx = patch.get(r, (c + 1).min(w - 1)) as f64 - patch.get(r, c.saturating_sub(1)) as f64;
            let gy = patch.get((r + 1).min(h - 1), c) as f64 - patch.get(r.saturating_sub(1), c) as f64;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let ang = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((ang / 180.0 * nb as f64) as usize).min(nb - 1);
            hist[((r / cs) * cells + c / cs) * nb + bin] += mag;
        }
    }
    let mut out = Vec::with_capacity(cfg.len(w));
    const EPS: f64 = 1e-6;
    for by in 0..cells - 1 {
        for bx in 0..cells - 1 {
            let start = out.len();
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let cell = (by + dy) * cells + bx + dx;
                out.extend_from_slice(&hist[cell * nb..(cell + 1) * nb]);
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + EPS * EPS).sqrt();
            for v in &mut out[start..] {
                *v /= norm;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_patch_has_zero_descriptor() {
        let d = hog(&Raster::filled(24, 24, 0.4), &HogConfig::default()).unwrap();
        assert_eq!(d.len(), HogConfig::default().len(24));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_stripes_vote_horizontal_gradient() {
        let mut p = Raster::filled(24, 24, 0.2);
        for r in 0..24 {
            for c in (0..24).filter(|c| (c / 3) % 2 == 0) {
                p.set(r, c, 0.8);
            }
        }
        let cfg = HogConfig::default();
        let d = hog(&p, &cfg).unwrap();
        let mut per_bin = vec![0.0; 9];
        for (i, v) in d.iter().enumerate() {
            per_bin[i % 9] += v;
        }
        let total: f64 = per_bin.iter().sum();
        assert!(per_bin[0] / total > 0.99, "{per_bin:?}");
    }

    #[test]
    fn rotation_changes_descriptor() {
        let mut p = Raster::filled(24, 24, 0.2);
        for r in 0..24 {
            for c in 8..14 {
                p.set(r, c, 0.8);
            }
        }
        let mut q = Raster::filled(24, 24, 0.2);
        for r in 8..14 {
            for c in 0..24 {
                q.set(r, c, 0.8);
            }
        }
        let cfg = HogConfig::default();
        let (a, b) = (hog(&p, &cfg).unwrap(), hog(&q, &cfg).unwrap());
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(dist > 0.0);
        assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn untileable_patch_is_rejected() {
        assert!(hog(&Raster::filled(20, 20, 0.0), &HogConfig::default()).is_err());
        assert!(hog(&Raster::filled(8, 8, 0.0), &HogConfig::default()).is_err());
    }
}
