//! Region-of-interest sampling over occupancy connected components.

use rand::Rng;

use super::CollectError;
use crate::raster::Mask;
use crate::scene::{GraspConfig, Workspace};

/// Pixel-aligned bounding box `[row0, row0+height) × [col0, col0+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionOfInterest {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl RegionOfInterest {
    pub fn center_px(&self) -> (f64, f64) {
        (
            self.row0 as f64 + self.height as f64 / 2.0,
            self.col0 as f64 + self.width as f64 / 2.0,
        )
    }

    pub fn extent_px(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// True if the millimetre point lies in the box's pixel squares.
    pub fn contains_mm(&self, x_mm: f64, y_mm: f64, ws: &Workspace) -> bool {
        let r = y_mm * ws.px_per_mm;
        let c = x_mm * ws.px_per_mm;
        r >= self.row0 as f64
            && r <= (self.row0 + self.height) as f64
            && c >= self.col0 as f64
            && c <= (self.col0 + self.width) as f64
    }
}

/// Bounding boxes of 4-connected components of occupied pixels, in
/// raster-scan order of each component's first pixel.
pub fn connected_components(occ: &Mask) -> Vec<RegionOfInterest> {
    let (w, h) = (occ.width(), occ.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !occ.data()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            let mut visit = |j: usize| {
                if !seen[j] && occ.data()[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        out.push(RegionOfInterest {
            row0: r0,
            col0: c0,
            height: r1 - r0 + 1,
            width: c1 - c0 + 1,
        });
    }
    out
}

/// Picks one connected component uniformly at random.
pub fn sample_roi<R: Rng + ?Sized>(occ: &Mask, rng: &mut R) -> Result<RegionOfInterest, CollectError> {
    sample_roi_from(&connected_components(occ), rng)
}

pub fn sample_roi_from<R: Rng + ?Sized>(
    components: &[RegionOfInterest],
    rng: &mut R,
) -> Result<RegionOfInterest, CollectError> {
    if components.is_empty() {
        return Err(CollectError::EmptyWorkspace);
    }
    Ok(components[rng.random_range(0..components.len())])
}

/// Uniform point over the span of the ROI's pixel centres, uniform angle in
/// [0, 180). A 1×1 ROI pins the point to its pixel centre.
pub fn sample_grasp<R: Rng + ?Sized>(roi: &RegionOfInterest, ws: &Workspace, rng: &mut R) -> GraspConfig {
    let (x, y) = sample_point(roi, ws, rng);
    GraspConfig::new(x, y, rng.random_range(0.0..180.0))
}

pub(crate) fn sample_point<R: Rng + ?Sized>(roi: &RegionOfInterest, ws: &Workspace, rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let col = roi.col0 as f64 + 0.5 + u * (roi.width - 1) as f64;
    let row = roi.row0 as f64 + 0.5 + v * (roi.height - 1) as f64;
    (col / ws.px_per_mm, row / ws.px_per_mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask_with(w: usize, h: usize, boxes: &[(usize, usize, usize, usize)]) -> Mask {
        let mut m = Mask::new(w, h);
        for &(r0, c0, hh, ww) in boxes {
            for r in r0..r0 + hh {
                for c in c0..c0 + ww {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    #[test]
    fn single_component_bounding_box() {
        let m = mask_with(50, 40, &[(10, 5, 7, 12)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let roi = sample_roi(&m, &mut rng).unwrap();
        assert_eq!(
            roi,
            RegionOfInterest {
                row0: 10,
                col0: 5,
                height: 7,
                width: 12
            }
        );
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_roi(&Mask::new(5, 5), &mut rng),
            Err(CollectError::EmptyWorkspace)
        ));
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let m = mask_with(4, 4, &[(0, 0, 1, 1), (1, 1, 1, 1)]);
        assert_eq!(connected_components(&m).len(), 2);
    }

    #[test]
    fn two_objects_are_chosen_equally_often() {
        let m = mask_with(60, 60, &[(2, 2, 10, 10), (30, 30, 20, 5)]);
        let comps = connected_components(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let first = (0..n)
            .filter(|_| sample_roi_from(&comps, &mut rng).unwrap() == comps[0])
            .count();
        let f = first as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.02, "frequency {f}");
    }

    #[test]
    fn degenerate_roi_pins_position() {
        let ws = Workspace::new(100.0, 100.0, 0.5).unwrap();
        let roi = RegionOfInterest {
            row0: 3,
            col0: 7,
            height: 1,
            width: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = sample_grasp(&roi, &ws, &mut rng);
        let b = sample_grasp(&roi, &ws, &mut rng);
        assert_eq!((a.x_mm, a.y_mm), (15.0, 7.0));
        assert_eq!((b.x_mm, b.y_mm), (15.0, 7.0));
        assert_ne!(a.theta_deg, b.theta_deg);
    }

    #[test]
    fn grasp_moments_and_angle_histogram() {
        let ws = Workspace::new(200.0, 200.0, 1.0).unwrap();
        let roi = RegionOfInterest {
            row0: 40,
            col0: 60,
            height: 50,
            width: 50,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut sum_x = 0.0;
        let mut hist = [0usize; 18];
        for _ in 0..n {
            let g = sample_grasp(&roi, &ws, &mut rng);
            assert!(roi.contains_mm(g.x_mm, g.y_mm, &ws));
            sum_x += g.x_mm;
            hist[(g.theta_deg / 10.0) as usize] += 1;
        }
        let mean_x = sum_x / n as f64;
        assert!((mean_x - 85.0).abs() < 0.85, "mean {mean_x}");
        let expected = n as f64 / 18.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 17 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 40.79, "chi2 {chi2}");
    }
}
