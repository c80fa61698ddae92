//! Principal-axis grasp heuristic: grasp across the foreground's narrowest
//! direction, and veto objects whose extent is below the gripper minimum.

use serde::{Deserialize, Serialize};

use crate::raster::Raster;
use crate::scene::reduce_angle;

/// Eigen-decomposition of the symmetric matrix `[[a, b], [b, c]]`.
/// Eigenvalues come in ascending order with unit eigenvectors.
pub fn sym_eigen2(a: f64, b: f64, c: f64) -> [(f64, [f64; 2]); 2] {
    let mean = (a + c) / 2.0;
    let half = (a - c) / 2.0;
    let r = half.hypot(b);
    let (lo, hi) = (mean - r, mean + r);
    let vec_for = |l: f64| -> [f64; 2] {
        // two algebraically equivalent candidates; use the longer one
        let v1 = [b, l - a];
        let v2 = [l - c, b];
        let n1 = v1[0].hypot(v1[1]);
        let n2 = v2[0].hypot(v2[1]);
        if n1 == 0.0 && n2 == 0.0 {
            return if l == lo { [1.0, 0.0] } else { [0.0, 1.0] };
        }
        if n1 >= n2 {
            [v1[0] / n1, v1[1] / n1]
        } else {
            [v2[0] / n2, v2[1] / n2]
        }
    };
    if r == 0.0 {
        return [(lo, [1.0, 0.0]), (hi, [0.0, 1.0])];
    }
    [(lo, vec_for(lo)), (hi, vec_for(hi))]
}

/// Foreground mask: pixels that differ from the background shade.
pub fn segment(pixels: &Raster, background: f32, tolerance: f32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..pixels.height() {
        for c in 0..pixels.width() {
            if (pixels.get(r, c) - background).abs() > tolerance {
                out.push((r, c));
            }
        }
    }
    out
}

/// Shape summary the heuristic decides from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Principal {
    /// Direction of least spread, degrees in [0, 180), x = columns,
    /// y = rows. 0 for isotropic foreground.
    pub grasp_angle_deg: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Covariance eigen-analysis of foreground pixel coordinates.
pub fn principal_axes(fg: &[(usize, usize)]) -> Option<Principal> {
    if fg.is_empty() {
        return None;
    }
    let n = fg.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for &(r, c) in fg {
        mx += c as f64;
        my += r as f64;
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(r, c) in fg {
        let dx = c as f64 - mx;
        let dy = r as f64 - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let [(l0, v0), (l1, _)] = sym_eigen2(sxx / n, sxy / n, syy / n);
    let iso = (l1 - l0) <= 1e-12 * l1.abs().max(1.0);
    let angle = if iso {
        0.0
    } else {
        reduce_angle(v0[1].atan2(v0[0]).to_degrees())
    };
    Some(Principal {
        grasp_angle_deg: angle,
        lambda_min: l0,
        lambda_max: l1,
    })
}

/// Absolute difference of two axis angles folded to [0, 90].
pub fn axis_angle_error(a: f64, b: f64) -> f64 {
    let d = reduce_angle(a - b);
    d.min(180.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtentMode {
    /// Compare `2·sqrt(λ_max)` (pixels) to the limit.
    Extent,
    /// Compare `λ_max` (squared pixels) to the limit directly.
    RawEigenvalue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub angle_error_threshold_deg: f64,
    pub eigenvalue_limit: f64,
    pub mode: ExtentMode,
}

impl HeuristicParams {
    pub fn predict(&self, p: Option<&Principal>, theta_deg: f64) -> bool {
        let Some(p) = p else { return false };
        let size = match self.mode {
            ExtentMode::Extent => 2.0 * p.lambda_max.max(0.0).sqrt(),
            ExtentMode::RawEigenvalue => p.lambda_max,
        };
        axis_angle_error(theta_deg, p.grasp_angle_deg) <= self.angle_error_threshold_deg
            && size >= self.eigenvalue_limit
    }
}

/// Foreground connected to the central pixels (4-connectivity): the object
/// the grasp is centred on. Empty when the centre is background.
pub fn center_object(pixels: &Raster, background: f32, tolerance: f32) -> Vec<(usize, usize)> {
    let (w, h) = (pixels.width(), pixels.height());
    let fg = |r: usize, c: usize| (pixels.get(r, c) - background).abs() > tolerance;
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    for r in [(h - 1) / 2, h / 2] {
        for c in [(w - 1) / 2, w / 2] {
            if fg(r, c) && !seen[r * w + c] {
                seen[r * w + c] = true;
                stack.push((r, c));
            }
        }
    }
    let mut out = Vec::new();
    while let Some((r, c)) = stack.pop() {
        out.push((r, c));
        let next = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
        for (nr, nc) in next {
            if nr < h && nc < w && !seen[nr * w + nc] && fg(nr, nc) {
                seen[nr * w + nc] = true;
                stack.push((nr, nc));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Shape summary of the object under the patch centre.
pub fn patch_principal(pixels: &Raster, background: f32) -> Option<Principal> {
    principal_axes(&center_object(pixels, background, FOREGROUND_TOLERANCE))
}

pub fn heuristic_predict(pixels: &Raster, background: f32, theta_deg: f64, params: &HeuristicParams) -> bool {
    params.predict(patch_principal(pixels, background).as_ref(), theta_deg)
}

pub const FOREGROUND_TOLERANCE: f32 = 0.05;

/// Exhaustive grid search for the parameters with the best accuracy on the
/// given (deliberately, the evaluation) data. Ties keep the first point.
pub fn optimistic_param_select(
    inputs: &[(Option<Principal>, f64)],
    labels: &[bool],
    thresholds: &[f64],
    limits: &[f64],
    mode: ExtentMode,
) -> Option<(HeuristicParams, f64)> {
    let mut best: Option<(HeuristicParams, f64)> = None;
    for &t in thresholds {
        for &l in limits {
            let p = HeuristicParams {
                angle_error_threshold_deg: t,
                eigenvalue_limit: l,
                mode,
            };
            let correct = inputs
                .iter()
                .zip(labels)
                .filter(|((pr, th), &y)| p.predict(pr.as_ref(), *th) == y)
                .count();
            let acc = correct as f64 / labels.len().max(1) as f64;
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((p, acc));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigenpairs_satisfy_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let (a, b, c): (f64, f64, f64) = (
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let pairs = sym_eigen2(a, b, c);
            assert!(pairs[0].0 <= pairs[1].0);
            for (l, v) in pairs {
                let av = [a * v[0] + b * v[1], b * v[0] + c * v[1]];
                assert!((av[0] - l * v[0]).abs() < 1e-10 && (av[1] - l * v[1]).abs() < 1e-10);
                assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rectangle_grasps_across_short_axis() {
        // 40 wide (x) by 120 tall (y): short axis is x, angle 0
        let fg: Vec<(usize, usize)> = (0..120).flat_map(|r| (0..40).map(move |c| (r, c))).collect();
        let p = principal_axes(&fg).unwrap();
        assert!(axis_angle_error(p.grasp_angle_deg, 0.0) < 2.0);
        // analytic variances (n²−1)/12
        assert!((p.lambda_max - (120.0f64 * 120.0 - 1.0) / 12.0).abs() < 1e-9);
        assert!((p.lambda_min - (40.0f64 * 40.0 - 1.0) / 12.0).abs() < 1e-9);
    }

    #[test]
    fn disc_ties_to_zero() {
        let fg: Vec<(usize, usize)> = (0..41)
            .flat_map(|r| (0..41).map(move |c| (r, c)))
            .filter(|&(r, c)| (r as f64 - 20.0).powi(2) + (c as f64 - 20.0).powi(2) <= 400.0)
            .collect();
        assert_eq!(principal_axes(&fg).unwrap().grasp_angle_deg, 0.0);
        assert!(principal_axes(&[]).is_none());
    }

    #[test]
    fn center_object_ignores_other_blobs() {
        let mut p = Raster::filled(10, 10, 0.0);
        for r in 3..7 {
            for c in 4..6 {
                p.set(r, c, 1.0);
            }
        }
        p.set(0, 0, 1.0);
        let fg = center_object(&p, 0.0, 0.05);
        assert_eq!(fg.len(), 8);
        assert!(center_object(&Raster::filled(10, 10, 0.0), 0.0, 0.05).is_empty());
        assert_eq!(segment(&p, 0.0, 0.05).len(), 9);
    }

    #[test]
    fn grid_search_is_a_max() {
        let inputs = vec![(principal_axes(&[(0, 0), (0, 1), (0, 2), (1, 1)]), 90.0), (None, 10.0)];
        let labels = [true, false];
        let (p, acc) = optimistic_param_select(&inputs, &labels, &[5.0], &[0.5], ExtentMode::Extent).unwrap();
        assert_eq!(p.angle_error_threshold_deg, 5.0);
        let (_, best) = optimistic_param_select(
            &inputs,
            &labels,
            &[1.0, 5.0, 45.0, 90.0],
            &[0.0, 0.5, 3.0],
            ExtentMode::Extent,
        )
        .unwrap();
        assert!(best >= acc);
    }
}
