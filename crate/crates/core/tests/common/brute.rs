//! Dense ray-marching reimplementation of the grasp oracle.

use graspforge::geometry::Vec2;
use graspforge::scene::{
    generate_scene, FailureReason, GraspConfig, GripperSpec, Scene, ShapeLibraryConfig, Workspace,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 0.1;

fn inside(p: Vec2, poly: &[Vec2]) -> bool {
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y) {
            c = !c;
        }
    }
    c
}

/// Outward unit normal of edge `i`, by probing which side is outside.
fn outward(poly: &[Vec2], i: usize) -> Vec2 {
    let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
    let d = b - a;
    let n = Vec2::new(d.y, -d.x).normalized();
    let mid = (a + b) * 0.5;
    if inside(mid + n * 1e-6, poly) {
        -n
    } else {
        n
    }
}

fn seg_dist(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(d) / d.dot(d)).clamp(0.0, 1.0);
    (a + d * t - p).norm()
}

/// Surface normal at a boundary point: the nearest edge's, or the mean of
/// the two edges meeting at a vertex the point sits on.
fn normal_at(p: Vec2, poly: &[Vec2]) -> Vec2 {
    let n = poly.len();
    if let Some(v) = (0..n).find(|&v| (poly[v] - p).norm() < 1e-7) {
        let prev = (v + n - 1) % n;
        return (outward(poly, prev) + outward(poly, v)).normalized();
    }
    let i = (0..n)
        .min_by(|&i, &j| seg_dist(p, poly[i], poly[(i + 1) % n]).total_cmp(&seg_dist(p, poly[j], poly[(j + 1) % n])))
        .unwrap();
    outward(poly, i)
}

/// Distance along `dir` at which a walk from `c` first leaves `poly`:
/// fixed steps to bracket the crossing, then bisection.
fn march_exit(poly: &[Vec2], c: Vec2, dir: Vec2) -> Option<f64> {
    let mut t = 0.0;
    while inside(c + dir * (t + STEP), poly) {
        t += STEP;
        if t > 2000.0 {
            return None;
        }
    }
    let (mut lo, mut hi) = (t, t + STEP);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if inside(c + dir * mid, poly) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn jaw_hits(scene: &Scene, center: Vec2, axis: Vec2, half_along: f64, half_across: f64) -> bool {
    let across = axis.perp();
    let local = |p: Vec2| ((p - center).dot(axis), (p - center).dot(across));
    let reach = half_along.hypot(half_across);
    for pl in scene.placements() {
        let poly = pl.world();
        if poly.iter().all(|&v| (v - center).norm() > reach + 200.0) {
            continue;
        }
        // vertices of the object strictly inside the jaw
        if poly.iter().any(|&v| {
            let (u, w) = local(v);
            u.abs() < half_along && w.abs() < half_across
        }) {
            return true;
        }
        let nu = (2.0 * half_along / STEP).ceil() as i64;
        let nw = (2.0 * half_across / STEP).ceil() as i64;
        for i in 0..nu {
            let u = -half_along + (i as f64 + 0.5) * (2.0 * half_along / nu as f64);
            for j in 0..nw {
                let w = -half_across + (j as f64 + 0.5) * (2.0 * half_across / nw as f64);
                if inside(center + axis * u + across * w, poly) {
                    return true;
                }
            }
        }
    }
    false
}

pub fn brute(scene: &Scene, g: &GraspConfig, grip: &GripperSpec) -> (bool, Option<FailureReason>) {
    let c = Vec2::new(g.x_mm, g.y_mm);
    let Some(obj) = scene.placements().iter().find(|p| inside(c, p.world())) else {
        return (false, Some(FailureReason::NoContact));
    };
    let poly = obj.world();
    let axis = Vec2::from_angle_deg(g.theta_deg);
    let (Some(tp), Some(tm)) = (march_exit(poly, c, axis), march_exit(poly, c, -axis)) else {
        return (false, Some(FailureReason::NoContact));
    };
    let w = tp + tm;
    if w > grip.max_open_mm {
        return (false, Some(FailureReason::WidthExceedsMax));
    }
    if w < grip.min_close_mm {
        return (false, Some(FailureReason::WidthBelowMin));
    }
    let cone = obj.shape().friction_half_angle_deg().to_radians().cos();
    let np = normal_at(c + axis * tp, poly);
    let nm = normal_at(c - axis * tm, poly);
    if np.dot(axis) < cone || nm.dot(-axis) < cone {
        return (false, Some(FailureReason::AntipodalViolation));
    }
    for (s, t) in [(1.0, tp), (-1.0, tm)] {
        let jc = c + axis * (s * (t + grip.jaw_standoff_mm + grip.jaw_thickness_mm / 2.0));
        if jaw_hits(scene, jc, axis, grip.jaw_thickness_mm / 2.0, grip.jaw_length_mm / 2.0) {
            return (false, Some(FailureReason::JawCollision));
        }
    }
    (true, None)
}

pub fn scenes(n: usize, seed: u64) -> Vec<Scene> {
    let grip = GripperSpec::default();
    let outlines = ShapeLibraryConfig::default().build(&grip).seen.outlines();
    let ws = Workspace::new(400.0, 400.0, 0.5).unwrap();
    (0..n as u64)
        .map(|i| generate_scene(seed + i, 6, &outlines, ws).unwrap())
        .collect()
}

/// Mostly grasps centred on an object, some anywhere on the table.
pub fn random_grasp(scene: &Scene, rng: &mut ChaCha8Rng) -> GraspConfig {
    let theta = rng.random_range(0.0..180.0);
    if rng.random_bool(0.15) {
        return GraspConfig::new(rng.random_range(0.0..400.0), rng.random_range(0.0..400.0), theta);
    }
    let p = &scene.placements()[rng.random_range(0..scene.len())];
    let b = p.bounds();
    GraspConfig::new(
        rng.random_range(b.min.x..b.max.x),
        rng.random_range(b.min.y..b.max.y),
        theta,
    )
}
