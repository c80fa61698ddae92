//! Checks shared by the focused test files and the acceptance run.
#![allow(dead_code)]

pub mod brute;

use std::collections::BTreeMap;

use graspforge::collect::TrialRecord;
use graspforge::geometry::Vec2;
use graspforge::learner::{softmax_xent, Arch, Network};
use graspforge::patch::{bin_angle, AugmentSource, PatchConfig, PatchGeometry, RotationMode, N_BINS};
use graspforge::scene::{
    generate_scene, grasp_oracle, render, GraspConfig, GripperSpec, ObjectShape, RenderStyle, ShapeLibraryConfig,
    Workspace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct OracleCheck {
    pub pairs: usize,
    pub disagreements: Vec<String>,
    pub reasons: BTreeMap<String, usize>,
}

/// Fast oracle versus the brute-force one on random (scene, grasp) pairs.
pub fn oracle_agreement(pairs: usize) -> OracleCheck {
    let grip = GripperSpec::default();
    let sc = brute::scenes(50, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut out = OracleCheck {
        pairs,
        disagreements: Vec::new(),
        reasons: BTreeMap::new(),
    };
    for k in 0..pairs {
        let s = &sc[k % sc.len()];
        let g = brute::random_grasp(s, &mut rng);
        let fast = grasp_oracle(s, &g, &grip);
        let slow = brute::brute(s, &g, &grip);
        if (fast.success, fast.failure_reason) != slow {
            out.disagreements
                .push(format!("pair {k}: {g:?} fast {:?} brute {slow:?}", fast.failure_reason));
        }
        *out.reasons.entry(format!("{:?}", fast.failure_reason)).or_insert(0) += 1;
    }
    out
}

pub struct EquivarianceCheck {
    pub checked: usize,
    pub failures: usize,
    pub successes: usize,
}

/// Rotates and translates scene and grasp together; the verdict, the
/// failure reason and the contact width must not change.
pub fn oracle_equivariance(pairs: usize) -> EquivarianceCheck {
    let grip = GripperSpec::default();
    let sc = brute::scenes(40, 500);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = EquivarianceCheck {
        checked: 0,
        failures: 0,
        successes: 0,
    };
    while out.checked < pairs {
        let s = &sc[out.checked % sc.len()];
        let g = brute::random_grasp(s, &mut rng);
        let base = grasp_oracle(s, &g, &grip);
        let phi = rng.random_range(-180.0..180.0);
        let about = Vec2::new(200.0, 200.0);
        let off = Vec2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let moved = s.rotated(phi, about).translated(off);
        if !moved.within_workspace() {
            continue;
        }
        let moved_out = grasp_oracle(&moved, &g.rotated(phi, about).translated(off), &grip);
        let widths_agree = match (moved_out.contact_width_mm, base.contact_width_mm) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-6,
            (a, b) => a.is_none() == b.is_none(),
        };
        if moved_out.success != base.success || moved_out.failure_reason != base.failure_reason || !widths_agree {
            out.failures += 1;
        }
        out.checked += 1;
        out.successes += base.success as usize;
    }
    out
}

pub fn record(x: f64, y: f64, theta: f64) -> TrialRecord {
    TrialRecord {
        scene_id: 0,
        grasp: GraspConfig::new(x, y, theta),
        label: true,
        stage: 0,
        patch_path: String::new(),
        score: None,
    }
}

pub fn patch_setup() -> (Workspace, RenderStyle, PatchGeometry, Vec<ObjectShape>) {
    let grip = GripperSpec::default();
    let ws = Workspace::new(400.0, 400.0, 0.5).unwrap();
    let style = RenderStyle::default();
    let cfg = PatchConfig {
        input_side: 24,
        ..PatchConfig::default()
    };
    let geo = PatchGeometry::new(&cfg, &grip, &ws, &style).unwrap();
    let outlines = ShapeLibraryConfig::default().build(&grip).seen.outlines();
    (ws, style, geo, outlines)
}

/// Augments random records by k·10° and counts label bins that did not
/// shift by exactly k.
pub fn bin_shift_failures(n: usize) -> usize {
    let (ws, style, geo, outlines) = patch_setup();
    let scene = generate_scene(11, 6, &outlines, ws).unwrap();
    let (image, _) = render(&scene, &style);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for _ in 0..n {
        let theta = rng.random_range(0.0..180.0);
        let k: usize = rng.random_range(0..36);
        let rec = record(rng.random_range(60.0..340.0), rng.random_range(60.0..340.0), theta);
        let src = AugmentSource::new(&image, &rec, 0, &geo).unwrap();
        let s = src.rotated(k as f64 * 10.0, &geo, RotationMode::BinAligned);
        let shifted = s.bin.index() == (bin_angle(theta).index() + k) % N_BINS;
        if !shifted || s.bin != bin_angle(theta + k as f64 * 10.0) {
            failures += 1;
        }
    }
    failures
}

pub struct GradCheck {
    pub probes: usize,
    pub max_rel: f64,
    /// Nonzero gradient entries found in heads other than the sample's.
    pub foreign_nonzero: usize,
}

pub fn grad_arch() -> Arch {
    Arch {
        input_side: 12,
        kernel: 3,
        conv_channels: vec![3, 4],
        fc: vec![10],
        groups: N_BINS,
        classes: 2,
    }
}

/// Own-head cross-entropy computed by a plain forward pass.
fn own_loss(net: &Network, x: &[f32], group: usize, class: usize) -> f64 {
    let a = net.forward(x).unwrap();
    softmax_xent(a.row(group), class).0
}

/// Central differences with step `h` against backpropagation. Each probe
/// draws a fresh sample and one parameter of the trunk or the sample's
/// head. Relative error uses `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn gradient_check(probes: usize, h: f64, seed: u64) -> GradCheck {
    let arch = grad_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(&arch, 0.3, &mut rng).unwrap();
    let mut out = GradCheck {
        probes,
        max_rel: 0.0,
        foreign_nonzero: 0,
    };
    let n_in = net.input_len();
    let mut scratch = net.scratch();
    for _ in 0..probes {
        let x: Vec<f32> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let group = rng.random_range(0..arch.groups);
        let class = rng.random_range(0..2);
        let mut grad = vec![0.0; net.params.len()];
        net.forward_into(&x, &mut scratch).unwrap();
        net.backward_into(&mut scratch, group, class, 1.0, &mut grad);
        for g in (0..arch.groups).filter(|&g| g != group) {
            for r in net.layout().head_ranges(g) {
                out.foreign_nonzero += grad[r].iter().filter(|&&v| v != 0.0).count();
            }
        }
        // a trunk parameter or one of the sample's own head parameters
        let own: Vec<usize> = net.layout().head_ranges(group).into_iter().flatten().collect();
        let i = if rng.random_bool(0.7) {
            rng.random_range(0..net.layout().head_start())
        } else {
            own[rng.random_range(0..own.len())]
        };
        let p0 = net.params[i];
        net.params[i] = p0 + h;
        let up = own_loss(&net, &x, group, class);
        net.params[i] = p0 - h;
        let down = own_loss(&net, &x, group, class);
        net.params[i] = p0;
        let numeric = (up - down) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1e-8);
        out.max_rel = out.max_rel.max(rel);
    }
    out
}
