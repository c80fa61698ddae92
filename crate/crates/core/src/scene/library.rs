//! Procedural object library: a family of outline categories with random
//! dimensions, split into training, stage-novel and held-out test sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grasp_oracle, GraspConfig, GripperSpec, ObjectId, ObjectShape, Placement, Pose, Scene, Workspace};
use crate::geometry::{self, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeCategory {
    Box,
    Disc,
    Ellipse,
    Wedge,
    Ell,
    Trapezoid,
}

impl ShapeCategory {
    pub const ALL: [ShapeCategory; 6] = [
        ShapeCategory::Box,
        ShapeCategory::Disc,
        ShapeCategory::Ellipse,
        ShapeCategory::Wedge,
        ShapeCategory::Ell,
        ShapeCategory::Trapezoid,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeCategory::Box => "box",
            ShapeCategory::Disc => "disc",
            ShapeCategory::Ellipse => "ellipse",
            ShapeCategory::Wedge => "wedge",
            ShapeCategory::Ell => "ell",
            ShapeCategory::Trapezoid => "trapezoid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryShape {
    pub name: String,
    pub category: ShapeCategory,
    pub shape: ObjectShape,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShapeLibrary {
    pub shapes: Vec<LibraryShape>,
}

impl ShapeLibrary {
    pub fn outlines(&self) -> Vec<ObjectShape> {
        self.shapes.iter().map(|s| s.shape.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.shapes.iter().map(|s| s.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// True when no outline or name is shared with `other`.
    pub fn is_disjoint_from(&self, other: &ShapeLibrary) -> bool {
        self.shapes
            .iter()
            .all(|a| other.shapes.iter().all(|b| a.name != b.name && a.shape != b.shape))
    }

    pub fn concat(&self, other: &ShapeLibrary) -> ShapeLibrary {
        let mut shapes = self.shapes.clone();
        shapes.extend(other.shapes.iter().cloned());
        ShapeLibrary { shapes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeLibraryConfig {
    pub seed: u64,
    /// Objects used for random-trial collection.
    pub seen: usize,
    /// Extra objects introduced during staged collection.
    pub novel: usize,
    /// Objects reserved for the test set.
    pub heldout: usize,
    /// Minimum isolated random-grasp success rate an outline must reach to
    /// enter the library.
    pub min_grasp_rate: f64,
    pub friction_half_angle_deg: f64,
}

impl Default for ShapeLibraryConfig {
    fn default() -> Self {
        Self {
            seed: 2016,
            seen: 36,
            novel: 12,
            heldout: 12,
            min_grasp_rate: 0.03,
            friction_half_angle_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibrarySplit {
    pub seen: ShapeLibrary,
    pub novel: ShapeLibrary,
    pub heldout: ShapeLibrary,
}

impl ShapeLibraryConfig {
    /// Generates all three splits from one stream; names are globally
    /// unique so the splits are disjoint by construction.
    pub fn build(&self, gripper: &GripperSpec) -> LibrarySplit {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut next = 0usize;
        let mut take = |n: usize, rng: &mut ChaCha8Rng| {
            let shapes = (0..n)
                .map(|_| {
                    let category = ShapeCategory::ALL[next % ShapeCategory::ALL.len()];
                    let s = graspable_shape(category, self, gripper, rng);
                    let name = format!("{}-{:03}", category.name(), next);
                    next += 1;
                    LibraryShape {
                        name,
                        category,
                        shape: s,
                    }
                })
                .collect();
            ShapeLibrary { shapes }
        };
        let seen = take(self.seen, &mut rng);
        let novel = take(self.novel, &mut rng);
        let heldout = take(self.heldout, &mut rng);
        LibrarySplit { seen, novel, heldout }
    }
}

fn graspable_shape(
    category: ShapeCategory,
    cfg: &ShapeLibraryConfig,
    gripper: &GripperSpec,
    rng: &mut ChaCha8Rng,
) -> ObjectShape {
    loop {
        let shape = random_shape(category, cfg.friction_half_angle_deg, rng);
        if isolated_grasp_rate(&shape, gripper, 400, rng.random()) >= cfg.min_grasp_rate {
            return shape;
        }
    }
}

/// Fraction of uniformly random grasps (over the outline's bounding box,
/// uniform angle) that succeed on the object alone.
pub fn isolated_grasp_rate(shape: &ObjectShape, gripper: &GripperSpec, n: usize, seed: u64) -> f64 {
    let r = shape.radius();
    let side = 4.0 * r + 4.0 * gripper.max_open_mm;
    let ws = Workspace::new(side, side, 1.0).expect("positive extent");
    let pose = Pose {
        x_mm: side / 2.0,
        y_mm: side / 2.0,
        rotation_deg: 0.0,
    };
    let pl = Placement::new(ObjectId(0), shape.clone(), pose);
    let bb = pl.bounds();
    let scene = Scene::from_placements(ws, vec![pl], 0).expect("single object fits");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..n)
        .filter(|_| {
            let g = GraspConfig::new(
                rng.random_range(bb.min.x..bb.max.x),
                rng.random_range(bb.min.y..bb.max.y),
                rng.random_range(0.0..180.0),
            );
            grasp_oracle(&scene, &g, gripper).success
        })
        .count();
    hits as f64 / n as f64
}

fn centered(v: Vec<Vec2>) -> Vec<Vec2> {
    let c = geometry::centroid(&v);
    v.into_iter().map(|p| p - c).collect()
}

fn ellipse(a: f64, b: f64, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            Vec2::new(a * t.cos(), b * t.sin())
        })
        .collect()
}

pub(crate) fn random_shape(category: ShapeCategory, friction: f64, rng: &mut ChaCha8Rng) -> ObjectShape {
    let verts = match category {
        ShapeCategory::Box => {
            let w = rng.random_range(28.0..82.0);
            let l = rng.random_range(w + 5.0..140.0);
            centered(vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(w, 0.0),
                Vec2::new(w, l),
                Vec2::new(0.0, l),
            ])
        }
        ShapeCategory::Disc => {
            let d: f64 = rng.random_range(32.0..90.0);
            ellipse(d / 2.0, d / 2.0, 24)
        }
        ShapeCategory::Ellipse => {
            let a: f64 = rng.random_range(28.0..60.0);
            let b = rng.random_range(16.0..a * 0.8);
            ellipse(a, b, 24)
        }
        ShapeCategory::Wedge => {
            // triangle with its corners cut off: cut edges face the
            // opposite sides, giving parallel grasp surfaces
            let s: f64 = rng.random_range(70.0..130.0);
            let cut = rng.random_range(0.18..0.3);
            let tri = [
                Vec2::new(0.0, 0.0),
                Vec2::new(s, 0.0),
                Vec2::new(s / 2.0, s * 0.866_025_403_784_438_6),
            ];
            let mut v = Vec::with_capacity(6);
            for i in 0..3 {
                let p = tri[i];
                let prev = tri[(i + 2) % 3];
                let next = tri[(i + 1) % 3];
                v.push(p + (prev - p) * cut);
                v.push(p + (next - p) * cut);
            }
            centered(v)
        }
        ShapeCategory::Ell => {
            let w: f64 = rng.random_range(60.0..130.0);
            let h = rng.random_range(60.0..130.0);
            let t = rng.random_range(24.0..(w.min(h) * 0.6).max(25.0));
            centered(vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(w, 0.0),
                Vec2::new(w, t),
                Vec2::new(t, t),
                Vec2::new(t, h),
                Vec2::new(0.0, h),
            ])
        }
        ShapeCategory::Trapezoid => {
            let b: f64 = rng.random_range(50.0..120.0);
            let a = rng.random_range(25.0..b - 10.0);
            let h = rng.random_range(30.0..80.0);
            let off = (b - a) / 2.0;
            centered(vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(b, 0.0),
                Vec2::new(b - off, h),
                Vec2::new(off, h),
            ])
        }
    };
    let shade = rng.random_range(0.15..0.6);
    ObjectShape::new(verts, friction, shade).expect("procedural outlines are simple")
}
