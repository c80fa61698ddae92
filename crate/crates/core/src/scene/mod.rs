//! Simulated table-top: polygonal objects on a bounded workspace, rendering,
//! and the geometric grasp oracle that stands in for lift-and-sense
//! annotation.

mod io;
mod library;
mod oracle;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Aabb, Vec2};

pub use io::{parse_scenes, write_scene, write_scenes};
pub(crate) use library::random_shape;
pub use library::{LibraryShape, LibrarySplit, ShapeCategory, ShapeLibrary, ShapeLibraryConfig};
pub use oracle::{grasp_oracle, reduce_angle, FailureReason, GraspConfig, GraspOutcome, GripperSpec};
pub use render::{render, render_occupancy, RenderStyle};

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid workspace: {0}")]
    InvalidWorkspace(String),
    #[error("invalid object shape: {0}")]
    InvalidShape(String),
    #[error("could not place object {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },
    #[error("scene needs at least one object and a non-empty library")]
    EmptyRequest,
    #[error("unknown object id {0}")]
    UnknownId(u32),
    #[error("placement of object {0} leaves the workspace or overlaps another object")]
    InvalidPlacement(u32),
    #[error("scene parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workspace {
    pub width_mm: f64,
    pub height_mm: f64,
    pub px_per_mm: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            width_mm: 400.0,
            height_mm: 400.0,
            px_per_mm: 0.5,
        }
    }
}

impl Workspace {
    pub fn new(width_mm: f64, height_mm: f64, px_per_mm: f64) -> Result<Self, SceneError> {
        let ws = Self {
            width_mm,
            height_mm,
            px_per_mm,
        };
        ws.validate()?;
        Ok(ws)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.width_mm) || !ok(self.height_mm) || !ok(self.px_per_mm) {
            return Err(SceneError::InvalidWorkspace(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn raster_width(&self) -> usize {
        (self.width_mm * self.px_per_mm).round() as usize
    }

    pub fn raster_height(&self) -> usize {
        (self.height_mm * self.px_per_mm).round() as usize
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.width_mm / 2.0, self.height_mm / 2.0)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width_mm && p.y <= self.height_mm
    }

    /// Pixel `(row, col)` whose square contains `p`.
    pub fn pixel_of(&self, p: Vec2) -> (i64, i64) {
        (
            (p.y * self.px_per_mm).floor() as i64,
            (p.x * self.px_per_mm).floor() as i64,
        )
    }

    /// Millimetre position of the centre of pixel `(row, col)`.
    pub fn pixel_center(&self, row: f64, col: f64) -> Vec2 {
        Vec2::new((col + 0.5) / self.px_per_mm, (row + 0.5) / self.px_per_mm)
    }
}

/// A rigid object outline in its own frame, counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectShape {
    vertices: Vec<Vec2>,
    friction_half_angle_deg: f64,
    shade: f64,
}

impl ObjectShape {
    /// Validates the outline and normalizes it to counterclockwise order.
    pub fn new(mut vertices: Vec<Vec2>, friction_half_angle_deg: f64, shade: f64) -> Result<Self, SceneError> {
        if vertices.len() < 3 {
            return Err(SceneError::InvalidShape("fewer than 3 vertices".into()));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(SceneError::InvalidShape("non-finite vertex".into()));
        }
        if !geometry::is_simple(&vertices) {
            return Err(SceneError::InvalidShape("polygon is not simple".into()));
        }
        let area = geometry::signed_area(&vertices);
        if area == 0.0 {
            return Err(SceneError::InvalidShape("zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        if !(friction_half_angle_deg > 0.0 && friction_half_angle_deg < 90.0) {
            return Err(SceneError::InvalidShape(format!(
                "friction half-angle {friction_half_angle_deg} outside (0, 90)"
            )));
        }
        if !(0.0..=1.0).contains(&shade) {
            return Err(SceneError::InvalidShape(format!("shade {shade} outside [0, 1]")));
        }
        Ok(Self {
            vertices,
            friction_half_angle_deg,
            shade,
        })
    }

    /// Axis-aligned `w × h` rectangle centred on the origin.
    pub fn rectangle(w: f64, h: f64) -> Self {
        let (a, b) = (w / 2.0, h / 2.0);
        Self::new(
            vec![Vec2::new(-a, -b), Vec2::new(a, -b), Vec2::new(a, b), Vec2::new(-a, b)],
            15.0,
            0.4,
        )
        .expect("rectangle is valid")
    }

    /// Regular `n`-gon with circumradius `r`.
    pub fn regular(n: usize, r: f64) -> Self {
        let verts = (0..n)
            .map(|i| Vec2::from_angle_deg(360.0 * i as f64 / n as f64) * r)
            .collect();
        Self::new(verts, 15.0, 0.4).expect("regular polygon is valid")
    }

    pub fn with_friction(mut self, deg: f64) -> Result<Self, SceneError> {
        Self::new(std::mem::take(&mut self.vertices), deg, self.shade)
    }

    pub fn with_shade(mut self, shade: f64) -> Result<Self, SceneError> {
        Self::new(std::mem::take(&mut self.vertices), self.friction_half_angle_deg, shade)
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn friction_half_angle_deg(&self) -> f64 {
        self.friction_half_angle_deg
    }

    pub fn shade(&self) -> f64 {
        self.shade
    }

    pub fn area(&self) -> f64 {
        geometry::signed_area(&self.vertices)
    }

    /// Largest vertex distance from the local origin.
    pub fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x_mm: f64,
    pub y_mm: f64,
    pub rotation_deg: f64,
}

impl Pose {
    pub fn apply(&self, v: Vec2) -> Vec2 {
        v.rotated_deg(self.rotation_deg) + Vec2::new(self.x_mm, self.y_mm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    id: ObjectId,
    shape: ObjectShape,
    pose: Pose,
    world: Vec<Vec2>,
    bounds: Aabb,
}

impl Placement {
    pub fn new(id: ObjectId, shape: ObjectShape, pose: Pose) -> Self {
        let world: Vec<Vec2> = shape.vertices().iter().map(|&v| pose.apply(v)).collect();
        let bounds = Aabb::of(&world);
        Self {
            id,
            shape,
            pose,
            world,
            bounds,
        }
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    pub fn shape(&self) -> &ObjectShape {
        &self.shape
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    /// Outline in workspace coordinates, counterclockwise.
    pub fn world(&self) -> &[Vec2] {
        &self.world
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.bounds.min.x
            && p.x <= self.bounds.max.x
            && p.y >= self.bounds.min.y
            && p.y <= self.bounds.max.y
            && geometry::point_in_polygon(p, &self.world)
    }
}

/// Immutable arrangement of objects on the workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    workspace: Workspace,
    placements: Vec<Placement>,
    rng_seed: u64,
}

impl Scene {
    pub fn empty(workspace: Workspace, rng_seed: u64) -> Self {
        Self {
            workspace,
            placements: Vec::new(),
            rng_seed,
        }
    }

    /// Builds a scene, checking containment and pairwise non-overlap.
    pub fn from_placements(
        workspace: Workspace,
        placements: Vec<Placement>,
        rng_seed: u64,
    ) -> Result<Self, SceneError> {
        workspace.validate()?;
        for (i, p) in placements.iter().enumerate() {
            if !p.world.iter().all(|&v| workspace.contains(v)) {
                return Err(SceneError::InvalidPlacement(p.id.0));
            }
            if placements[..i]
                .iter()
                .any(|q| q.id == p.id || geometry::polygons_overlap(q.world(), p.world()))
            {
                return Err(SceneError::InvalidPlacement(p.id.0));
            }
        }
        Ok(Self {
            workspace,
            placements,
            rng_seed,
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn get(&self, id: ObjectId) -> Option<&Placement> {
        self.placements.iter().find(|p| p.id == id)
    }

    /// The object whose interior contains `p`, if any.
    pub fn object_at(&self, p: Vec2) -> Option<&Placement> {
        self.placements.iter().find(|pl| pl.contains(p))
    }

    pub fn remove_object(&self, id: ObjectId) -> Result<Scene, SceneError> {
        let idx = self
            .placements
            .iter()
            .position(|p| p.id == id)
            .ok_or(SceneError::UnknownId(id.0))?;
        let mut placements = self.placements.clone();
        placements.remove(idx);
        Ok(Scene {
            workspace: self.workspace,
            placements,
            rng_seed: self.rng_seed,
        })
    }

    /// Rigid rotation of every placement by `deg` about `center`. The
    /// result is not re-validated against the workspace bounds.
    pub fn rotated(&self, deg: f64, center: Vec2) -> Scene {
        self.map_poses(|p| {
            let c = (Vec2::new(p.x_mm, p.y_mm) - center).rotated_deg(deg) + center;
            Pose {
                x_mm: c.x,
                y_mm: c.y,
                rotation_deg: p.rotation_deg + deg,
            }
        })
    }

    pub fn translated(&self, offset: Vec2) -> Scene {
        self.map_poses(|p| Pose {
            x_mm: p.x_mm + offset.x,
            y_mm: p.y_mm + offset.y,
            rotation_deg: p.rotation_deg,
        })
    }

    fn map_poses(&self, f: impl Fn(Pose) -> Pose) -> Scene {
        Scene {
            workspace: self.workspace,
            placements: self
                .placements
                .iter()
                .map(|p| Placement::new(p.id, p.shape.clone(), f(p.pose)))
                .collect(),
            rng_seed: self.rng_seed,
        }
    }

    /// True when every vertex lies inside the workspace.
    pub fn within_workspace(&self) -> bool {
        self.placements
            .iter()
            .all(|p| p.world.iter().all(|&v| self.workspace.contains(v)))
    }
}

/// Rejection-sampling bound used by [`generate_scene`].
pub const DEFAULT_MAX_REJECTIONS: usize = 500;

/// Places `n_objects` shapes drawn uniformly from `library` at random
/// non-overlapping poses.
pub fn generate_scene(
    seed: u64,
    n_objects: usize,
    library: &[ObjectShape],
    workspace: Workspace,
) -> Result<Scene, SceneError> {
    generate_scene_with(seed, n_objects, library, workspace, DEFAULT_MAX_REJECTIONS)
}

pub fn generate_scene_with(
    seed: u64,
    n_objects: usize,
    library: &[ObjectShape],
    workspace: Workspace,
    max_rejections: usize,
) -> Result<Scene, SceneError> {
    if n_objects == 0 || library.is_empty() {
        return Err(SceneError::EmptyRequest);
    }
    workspace.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placements: Vec<Placement> = Vec::with_capacity(n_objects);
    for index in 0..n_objects {
        let shape = &library[rng.random_range(0..library.len())];
        let mut placed = false;
        for _ in 0..max_rejections {
            let rotation_deg = rng.random_range(0.0..360.0);
            let local: Vec<Vec2> = shape.vertices().iter().map(|v| v.rotated_deg(rotation_deg)).collect();
            let bb = Aabb::of(&local);
            let (lo_x, hi_x) = (-bb.min.x, workspace.width_mm - bb.max.x);
            let (lo_y, hi_y) = (-bb.min.y, workspace.height_mm - bb.max.y);
            if lo_x > hi_x || lo_y > hi_y {
                continue;
            }
            let pose = Pose {
                x_mm: rng.random_range(lo_x..=hi_x),
                y_mm: rng.random_range(lo_y..=hi_y),
                rotation_deg,
            };
            let candidate = Placement::new(ObjectId(index as u32), shape.clone(), pose);
            if !candidate.world.iter().all(|&v| workspace.contains(v)) {
                continue;
            }
            if placements
                .iter()
                .any(|p| geometry::polygons_overlap(p.world(), candidate.world()))
            {
                continue;
            }
            placements.push(candidate);
            placed = true;
            break;
        }
        if !placed {
            return Err(SceneError::PlacementFailure {
                index,
                attempts: max_rejections,
            });
        }
    }
    Ok(Scene {
        workspace,
        placements,
        rng_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws600() -> Workspace {
        Workspace::new(600.0, 600.0, 1.0).unwrap()
    }

    #[test]
    fn workspace_rejects_nonpositive_extents() {
        assert!(Workspace::new(0.0, 10.0, 1.0).is_err());
        assert!(Workspace::new(10.0, 10.0, -1.0).is_err());
        let ws = Workspace::new(100.0, 50.0, 0.3).unwrap();
        assert_eq!((ws.raster_width(), ws.raster_height()), (30, 15));
    }

    #[test]
    fn shape_validation() {
        let tri = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)];
        let s = ObjectShape::new(tri.clone(), 15.0, 0.5).unwrap();
        assert!(s.area() > 0.0, "clockwise input is normalized");
        assert!(ObjectShape::new(tri[..2].to_vec(), 15.0, 0.5).is_err());
        assert!(ObjectShape::new(tri.clone(), 90.0, 0.5).is_err());
        assert!(ObjectShape::new(tri, 15.0, 1.5).is_err());
    }

    #[test]
    fn single_square_scene_is_inside() {
        let lib = [ObjectShape::rectangle(50.0, 50.0)];
        let s = generate_scene(7, 1, &lib, ws600()).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.within_workspace());
        assert_eq!(s, generate_scene(7, 1, &lib, ws600()).unwrap());
    }

    #[test]
    fn placement_failure_is_reported() {
        let lib = [ObjectShape::rectangle(90.0, 90.0)];
        let ws = Workspace::new(100.0, 100.0, 1.0).unwrap();
        let err = generate_scene_with(1, 3, &lib, ws, 50).unwrap_err();
        assert!(matches!(err, SceneError::PlacementFailure { index: 1, attempts: 50 }));
    }

    #[test]
    fn remove_object_semantics() {
        let lib = [ObjectShape::rectangle(40.0, 60.0), ObjectShape::regular(24, 25.0)];
        let s = generate_scene(3, 10, &lib, ws600()).unwrap();
        let id = s.placements()[4].id();
        let r = s.remove_object(id).unwrap();
        assert_eq!(r.len(), 9);
        assert!(r.get(id).is_none());
        for p in r.placements() {
            assert_eq!(Some(p), s.get(p.id()));
        }
        assert_eq!(r.remove_object(id), Err(SceneError::UnknownId(id.0)));
    }

    #[test]
    fn empty_requests_fail() {
        assert_eq!(
            generate_scene(1, 0, &[ObjectShape::rectangle(5.0, 5.0)], ws600()),
            Err(SceneError::EmptyRequest)
        );
        assert_eq!(generate_scene(1, 2, &[], ws600()), Err(SceneError::EmptyRequest));
    }
}
