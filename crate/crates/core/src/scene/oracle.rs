use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ObjectId, Placement, Scene};
use crate::geometry::{self, Vec2};

/// Planar top-down grasp: centre on the table and closing-axis direction,
/// counterclockwise from +x, reduced to [0, 180).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspConfig {
    pub x_mm: f64,
    pub y_mm: f64,
    pub theta_deg: f64,
}

impl GraspConfig {
    pub fn new(x_mm: f64, y_mm: f64, theta_deg: f64) -> Self {
        Self {
            x_mm,
            y_mm,
            theta_deg: reduce_angle(theta_deg),
        }
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x_mm, self.y_mm)
    }

    pub fn rotated(&self, deg: f64, about: Vec2) -> Self {
        let c = (self.center() - about).rotated_deg(deg) + about;
        Self::new(c.x, c.y, self.theta_deg + deg)
    }

    pub fn translated(&self, offset: Vec2) -> Self {
        Self::new(self.x_mm + offset.x, self.y_mm + offset.y, self.theta_deg)
    }
}

/// Reduces an angle in degrees to [0, 180).
pub fn reduce_angle(deg: f64) -> f64 {
    let r = deg.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180 for tiny negative inputs
    if r >= 180.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GripperSpec {
    pub max_open_mm: f64,
    pub min_close_mm: f64,
    /// Jaw extent perpendicular to the closing axis.
    pub jaw_length_mm: f64,
    /// Jaw extent along the closing axis.
    pub jaw_thickness_mm: f64,
    /// Gap between a contact point and the inner face of its jaw footprint.
    pub jaw_standoff_mm: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        Self {
            max_open_mm: 75.0,
            min_close_mm: 37.0,
            jaw_length_mm: 20.0,
            jaw_thickness_mm: 8.0,
            jaw_standoff_mm: 3.0,
        }
    }
}

impl GripperSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_close_mm > 0.0 && self.max_open_mm > self.min_close_mm) {
            return Err(format!(
                "gripper widths must satisfy max_open_mm > min_close_mm > 0 (got {} / {})",
                self.max_open_mm, self.min_close_mm
            ));
        }
        if !(self.jaw_length_mm > 0.0 && self.jaw_thickness_mm > 0.0 && self.jaw_standoff_mm >= 0.0) {
            return Err("jaw footprint must be positive".into());
        }
        Ok(())
    }

    /// Jaw footprint rectangle on one side of the closing axis. `side` is
    /// +1 or -1; `contact_t` is the contact's distance from the grasp centre.
    pub fn jaw_footprint(&self, center: Vec2, axis: Vec2, side: f64, contact_t: f64) -> [Vec2; 4] {
        let along = contact_t + self.jaw_standoff_mm + self.jaw_thickness_mm / 2.0;
        geometry::oriented_rect(
            center + axis * (side * along),
            axis,
            self.jaw_thickness_mm / 2.0,
            self.jaw_length_mm / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoContact,
    WidthExceedsMax,
    WidthBelowMin,
    AntipodalViolation,
    JawCollision,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureReason::NoContact => "no_contact",
            FailureReason::WidthExceedsMax => "width_exceeds_max",
            FailureReason::WidthBelowMin => "width_below_min",
            FailureReason::AntipodalViolation => "antipodal_violation",
            FailureReason::JawCollision => "jaw_collision",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspOutcome {
    pub success: bool,
    pub contact_width_mm: Option<f64>,
    pub failure_reason: Option<FailureReason>,
    /// The object between the jaws, when the centre lies on one.
    pub object: Option<ObjectId>,
}

impl GraspOutcome {
    fn fail(reason: FailureReason, width: Option<f64>, object: Option<ObjectId>) -> Self {
        Self {
            success: false,
            contact_width_mm: width,
            failure_reason: Some(reason),
            object,
        }
    }
}

struct Contact {
    t: f64,
    normal: Vec2,
}

/// First crossing of the ray `origin + t·dir` (t > 0) with the outline.
fn first_exit(poly: &[Vec2], origin: Vec2, dir: Vec2) -> Option<Contact> {
    const VERTEX_EPS: f64 = 1e-9;
    let n = poly.len();
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..n {
        let a = poly[i];
        let e = poly[(i + 1) % n] - a;
        let denom = dir.cross(e);
        if denom == 0.0 {
            continue;
        }
        let ac = a - origin;
        let t = ac.cross(e) / denom;
        let s = ac.cross(dir) / denom;
        if t > 0.0 && (0.0..=1.0).contains(&s) && best.is_none_or(|(bt, _, _)| t < bt) {
            best = Some((t, i, s));
        }
    }
    best.map(|(t, i, s)| {
        let normal = if s < VERTEX_EPS {
            geometry::vertex_normal(poly, i)
        } else if s > 1.0 - VERTEX_EPS {
            geometry::vertex_normal(poly, (i + 1) % n)
        } else {
            geometry::edge_normal(poly, i)
        };
        Contact { t, normal }
    })
}

/// Adjudicates a grasp geometrically. Success requires, in order:
/// (a) the centre lies inside an object, whose outline the closing axis
/// exits on both sides; (b) the contact width is within the gripper range;
/// (c) both contact normals lie within the object's friction cone about the
/// closing axis; (d) neither jaw footprint overlaps any object.
pub fn grasp_oracle(scene: &Scene, grasp: &GraspConfig, gripper: &GripperSpec) -> GraspOutcome {
    let center = grasp.center();
    let Some(obj) = scene.object_at(center) else {
        return GraspOutcome::fail(FailureReason::NoContact, None, None);
    };
    evaluate_on_object(scene, obj, center, grasp.theta_deg, gripper)
}

fn evaluate_on_object(
    scene: &Scene,
    obj: &Placement,
    center: Vec2,
    theta_deg: f64,
    gripper: &GripperSpec,
) -> GraspOutcome {
    let id = Some(obj.id());
    let axis = Vec2::from_angle_deg(theta_deg);
    let (Some(plus), Some(minus)) = (
        first_exit(obj.world(), center, axis),
        first_exit(obj.world(), center, -axis),
    ) else {
        return GraspOutcome::fail(FailureReason::NoContact, None, id);
    };
    let width = plus.t + minus.t;
    if width > gripper.max_open_mm {
        return GraspOutcome::fail(FailureReason::WidthExceedsMax, Some(width), id);
    }
    if width < gripper.min_close_mm {
        return GraspOutcome::fail(FailureReason::WidthBelowMin, Some(width), id);
    }
    let cone = obj.shape().friction_half_angle_deg().to_radians().cos();
    if plus.normal.dot(axis) < cone || minus.normal.dot(-axis) < cone {
        return GraspOutcome::fail(FailureReason::AntipodalViolation, Some(width), id);
    }
    for (side, t) in [(1.0, plus.t), (-1.0, minus.t)] {
        let jaw = gripper.jaw_footprint(center, axis, side, t);
        if scene
            .placements()
            .iter()
            .any(|p| geometry::polygons_overlap(&jaw, p.world()))
        {
            return GraspOutcome::fail(FailureReason::JawCollision, Some(width), id);
        }
    }
    GraspOutcome {
        success: true,
        contact_width_mm: Some(width),
        failure_reason: None,
        object: id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectShape, Pose, Workspace};

    fn single(shape: ObjectShape, rot: f64) -> Scene {
        let ws = Workspace::new(400.0, 400.0, 1.0).unwrap();
        let p = Placement::new(
            ObjectId(0),
            shape,
            Pose {
                x_mm: 200.0,
                y_mm: 200.0,
                rotation_deg: rot,
            },
        );
        Scene::from_placements(ws, vec![p], 1).unwrap()
    }

    #[test]
    fn rectangle_short_axis_succeeds() {
        // 50 mm along x, 120 mm along y
        let s = single(ObjectShape::rectangle(50.0, 120.0), 0.0);
        let out = grasp_oracle(&s, &GraspConfig::new(200.0, 200.0, 0.0), &GripperSpec::default());
        assert!(out.success, "{out:?}");
        assert!((out.contact_width_mm.unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(out.object, Some(ObjectId(0)));
    }

    #[test]
    fn rectangle_long_axis_is_too_wide() {
        let s = single(ObjectShape::rectangle(50.0, 120.0), 0.0);
        let out = grasp_oracle(&s, &GraspConfig::new(200.0, 200.0, 90.0), &GripperSpec::default());
        assert_eq!(out.failure_reason, Some(FailureReason::WidthExceedsMax));
        assert!((out.contact_width_mm.unwrap() - 120.0).abs() < 1e-9);
    }

    #[test]
    fn thin_disc_is_below_min_width() {
        let s = single(ObjectShape::regular(32, 15.0), 0.0);
        for theta in [0.0, 17.0, 45.0, 101.0, 179.0] {
            let out = grasp_oracle(&s, &GraspConfig::new(200.0, 200.0, theta), &GripperSpec::default());
            assert_eq!(out.failure_reason, Some(FailureReason::WidthBelowMin), "theta {theta}");
        }
    }

    #[test]
    fn empty_table_is_no_contact() {
        let s = single(ObjectShape::rectangle(50.0, 50.0), 0.0);
        let out = grasp_oracle(&s, &GraspConfig::new(20.0, 20.0, 30.0), &GripperSpec::default());
        assert_eq!(out.failure_reason, Some(FailureReason::NoContact));
        assert_eq!(out.object, None);
    }

    #[test]
    fn slanted_closing_axis_violates_friction_cone() {
        let s = single(ObjectShape::rectangle(50.0, 120.0), 0.0);
        let g = GripperSpec::default();
        assert!(grasp_oracle(&s, &GraspConfig::new(200.0, 200.0, 14.0), &g).success);
        let out = grasp_oracle(&s, &GraspConfig::new(200.0, 200.0, 16.0), &g);
        assert_eq!(out.failure_reason, Some(FailureReason::AntipodalViolation));
    }

    #[test]
    fn neighbour_under_jaw_collides() {
        let ws = Workspace::new(400.0, 400.0, 1.0).unwrap();
        let a = Placement::new(
            ObjectId(0),
            ObjectShape::rectangle(50.0, 120.0),
            Pose {
                x_mm: 200.0,
                y_mm: 200.0,
                rotation_deg: 0.0,
            },
        );
        // right face of `a` at x = 225; neighbour starts at x = 230
        let b = Placement::new(
            ObjectId(1),
            ObjectShape::rectangle(20.0, 40.0),
            Pose {
                x_mm: 240.0,
                y_mm: 200.0,
                rotation_deg: 0.0,
            },
        );
        let s = Scene::from_placements(ws, vec![a, b], 0).unwrap();
        let out = grasp_oracle(&s, &GraspConfig::new(200.0, 200.0, 0.0), &GripperSpec::default());
        assert_eq!(out.failure_reason, Some(FailureReason::JawCollision));
    }

    #[test]
    fn angle_reduction() {
        assert_eq!(reduce_angle(180.0), 0.0);
        assert_eq!(reduce_angle(-10.0), 170.0);
        assert_eq!(reduce_angle(-1e-20), 0.0);
        assert_eq!(GraspConfig::new(0.0, 0.0, 370.0).theta_deg, 10.0);
    }
}
