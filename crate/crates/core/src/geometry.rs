//! Planar geometry on millimetre coordinates: vectors, simple polygons,
//! containment and overlap tests.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `deg` degrees counterclockwise from +x.
    pub fn from_angle_deg(deg: f64) -> Self {
        let r = deg.to_radians();
        Self::new(r.cos(), r.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated_deg(self, deg: f64) -> Vec2 {
        let (s, c) = deg.to_radians().sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of(points: &[Vec2]) -> Aabb {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Aabb { min, max }
    }

    /// True if the open interiors of the boxes intersect.
    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x < o.max.x && o.min.x < self.max.x && self.min.y < o.max.y && o.min.y < self.max.y
    }
}

/// Signed shoelace area; positive for counterclockwise winding.
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * acc
}

pub fn centroid(poly: &[Vec2]) -> Vec2 {
    let n = poly.len();
    let mut a = 0.0;
    let mut c = Vec2::default();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let w = p.cross(q);
        a += w;
        c = c + (p + q) * w;
    }
    c * (1.0 / (3.0 * a))
}

/// Even-odd crossing test. Points exactly on the boundary may go either way.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = poly[i];
        let b = poly[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Proper crossing of segments `ab` and `cd`: they intersect at a single
/// point interior to both. Touching and collinear overlap are excluded.
pub fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Closed-segment intersection including touching endpoints.
fn segments_touch(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}

/// A polygon is simple when no two non-adjacent edges meet.
pub fn is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let c = poly[j];
            let d = poly[(j + 1) % n];
            if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// True if the interiors of two simple polygons overlap. Shared boundary
/// (touching) does not count as overlap.
pub fn polygons_overlap(a: &[Vec2], b: &[Vec2]) -> bool {
    if !Aabb::of(a).overlaps(&Aabb::of(b)) {
        return false;
    }
    let (na, nb) = (a.len(), b.len());
    for i in 0..na {
        let (p, q) = (a[i], a[(i + 1) % na]);
        for j in 0..nb {
            if segments_cross(p, q, b[j], b[(j + 1) % nb]) {
                return true;
            }
        }
    }
    // No proper crossings: either disjoint, touching, or nested.
    a.iter().any(|&p| point_in_polygon(p, b) && !on_boundary(p, b))
        || b.iter().any(|&p| point_in_polygon(p, a) && !on_boundary(p, a))
        || edge_midpoints_inside(a, b)
        || edge_midpoints_inside(b, a)
}

fn edge_midpoints_inside(a: &[Vec2], b: &[Vec2]) -> bool {
    let n = a.len();
    (0..n).any(|i| {
        let m = (a[i] + a[(i + 1) % n]) * 0.5;
        point_in_polygon(m, b) && !on_boundary(m, b)
    })
}

fn on_boundary(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    (0..n).any(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]) < 1e-9)
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Outward unit normal of edge `i` (from vertex `i` to `i+1`) of a
/// counterclockwise polygon.
pub fn edge_normal(poly: &[Vec2], i: usize) -> Vec2 {
    let a = poly[i];
    let b = poly[(i + 1) % poly.len()];
    let e = b - a;
    Vec2::new(e.y, -e.x).normalized()
}

/// Angular-bisector normal at vertex `i` of a counterclockwise polygon.
pub fn vertex_normal(poly: &[Vec2], i: usize) -> Vec2 {
    let n = poly.len();
    let prev = edge_normal(poly, (i + n - 1) % n);
    let next = edge_normal(poly, i);
    (prev + next).normalized()
}

/// Oriented rectangle as a counterclockwise polygon: `center`, unit `axis`
/// for the first side, half-extents along `axis` and its perpendicular.
pub fn oriented_rect(center: Vec2, axis: Vec2, half_along: f64, half_across: f64) -> [Vec2; 4] {
    let u = axis * half_along;
    let v = axis.perp() * half_across;
    [center - u - v, center + u - v, center + u + v, center - u + v]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(c: Vec2, s: f64) -> Vec<Vec2> {
        let h = s / 2.0;
        vec![
            Vec2::new(c.x - h, c.y - h),
            Vec2::new(c.x + h, c.y - h),
            Vec2::new(c.x + h, c.y + h),
            Vec2::new(c.x - h, c.y + h),
        ]
    }

    #[test]
    fn area_and_centroid_of_square() {
        let sq = square(Vec2::new(3.0, -2.0), 4.0);
        assert_eq!(signed_area(&sq), 16.0);
        let c = centroid(&sq);
        assert!((c.x - 3.0).abs() < 1e-12 && (c.y + 2.0).abs() < 1e-12);
    }

    #[test]
    fn touching_squares_do_not_overlap() {
        let a = square(Vec2::new(0.0, 0.0), 2.0);
        let b = square(Vec2::new(2.0, 0.0), 2.0);
        assert!(!polygons_overlap(&a, &b));
        let c = square(Vec2::new(1.9, 0.3), 2.0);
        assert!(polygons_overlap(&a, &c));
    }

    #[test]
    fn nested_polygons_overlap() {
        let a = square(Vec2::new(0.0, 0.0), 10.0);
        let b = square(Vec2::new(1.0, 1.0), 2.0);
        assert!(polygons_overlap(&a, &b));
        assert!(polygons_overlap(&b, &a));
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bow = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(!is_simple(&bow));
        assert!(is_simple(&square(Vec2::default(), 1.0)));
    }

    #[test]
    fn normals_point_outward() {
        let sq = square(Vec2::default(), 2.0);
        let n0 = edge_normal(&sq, 0);
        assert!((n0.y + 1.0).abs() < 1e-12);
        let v = vertex_normal(&sq, 0);
        assert!((v.x + v.y * -1.0).abs() < 1e-12 && v.x < 0.0);
    }
}
