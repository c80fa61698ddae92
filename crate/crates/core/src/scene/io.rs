//! Line-oriented scene text format.
//!
//! ```text
//! workspace <W> <H> <PPM>
//! # seed <n>
//! obj <id> <shade> <friction> <x> <y> <rot> <n> <v1x> <v1y> ...
//! ```
//!
//! Several scenes may be concatenated; each begins at its `workspace` line.
//! Numbers use the shortest round-trip decimal form.

use std::fmt::Write as _;

use super::{ObjectId, ObjectShape, Placement, Pose, Scene, SceneError, Workspace};
use crate::geometry::Vec2;

pub fn write_scene(scene: &Scene) -> String {
    let mut out = String::new();
    let ws = scene.workspace();
    let _ = writeln!(out, "workspace {} {} {}", ws.width_mm, ws.height_mm, ws.px_per_mm);
    let _ = writeln!(out, "# seed {}", scene.rng_seed());
    for p in scene.placements() {
        let s = p.shape();
        let pose = p.pose();
        let _ = write!(
            out,
            "obj {} {} {} {} {} {} {}",
            p.id().0,
            s.shade(),
            s.friction_half_angle_deg(),
            pose.x_mm,
            pose.y_mm,
            pose.rotation_deg,
            s.vertices().len()
        );
        for v in s.vertices() {
            let _ = write!(out, " {} {}", v.x, v.y);
        }
        out.push('\n');
    }
    out
}

pub fn write_scenes<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> String {
    scenes.into_iter().map(write_scene).collect()
}

pub fn parse_scenes(text: &str) -> Result<Vec<Scene>, SceneError> {
    struct Pending {
        ws: Workspace,
        seed: u64,
        placements: Vec<Placement>,
    }
    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    let finish = |p: Pending| Scene::from_placements(p.ws, p.placements, p.seed);
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: &str| SceneError::Parse {
            line: line_no,
            msg: msg.to_string(),
        };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap_or_default();
        let nums: Result<Vec<f64>, _> = toks.clone().map(str::parse::<f64>).collect();
        match head {
            "workspace" => {
                if let Some(p) = cur.take() {
                    out.push(finish(p)?);
                }
                let v = nums.map_err(|_| err("bad number"))?;
                if v.len() != 3 {
                    return Err(err("workspace needs W H PPM"));
                }
                let ws = Workspace::new(v[0], v[1], v[2])?;
                cur = Some(Pending {
                    ws,
                    seed: 0,
                    placements: Vec::new(),
                });
            }
            "#" => {
                let rest: Vec<&str> = toks.collect();
                if let (Some(p), ["seed", n]) = (cur.as_mut(), rest.as_slice()) {
                    p.seed = n.parse().map_err(|_| err("bad seed"))?;
                }
            }
            "obj" => {
                let p = cur.as_mut().ok_or_else(|| err("obj before workspace"))?;
                let v = nums.map_err(|_| err("bad number"))?;
                if v.len() < 7 {
                    return Err(err("truncated obj line"));
                }
                let n = v[6] as usize;
                if v[6] != n as f64 || v.len() != 7 + 2 * n {
                    return Err(err("vertex count does not match coordinates"));
                }
                let verts = (0..n).map(|i| Vec2::new(v[7 + 2 * i], v[8 + 2 * i])).collect();
                let shape = ObjectShape::new(verts, v[2], v[1])?;
                if v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(err("bad object id"));
                }
                let pose = Pose {
                    x_mm: v[3],
                    y_mm: v[4],
                    rotation_deg: v[5],
                };
                p.placements.push(Placement::new(ObjectId(v[0] as u32), shape, pose));
            }
            _ if head.starts_with('#') => {}
            _ => return Err(err("unknown record")),
        }
    }
    if let Some(p) = cur.take() {
        out.push(finish(p)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_scene;

    #[test]
    fn text_round_trip_is_exact() {
        let ws = Workspace::new(300.0, 250.0, 0.5).unwrap();
        let lib = [ObjectShape::rectangle(33.3, 61.7), ObjectShape::regular(7, 21.1)];
        let a = generate_scene(5, 4, &lib, ws).unwrap();
        let b = generate_scene(6, 3, &lib, ws).unwrap();
        let text = write_scenes([&a, &b]);
        assert!(text.starts_with("workspace 300 250 0.5\n"));
        let back = parse_scenes(&text).unwrap();
        assert_eq!(back, vec![a, b]);
        assert_eq!(write_scenes(&back), text);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(matches!(
            parse_scenes("obj 0 0.5 15 1 1 0 3 0 0 1 0 0 1"),
            Err(SceneError::Parse { line: 1, .. })
        ));
        assert!(parse_scenes("workspace 10 10 1\nobj 0 0.5 15 5 5 0 3 0 0 1").is_err());
        assert!(parse_scenes("workspace 10 10 1\nbogus").is_err());
    }
}
