use serde::{Deserialize, Serialize};

use super::Scene;
use crate::raster::{Mask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderStyle {
    /// Gray level of the empty table.
    pub background: f32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self { background: 0.92 }
    }
}

/// Rasterizes the scene: a pixel belongs to an object iff its centre lies
/// inside the object's outline. No anti-aliasing.
pub fn render(scene: &Scene, style: &RenderStyle) -> (Raster, Mask) {
    let ws = scene.workspace();
    let (w, h) = (ws.raster_width(), ws.raster_height());
    let mut image = Raster::filled(w, h, style.background);
    let mut occ = Mask::new(w, h);
    for p in scene.placements() {
        let b = p.bounds();
        let ppm = ws.px_per_mm;
        // pixel centres (c + 0.5)/ppm inside [min, max]
        let c0 = ((b.min.x * ppm - 0.5).ceil().max(0.0)) as usize;
        let c1 = ((b.max.x * ppm - 0.5).floor()).min(w as f64 - 1.0);
        let r0 = ((b.min.y * ppm - 0.5).ceil().max(0.0)) as usize;
        let r1 = ((b.max.y * ppm - 0.5).floor()).min(h as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let shade = p.shape().shade() as f32;
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                if p.contains(ws.pixel_center(row as f64, col as f64)) {
                    image.set(row, col, shade);
                    occ.set(row, col, true);
                }
            }
        }
    }
    (image, occ)
}

pub fn render_occupancy(scene: &Scene) -> Mask {
    render(scene, &RenderStyle::default()).1
}
