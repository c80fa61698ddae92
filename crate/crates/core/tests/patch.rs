//! Rotation augmentation: bin bookkeeping and agreement with a physically
//! rotated scene.

mod common;

use common::{patch_setup, record};
use graspforge::geometry::Vec2;
use graspforge::patch::{extract_patch, AugmentSource, RotationMode};
use graspforge::scene::{generate_scene, render};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bin_shifts_by_k_for_rotations_of_k_tens_of_degrees() {
    assert_eq!(common::bin_shift_failures(1000), 0);
}

fn mean_abs(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

#[test]
fn augmented_patch_matches_the_rotated_scene() {
    let (ws, style, geo, outlines) = patch_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut checked, mut discriminated) = (0, 0);
    let mut seed = 0;
    while checked < 20 {
        seed += 1;
        let scene = generate_scene(seed, 4, &outlines, ws).unwrap();
        let p = &scene.placements()[0];
        let c = p.pose();
        let (x, y) = (c.x_mm, c.y_mm);
        let k = rng.random_range(1..18) as f64;
        let turned = scene.rotated(k * 10.0, Vec2::new(x, y));
        if !turned.within_workspace() || !(80.0..320.0).contains(&x) || !(80.0..320.0).contains(&y) {
            continue;
        }
        let (image, _) = render(&scene, &style);
        let (image_t, _) = render(&turned, &style);
        let src = AugmentSource::new(&image, &record(x, y, 5.0), 0, &geo).unwrap();
        let aug = src.rotated(k * 10.0, &geo, RotationMode::BinAligned);
        let wrong = src.rotated(-k * 10.0, &geo, RotationMode::BinAligned);
        let truth = extract_patch(&image_t, x, y, &geo).unwrap();
        let d = mean_abs(aug.pixels.data(), truth.pixels.data());
        let d_wrong = mean_abs(wrong.pixels.data(), truth.pixels.data());
        assert!(d < 0.05, "seed {seed} k {k}: {d}");
        // symmetric outlines match both directions equally well
        assert!(d <= d_wrong + 0.005, "seed {seed} k {k}: {d} vs {d_wrong}");
        discriminated += (d_wrong > 2.0 * d) as usize;
        checked += 1;
    }
    assert!(
        discriminated >= 10,
        "rotation direction separated in only {discriminated} cases"
    );
}
