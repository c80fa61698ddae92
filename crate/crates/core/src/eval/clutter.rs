//! Clearing a cluttered table one grasp at a time.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::collect::{execute_trial, jitter, CollectError, GraspPolicy, SceneView};
use crate::rng::{stream_rng, Stream};
use crate::scene::{generate_scene_with, SceneError, ShapeLibrary};
use crate::setup::Setup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterConfig {
    pub objects: usize,
    /// Interactions after which a run is abandoned as uncleared.
    pub max_interactions: usize,
    pub runs: usize,
    pub jitter_mm: f64,
}

impl Default for ClutterConfig {
    fn default() -> Self {
        Self {
            objects: 10,
            max_interactions: 300,
            runs: 5,
            jitter_mm: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClutterStep {
    pub run: usize,
    pub interaction: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    pub theta_deg: f64,
    pub success: bool,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClutterRunLog {
    pub steps: Vec<ClutterStep>,
    pub cleared: bool,
}

impl ClutterRunLog {
    pub fn interactions(&self) -> usize {
        self.steps.len()
    }
}

/// Runs `cfg.runs` independent clearing attempts on scenes of exactly
/// `cfg.objects` shapes drawn from `library`. Runs are seeded by index.
pub fn clutter_removal<P, F>(
    setup: &Setup,
    library: &ShapeLibrary,
    make_policy: F,
    cfg: &ClutterConfig,
    seed: u64,
) -> Result<Vec<ClutterRunLog>, EvalError>
where
    P: GraspPolicy,
    F: Fn() -> P + Sync,
{
    if cfg.objects == 0 || cfg.max_interactions == 0 {
        return Err(EvalError::Config(
            "clutter runs need objects and an interaction cap".into(),
        ));
    }
    let outlines = library.outlines();
    let run = |r: usize| -> Result<ClutterRunLog, EvalError> {
        let mut rng = stream_rng(seed, Stream::Clutter, r as u64);
        let mut scene = None;
        for _ in 0..20 {
            match generate_scene_with(
                rng.random(),
                cfg.objects,
                &outlines,
                setup.workspace,
                setup.collect.max_rejections,
            ) {
                Ok(s) => {
                    scene = Some(s);
                    break;
                }
                Err(SceneError::PlacementFailure { .. }) => continue,
                Err(e) => return Err(CollectError::Scene(e).into()),
            }
        }
        let mut scene = scene.ok_or_else(|| EvalError::Config(format!("could not place {} objects", cfg.objects)))?;
        let mut policy = make_policy();
        let mut steps = Vec::new();
        let mut generation = 0u64;
        let mut view = SceneView::new(scene.clone(), &setup.style, generation);
        while !scene.is_empty() && steps.len() < cfg.max_interactions {
            let choice = policy.choose(&view, &mut rng)?;
            let g = jitter(choice.grasp, cfg.jitter_mm, scene.workspace(), &mut rng);
            let trial = execute_trial(&scene, &g, &setup.gripper, true);
            if let Some(next) = trial.scene_after {
                scene = next;
                generation += 1;
                view = SceneView::new(scene.clone(), &setup.style, generation);
            }
            steps.push(ClutterStep {
                run: r,
                interaction: steps.len() + 1,
                x_mm: g.x_mm,
                y_mm: g.y_mm,
                theta_deg: g.theta_deg,
                success: trial.outcome.success,
                remaining: scene.len(),
            });
        }
        Ok(ClutterRunLog {
            cleared: scene.is_empty(),
            steps,
        })
    };
    setup.in_pool(|| (0..cfg.runs).into_par_iter().map(run).collect())
}

/// Mean interactions per run; uncleared runs count at their cap.
pub fn mean_interactions(logs: &[ClutterRunLog]) -> f64 {
    logs.iter().map(|l| l.interactions() as f64).sum::<f64>() / logs.len().max(1) as f64
}

/// One JSON object per interaction, runs in order.
pub fn write_clutter_jsonl<W: Write>(logs: &[ClutterRunLog], mut w: W) -> Result<(), EvalError> {
    for step in logs.iter().flat_map(|l| &l.steps) {
        serde_json::to_writer(&mut w, step)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
