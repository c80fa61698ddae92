//! Trial-and-error data collection: pick a region of interest from the
//! occupancy grid, sample a grasp inside it, execute it against the oracle
//! and log the outcome.

mod dataset;
mod roi;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{read_trials_csv, summarize, write_trials_csv, Dataset, DatasetStats, Provenance, TrialRecord};
pub(crate) use roi::sample_point;
pub use roi::{connected_components, sample_grasp, sample_roi, sample_roi_from, RegionOfInterest};

use crate::raster::{Mask, Raster};
use crate::rng::{stream_rng, Stream};
use crate::scene::{
    generate_scene_with, grasp_oracle, render, GraspConfig, GraspOutcome, GripperSpec, RenderStyle, Scene, SceneError,
    ShapeLibrary, Workspace,
};

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("workspace has no occupied pixels")]
    EmptyWorkspace,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid collection config: {0}")]
    Config(String),
    #[error("grasp policy failed: {0}")]
    Policy(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub trials: usize,
    pub objects_per_scene: usize,
    /// A fresh scene is generated once fewer objects than this remain.
    pub min_objects: usize,
    /// Also regenerate after this many consecutive trials on one scene.
    pub max_trials_per_scene: usize,
    pub remove_on_success: bool,
    /// Trials per independent stream; streams are the unit of parallelism.
    pub chunk_trials: usize,
    pub max_rejections: usize,
    /// Standard deviation of Gaussian positional noise added at execution.
    pub jitter_mm: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            trials: 2000,
            objects_per_scene: 8,
            min_objects: 3,
            max_trials_per_scene: 200,
            remove_on_success: true,
            chunk_trials: 250,
            max_rejections: crate::scene::DEFAULT_MAX_REJECTIONS,
            jitter_mm: 0.0,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<(), CollectError> {
        if self.objects_per_scene == 0 {
            return Err(CollectError::Config("objects_per_scene must be at least 1".into()));
        }
        if self.min_objects == 0 || self.min_objects > self.objects_per_scene {
            return Err(CollectError::Config(
                "min_objects must be in 1..=objects_per_scene".into(),
            ));
        }
        if self.chunk_trials == 0 || self.max_trials_per_scene == 0 {
            return Err(CollectError::Config(
                "chunk_trials and max_trials_per_scene must be positive".into(),
            ));
        }
        if !(self.jitter_mm >= 0.0) {
            return Err(CollectError::Config("jitter_mm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where scenes come from: a primary library, optionally mixed per scene
/// with a second library.
#[derive(Debug, Clone)]
pub struct SceneSource {
    pub workspace: Workspace,
    pub primary: ShapeLibrary,
    pub secondary: ShapeLibrary,
    /// Probability that a scene is drawn from `secondary`.
    pub secondary_fraction: f64,
    pub objects_per_scene: usize,
    pub max_rejections: usize,
}

impl SceneSource {
    pub fn new(workspace: Workspace, primary: ShapeLibrary, cfg: &CollectConfig) -> Self {
        Self {
            workspace,
            primary,
            secondary: ShapeLibrary::default(),
            secondary_fraction: 0.0,
            objects_per_scene: cfg.objects_per_scene,
            max_rejections: cfg.max_rejections,
        }
    }

    pub fn with_secondary(mut self, lib: ShapeLibrary, fraction: f64) -> Self {
        self.secondary = lib;
        self.secondary_fraction = fraction;
        self
    }

    /// Names of every shape this source can place.
    pub fn object_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.primary.names().map(str::to_owned).collect();
        if self.secondary_fraction > 0.0 {
            names.extend(self.secondary.names().map(str::to_owned));
        }
        names
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scene, SceneError> {
        let use_secondary = !self.secondary.is_empty() && rng.random::<f64>() < self.secondary_fraction;
        let lib = if use_secondary { &self.secondary } else { &self.primary };
        let outlines = lib.outlines();
        const ATTEMPTS: usize = 20;
        let mut last = None;
        for _ in 0..ATTEMPTS {
            match generate_scene_with(
                rng.random(),
                self.objects_per_scene,
                &outlines,
                self.workspace,
                self.max_rejections,
            ) {
                Ok(s) => return Ok(s),
                Err(e @ SceneError::PlacementFailure { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// A scene together with what the camera and background subtraction give.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub scene: Scene,
    pub image: Raster,
    pub occupancy: Mask,
    pub components: Vec<RegionOfInterest>,
    /// Distinct for every scene state seen by one collection stream.
    pub generation: u64,
}

impl SceneView {
    pub fn new(scene: Scene, style: &RenderStyle, generation: u64) -> Self {
        let (image, occupancy) = render(&scene, style);
        let components = connected_components(&occupancy);
        Self {
            scene,
            image,
            occupancy,
            components,
            generation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub grasp: GraspConfig,
    /// The policy's own confidence in the grasp, if it has one.
    pub score: Option<f64>,
}

/// Decides the next grasp on a scene. Policies are created per stream and
/// may cache work across calls on the same scene generation.
pub trait GraspPolicy {
    fn choose(&mut self, view: &SceneView, rng: &mut ChaCha8Rng) -> Result<Choice, CollectError>;
}

/// The random-trial protocol: uniform component, uniform point, uniform angle.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl GraspPolicy for RandomPolicy {
    fn choose(&mut self, view: &SceneView, rng: &mut ChaCha8Rng) -> Result<Choice, CollectError> {
        let roi = sample_roi_from(&view.components, rng)?;
        Ok(Choice {
            grasp: sample_grasp(&roi, view.scene.workspace(), rng),
            score: None,
        })
    }
}

/// Result of executing one grasp.
#[derive(Debug, Clone)]
pub struct Trial {
    pub grasp: GraspConfig,
    pub outcome: GraspOutcome,
    /// The scene after the trial when it changed.
    pub scene_after: Option<Scene>,
}

/// Executes `grasp`; a successful grasp lifts the object out of the scene
/// when `remove_on_success` is set.
pub fn execute_trial(scene: &Scene, grasp: &GraspConfig, gripper: &GripperSpec, remove_on_success: bool) -> Trial {
    let outcome = grasp_oracle(scene, grasp, gripper);
    let scene_after = match (outcome.success, outcome.object) {
        (true, Some(id)) if remove_on_success => {
            Some(scene.remove_object(id).expect("oracle reports a present object"))
        }
        _ => None,
    };
    Trial {
        grasp: *grasp,
        outcome,
        scene_after,
    }
}

/// Positional execution noise, clamped to the workspace.
pub(crate) fn jitter(grasp: GraspConfig, sigma: f64, ws: &Workspace, rng: &mut ChaCha8Rng) -> GraspConfig {
    if sigma == 0.0 {
        return grasp;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    let x = (grasp.x_mm + n.sample(rng)).clamp(0.0, ws.width_mm);
    let y = (grasp.y_mm + n.sample(rng)).clamp(0.0, ws.height_mm);
    GraspConfig::new(x, y, grasp.theta_deg)
}

/// Everything a collection run needs besides the policy.
#[derive(Debug, Clone)]
pub struct CollectSpec<'a> {
    pub config: &'a CollectConfig,
    pub source: &'a SceneSource,
    pub gripper: &'a GripperSpec,
    pub style: &'a RenderStyle,
    pub stage: u32,
    pub seed: u64,
    pub stream: Stream,
    pub workers: usize,
}

/// Runs `config.trials` trials split into fixed-size streams. Streams are
/// seeded by index and merged in index order, so the dataset does not
/// depend on the worker count.
pub fn collect_with<P, F>(spec: &CollectSpec<'_>, make_policy: F) -> Result<Dataset, CollectError>
where
    P: GraspPolicy,
    F: Fn() -> P + Sync,
{
    let cfg = spec.config;
    cfg.validate()?;
    let n_chunks = cfg.trials.div_ceil(cfg.chunk_trials);
    let run = || {
        (0..n_chunks)
            .into_par_iter()
            .map(|i| {
                let n = cfg.chunk_trials.min(cfg.trials - i * cfg.chunk_trials);
                let mut rng = stream_rng(spec.seed, spec.stream, i as u64);
                collect_chunk(spec, n, &mut make_policy(), &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let chunks = with_workers(spec.workers, run)?;
    let mut out = Dataset::new(Provenance {
        seed: spec.seed,
        stage: spec.stage,
        objects: spec.source.object_names(),
        config: *cfg,
    });
    for chunk in chunks {
        out.append(chunk);
    }
    out.assign_patch_paths();
    Ok(out)
}

/// Random-trial collection.
pub fn collect(spec: &CollectSpec<'_>) -> Result<Dataset, CollectError> {
    collect_with(spec, || RandomPolicy)
}

/// Runs `f` on a pool of `workers` threads (0 means the global pool).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn collect_chunk<P: GraspPolicy>(
    spec: &CollectSpec<'_>,
    n: usize,
    policy: &mut P,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset, CollectError> {
    let cfg = spec.config;
    let mut data = Dataset::new(Provenance::default());
    let mut view: Option<SceneView> = None;
    let mut on_scene = 0usize;
    let mut generation = 0u64;
    for _ in 0..n {
        let stale = view
            .as_ref()
            .is_none_or(|v| v.scene.len() < cfg.min_objects || on_scene >= cfg.max_trials_per_scene);
        if stale {
            let scene = spec.source.sample(rng)?;
            data.scenes.push(scene.clone());
            generation += 1;
            view = Some(SceneView::new(scene, spec.style, generation));
            on_scene = 0;
        }
        let v = view.as_ref().expect("scene prepared above");
        let choice = policy.choose(v, rng)?;
        let executed = jitter(choice.grasp, cfg.jitter_mm, v.scene.workspace(), rng);
        let trial = execute_trial(&v.scene, &executed, spec.gripper, cfg.remove_on_success);
        data.records.push(TrialRecord {
            scene_id: (data.scenes.len() - 1) as u32,
            grasp: executed,
            label: trial.outcome.success,
            stage: spec.stage,
            patch_path: String::new(),
            score: choice.score,
        });
        on_scene += 1;
        if let Some(next) = trial.scene_after {
            data.scenes.push(next.clone());
            generation += 1;
            view = Some(SceneView::new(next, spec.style, generation));
        }
    }
    Ok(data)
}
