//! The fixed physical setup shared by every stage of a run: workspace,
//! gripper, rendering, patch geometry and object libraries.

use crate::collect::{CollectConfig, CollectSpec, Dataset, SceneSource};
use crate::patch::{
    build_samples, build_weighted_samples, AugmentConfig, PatchConfig, PatchError, PatchGeometry, TrainingSample,
};
use crate::rng::Stream;
use crate::scene::{GripperSpec, LibrarySplit, RenderStyle, Workspace};

#[derive(Debug, Clone)]
pub struct Setup {
    pub workspace: Workspace,
    pub gripper: GripperSpec,
    pub style: RenderStyle,
    pub patch: PatchConfig,
    pub geo: PatchGeometry,
    pub augment: AugmentConfig,
    pub collect: CollectConfig,
    pub libraries: LibrarySplit,
    pub workers: usize,
}

impl Setup {
    pub fn new(
        workspace: Workspace,
        gripper: GripperSpec,
        style: RenderStyle,
        patch: PatchConfig,
        augment: AugmentConfig,
        collect: CollectConfig,
        libraries: LibrarySplit,
        workers: usize,
    ) -> Result<Self, PatchError> {
        let geo = PatchGeometry::new(&patch, &gripper, &workspace, &style)?;
        Ok(Self {
            workspace,
            gripper,
            style,
            patch,
            geo,
            augment,
            collect,
            libraries,
            workers,
        })
    }

    /// Scenes of previously seen objects.
    pub fn seen_source(&self, cfg: &CollectConfig) -> SceneSource {
        SceneSource::new(self.workspace, self.libraries.seen.clone(), cfg)
    }

    /// Scenes of objects never used for training.
    pub fn heldout_source(&self, cfg: &CollectConfig) -> SceneSource {
        SceneSource::new(self.workspace, self.libraries.heldout.clone(), cfg)
    }

    pub fn spec<'a>(
        &'a self,
        config: &'a CollectConfig,
        source: &'a SceneSource,
        stage: u32,
        seed: u64,
        stream: Stream,
    ) -> CollectSpec<'a> {
        CollectSpec {
            config,
            source,
            gripper: &self.gripper,
            style: &self.style,
            stage,
            seed,
            stream,
            workers: self.workers,
        }
    }

    /// Augmented training samples for a dataset.
    pub fn samples(&self, dataset: &Dataset, seed: u64) -> Result<Vec<TrainingSample>, PatchError> {
        self.in_pool(|| build_samples(dataset, &self.geo, &self.augment, &self.style, seed))
    }

    /// Augmented samples for records replicated by `weights` in training.
    pub fn weighted_samples(
        &self,
        dataset: &Dataset,
        weights: &[u32],
        seed: u64,
    ) -> Result<Vec<TrainingSample>, PatchError> {
        self.in_pool(|| build_weighted_samples(dataset, Some(weights), &self.geo, &self.augment, &self.style, seed))
    }

    /// Runs `f` on this setup's worker pool.
    pub fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        crate::collect::with_workers(self.workers, f)
    }
}
