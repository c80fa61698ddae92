//! Staged learning: the previous model scores sampled patches at every
//! angle, grasps are drawn in proportion to those scores, and the new
//! trials are aggregated with the old ones (weighted by Γ) for fine-tuning.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collect::{
    collect_with, sample_roi_from, summarize, Choice, CollectError, Dataset, GraspPolicy, SceneView, TrialRecord,
};
use crate::learner::{score_all, train, EpochLoss, LearnError, Network, TrainConfig};
use crate::patch::{extract_patch, AngleBin, PatchError, PatchGeometry, N_BINS};
use crate::rng::{derive_seed, Stream};
use crate::scene::GraspConfig;
use crate::setup::Setup;

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("invalid stage config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingLaw {
    /// P(i,j) ∝ max(score, floor).
    Proportional { floor: f64 },
    /// P(i,j) ∝ exp(score / temperature).
    Softmax { temperature: f64 },
}

impl Default for SamplingLaw {
    fn default() -> Self {
        SamplingLaw::Proportional { floor: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    /// Replication factor of the new stage's trials.
    pub gamma: u32,
    pub n_patches: usize,
    pub trials_per_stage: usize,
    /// Fraction of stage scenes built from objects not used in stage 0.
    pub novel_object_fraction: f64,
    pub sampling: SamplingLaw,
    /// Train on the aggregate; when off, train on the new trials only.
    pub aggregate: bool,
    pub schedule: TrainConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            gamma: 3,
            n_patches: 800,
            trials_per_stage: 2000,
            novel_object_fraction: 0.5,
            sampling: SamplingLaw::default(),
            aggregate: true,
            schedule: TrainConfig::stage_k(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), StageError> {
        if self.gamma == 0 {
            return Err(StageError::Config("gamma must be at least 1".into()));
        }
        if self.n_patches == 0 {
            return Err(StageError::Config("n_patches must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.novel_object_fraction) {
            return Err(StageError::Config("novel_object_fraction must be in [0, 1]".into()));
        }
        match self.sampling {
            SamplingLaw::Proportional { floor } if !(floor >= 0.0) => {
                Err(StageError::Config("sampling floor must be non-negative".into()))
            }
            SamplingLaw::Softmax { temperature } if !(temperature > 0.0) => {
                Err(StageError::Config("softmax temperature must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Model scores for sampled patches of one scene image, every angle bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMatrix {
    pub entries: Vec<[f64; N_BINS]>,
    /// Patch centres in millimetres.
    pub centers: Vec<(f64, f64)>,
}

impl PriorMatrix {
    pub fn n_patches(&self) -> usize {
        self.entries.len()
    }

    /// Highest-scoring cell; ties go to the lowest patch, then lowest bin.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for (i, row) in self.entries.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > self.entries[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        best
    }

    /// Executed configuration for a cell: the patch centre at the bin's
    /// centre angle.
    pub fn grasp(&self, i: usize, j: usize) -> GraspConfig {
        let (x, y) = self.centers[i];
        GraspConfig::new(x, y, AngleBin::new(j).expect("bin index from matrix").center_deg())
    }
}

/// Patch centres drawn like random trials: a uniform component, then a
/// uniform point inside its box.
pub fn sample_centers(view: &SceneView, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64)>, CollectError> {
    (0..n)
        .map(|_| {
            let roi = sample_roi_from(&view.components, rng)?;
            Ok(crate::collect::sample_point(&roi, view.scene.workspace(), rng))
        })
        .collect()
}

/// Scores of every bin for patches centred at `centers`.
pub fn score_centers(
    net: &Network,
    view: &SceneView,
    geo: &PatchGeometry,
    centers: &[(f64, f64)],
) -> Result<Vec<[f64; N_BINS]>, StageError> {
    let patches = centers
        .iter()
        .map(|&(x, y)| extract_patch(&view.image, x, y, geo).map(|p| p.pixels))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<&[f32]> = patches.iter().map(|p| p.data()).collect();
    Ok(score_all(net, &inputs)?)
}

pub fn build_prior(
    net: &Network,
    view: &SceneView,
    geo: &PatchGeometry,
    n_patches: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PriorMatrix, StageError> {
    let centers = sample_centers(view, n_patches, rng)?;
    let entries = score_centers(net, view, geo, &centers)?;
    Ok(PriorMatrix { entries, centers })
}

/// Draws a cell `(patch, bin)` according to `law`.
pub fn importance_sample<R: Rng + ?Sized>(prior: &PriorMatrix, law: SamplingLaw, rng: &mut R) -> (usize, usize) {
    let flat = prior.entries.iter().flat_map(|r| r.iter().copied());
    let weights: Vec<f64> = match law {
        SamplingLaw::Proportional { floor } => flat.map(|s| s.max(floor)).collect(),
        SamplingLaw::Softmax { temperature } => {
            let v: Vec<f64> = flat.collect();
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            v.iter().map(|s| ((s - m) / temperature).exp()).collect()
        }
    };
    let k = match WeightedIndex::new(&weights) {
        Ok(d) => d.sample(rng),
        // every weight zero: fall back to uniform
        Err(_) => rng.random_range(0..weights.len()),
    };
    (k / N_BINS, k % N_BINS)
}

/// Grasp selection by importance sampling over a prior matrix. The matrix
/// is rebuilt whenever the scene changes; failed grasps leave the image
/// unchanged, so the matrix is reused for them.
pub struct StagedPolicy<'a> {
    net: &'a Network,
    geo: &'a PatchGeometry,
    n_patches: usize,
    law: SamplingLaw,
    cache: Option<(u64, PriorMatrix)>,
}

impl<'a> StagedPolicy<'a> {
    pub fn new(net: &'a Network, geo: &'a PatchGeometry, n_patches: usize, law: SamplingLaw) -> Self {
        Self {
            net,
            geo,
            n_patches,
            law,
            cache: None,
        }
    }
}

impl GraspPolicy for StagedPolicy<'_> {
    fn choose(&mut self, view: &SceneView, rng: &mut ChaCha8Rng) -> Result<Choice, CollectError> {
        if self.cache.as_ref().is_none_or(|(g, _)| *g != view.generation) {
            let prior = build_prior(self.net, view, self.geo, self.n_patches, rng)
                .map_err(|e| CollectError::Policy(e.to_string()))?;
            self.cache = Some((view.generation, prior));
        }
        let prior = &self.cache.as_ref().expect("filled above").1;
        let (i, j) = importance_sample(prior, self.law, rng);
        Ok(Choice {
            grasp: prior.grasp(i, j),
            score: Some(prior.entries[i][j]),
        })
    }
}

/// Trial records with per-record replication weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregatedDataset {
    pub dataset: Dataset,
    pub weights: Vec<u32>,
}

impl AggregatedDataset {
    pub fn from_dataset(d: Dataset) -> Self {
        let weights = vec![1; d.len()];
        Self { dataset: d, weights }
    }

    /// Number of records one epoch sees.
    pub fn effective_len(&self) -> usize {
        self.weights.iter().map(|&w| w as usize).sum()
    }

    /// Writes the trial CSV with an extra `weight` column.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scene_id",
            "x_mm",
            "y_mm",
            "theta_deg",
            "label",
            "stage",
            "patch_path",
            "weight",
        ])?;
        for (r, wt) in self.dataset.records.iter().zip(&self.weights) {
            out.write_record([
                r.scene_id.to_string(),
                r.grasp.x_mm.to_string(),
                r.grasp.y_mm.to_string(),
                r.grasp.theta_deg.to_string(),
                (r.label as u8).to_string(),
                r.stage.to_string(),
                r.patch_path.clone(),
                wt.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `{D_prev, Γ·d_new}`: previous records keep their weights, new records
/// get weight `gamma`.
pub fn aggregate(prev: &AggregatedDataset, new: &Dataset, gamma: u32) -> AggregatedDataset {
    let mut out = prev.clone();
    out.dataset.append(new.clone());
    out.weights.extend(std::iter::repeat_n(gamma, new.len()));
    let first_new = prev.dataset.len();
    for (i, r) in out.dataset.records.iter_mut().enumerate().skip(first_new) {
        r.patch_path = format!("patches/{i:06}.pgm");
    }
    out
}

/// Fine-tunes (or trains) `net` on a weighted dataset.
pub fn fit(
    net: &mut Network,
    data: &AggregatedDataset,
    setup: &Setup,
    schedule: &[TrainConfig],
    augment_seed: u64,
) -> Result<Vec<EpochLoss>, StageError> {
    let samples = setup.weighted_samples(&data.dataset, &data.weights, augment_seed)?;
    let weights: Vec<u32> = samples.iter().map(|s| data.weights[s.source]).collect();
    Ok(train(net, &samples, Some(&weights), schedule)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: u32,
    pub trials: usize,
    pub positives: usize,
    pub grasp_rate: Option<f64>,
    pub benchmark_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub new_trials: Dataset,
    pub aggregate: AggregatedDataset,
    pub model: Network,
    pub curve: Vec<EpochLoss>,
    pub report: StageReport,
}

/// Collects stage-`k` trials with `prev` as the sampling prior, aggregates
/// them with `data_prev` and fine-tunes a copy of `prev`.
pub fn run_stage(
    prev: &Network,
    data_prev: &AggregatedDataset,
    k: u32,
    cfg: &StageConfig,
    setup: &Setup,
    seed: u64,
) -> Result<StageOutput, StageError> {
    if k == 0 {
        return Err(StageError::Config("staged collection starts at stage 1".into()));
    }
    cfg.validate()?;
    let stage_seed = derive_seed(seed, Stream::Stage, k as u64);
    let new_trials = if cfg.trials_per_stage == 0 {
        Dataset::default()
    } else {
        let ccfg = crate::collect::CollectConfig {
            trials: cfg.trials_per_stage,
            ..setup.collect
        };
        let source = setup
            .seen_source(&ccfg)
            .with_secondary(setup.libraries.novel.clone(), cfg.novel_object_fraction);
        let spec = setup.spec(&ccfg, &source, k, stage_seed, Stream::Stage);
        setup.in_pool(|| {
            collect_with(&spec, || {
                StagedPolicy::new(prev, &setup.geo, cfg.n_patches, cfg.sampling)
            })
        })?
    };
    let aggregate_k = if cfg.aggregate {
        aggregate(data_prev, &new_trials, cfg.gamma)
    } else if new_trials.is_empty() {
        data_prev.clone()
    } else {
        AggregatedDataset::from_dataset(new_trials.clone())
    };
    let mut model = prev.clone();
    let schedule = TrainConfig {
        seed: derive_seed(stage_seed, Stream::Train, 0),
        ..cfg.schedule
    };
    let curve = fit(
        &mut model,
        &aggregate_k,
        setup,
        &[schedule],
        derive_seed(stage_seed, Stream::Augment, 0),
    )?;
    let stats = summarize(&new_trials, None);
    Ok(StageOutput {
        report: StageReport {
            stage: k,
            trials: stats.total,
            positives: stats.positives,
            grasp_rate: stats.grasp_rate,
            benchmark_accuracy: None,
        },
        new_trials,
        aggregate: aggregate_k,
        model,
        curve,
    })
}

/// Writes stage reports as `stage,trials,positives,grasp_rate,benchmark_accuracy`.
pub fn write_stage_csv<W: std::io::Write>(reports: &[StageReport], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["stage", "trials", "positives", "grasp_rate", "benchmark_accuracy"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in reports {
        out.write_record([
            r.stage.to_string(),
            r.trials.to_string(),
            r.positives.to_string(),
            opt(r.grasp_rate),
            opt(r.benchmark_accuracy),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean recorded policy score of failed trials.
pub fn mean_failed_score(records: &[TrialRecord]) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter(|r| !r.label).filter_map(|r| r.score).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn matrix(fill: f64) -> PriorMatrix {
        PriorMatrix {
            entries: vec![[fill; N_BINS]; 800],
            centers: vec![(0.0, 0.0); 800],
        }
    }

    #[test]
    fn uniform_matrix_draws_uniformly() {
        let p = matrix(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let mut per_bin = [0usize; N_BINS];
        let mut per_patch = vec![0usize; 800];
        for _ in 0..n {
            let (i, j) = importance_sample(&p, SamplingLaw::default(), &mut rng);
            per_bin[j] += 1;
            per_patch[i] += 1;
        }
        let chi2 = |obs: &[usize]| {
            let e = n as f64 / obs.len() as f64;
            obs.iter().map(|&o| (o as f64 - e).powi(2) / e).sum::<f64>()
        };
        // critical values at p = 0.001 for 17 and 799 degrees of freedom
        assert!(chi2(&per_bin) < 40.79);
        assert!(chi2(&per_patch) < 927.0);
    }

    #[test]
    fn peaked_cell_frequency_matches_proportionality() {
        let mut p = matrix(0.0);
        p.entries[123][7] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50_000;
        let hits = (0..n)
            .filter(|_| importance_sample(&p, SamplingLaw::default(), &mut rng) == (123, 7))
            .count();
        let expected = 1.0 / (1.0 + 14_399.0 * 1e-3);
        let f = hits as f64 / n as f64;
        assert!((f - expected).abs() < 0.005, "{f} vs {expected}");
        let always =
            (0..1000).all(|_| importance_sample(&p, SamplingLaw::Proportional { floor: 0.0 }, &mut rng) == (123, 7));
        assert!(always);
    }

    #[test]
    fn aggregate_weights() {
        let rec = |stage| TrialRecord {
            scene_id: 0,
            grasp: GraspConfig::new(1.0, 1.0, 0.0),
            label: false,
            stage,
            patch_path: String::new(),
            score: None,
        };
        let scene = crate::scene::Scene::empty(crate::scene::Workspace::default(), 0);
        let mk = |n: usize, stage| Dataset {
            records: (0..n).map(|_| rec(stage)).collect(),
            scenes: vec![scene.clone()],
            ..Default::default()
        };
        let d0 = AggregatedDataset::from_dataset(mk(100, 0));
        assert_eq!(aggregate(&d0, &mk(20, 1), 3).effective_len(), 160);
        assert_eq!(aggregate(&d0, &mk(20, 1), 1).effective_len(), 120);
        let same = aggregate(&d0, &Dataset::default(), 3);
        assert_eq!(same.effective_len(), 100);
        assert_eq!(same.dataset.records, d0.dataset.records);
        let d2 = aggregate(&aggregate(&d0, &mk(20, 1), 3), &mk(10, 2), 3);
        assert_eq!(d2.effective_len(), 100 + 60 + 30);
        assert_eq!(d2.dataset.records[125].scene_id, 2);
    }
}
