//! Held-out evaluation: test sets from objects never trained on, accuracy
//! tables, grasp re-ranking, grasp-rate runs and clutter removal.

pub mod clutter;
pub mod rerank;

use std::fmt::Write as _;
use std::io;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{
    describe, heuristic::patch_principal, hog, optimistic_param_select, sweep_k, BaselineError, ExtentMode,
    HeuristicParams, HogConfig, KnnModel, SvmModel,
};
use crate::collect::{
    collect, execute_trial, jitter, summarize, CollectConfig, CollectError, Dataset, DatasetStats, GraspPolicy,
    Provenance, SceneSource, SceneView, TrialRecord,
};
use crate::curriculum::StageError;
use crate::learner::{score_examples, LearnError, Network};
use crate::patch::{record_samples, PatchError, TrainingSample};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scene::{grasp_oracle, GripperSpec, Scene};
use crate::setup::Setup;

pub use clutter::{clutter_removal, mean_interactions, write_clutter_jsonl, ClutterConfig, ClutterRunLog, ClutterStep};
pub use rerank::{
    rerank, top_cells, ArgmaxPolicy, NetScorer, PatchScorer, RerankCandidate, RerankConfig, RerankOutcome, RerankPolicy,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("test objects also appear in training: {0}")]
    NotDisjoint(String),
    #[error("cannot balance a test set with {positives} positives and {negatives} negatives")]
    CannotBalance { positives: usize, negatives: usize },
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Trials on held-out objects with their patches.
#[derive(Debug, Clone)]
pub struct TestSet {
    /// The evaluated records (after balancing, if any).
    pub dataset: Dataset,
    /// One unrotated sample per record, in record order.
    pub samples: Vec<TrainingSample>,
    pub balanced: bool,
    /// Counts of the raw collection before balancing.
    pub raw: DatasetStats,
}

impl TestSet {
    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn check_disjoint(train: &[String], test: &[String]) -> Result<(), EvalError> {
    let shared: Vec<&str> = test.iter().filter(|n| train.contains(n)).map(String::as_str).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(EvalError::NotDisjoint(shared.join(", ")))
    }
}

/// All minority-class indices plus an equally large random subset of the
/// majority class, in original order.
pub fn balance_indices(labels: &[bool], rng: &mut ChaCha8Rng) -> Result<Vec<usize>, EvalError> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::CannotBalance {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut keep: Vec<usize> = sample(rng, majority.len(), minority.len())
        .into_iter()
        .map(|i| majority[i])
        .chain(minority)
        .collect();
    keep.sort_unstable();
    Ok(keep)
}

/// Random trials on held-out objects. The held-out library must share no
/// shape with the libraries used for training.
pub fn build_test_set(setup: &Setup, n_interactions: usize, balance: bool, seed: u64) -> Result<TestSet, EvalError> {
    let train: Vec<String> = setup
        .libraries
        .seen
        .names()
        .chain(setup.libraries.novel.names())
        .map(str::to_owned)
        .collect();
    let test: Vec<String> = setup.libraries.heldout.names().map(str::to_owned).collect();
    check_disjoint(&train, &test)?;
    let cfg = CollectConfig {
        trials: n_interactions,
        ..setup.collect
    };
    let source = setup.heldout_source(&cfg);
    let raw = setup.in_pool(|| collect(&setup.spec(&cfg, &source, 0, seed, Stream::TestSet)))?;
    let raw_stats = summarize(&raw, None);
    let dataset = if balance {
        let labels: Vec<bool> = raw.records.iter().map(|r| r.label).collect();
        let keep = balance_indices(&labels, &mut stream_rng(seed, Stream::TestSet, u64::MAX))?;
        let mut d = raw.clone();
        d.records = keep.iter().map(|&i| raw.records[i].clone()).collect();
        d.assign_patch_paths();
        d
    } else {
        raw
    };
    let samples = setup.in_pool(|| record_samples(&dataset, &setup.geo, &setup.style))?;
    Ok(TestSet {
        dataset,
        samples,
        balanced: balance,
        raw: raw_stats,
    })
}

/// A method that labels every test record.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    /// Hyperparameters or other detail for the report.
    fn note(&self) -> String {
        String::new()
    }
    fn predict(&self, test: &TestSet) -> Result<Vec<bool>, EvalError>;
}

/// Thresholded network score of the executed bin; ties count as success.
pub struct NetPredictor<'a> {
    pub name: String,
    pub net: &'a Network,
    pub threshold: f64,
}

impl Predictor for NetPredictor<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn note(&self) -> String {
        format!("threshold={}", self.threshold)
    }

    fn predict(&self, test: &TestSet) -> Result<Vec<bool>, EvalError> {
        Ok(score_examples(self.net, &test.samples)?
            .into_iter()
            .map(|s| s >= self.threshold)
            .collect())
    }
}

/// Replays each record's grasp through the simulator's oracle.
pub struct OraclePredictor<'a> {
    pub gripper: &'a GripperSpec,
}

impl Predictor for OraclePredictor<'_> {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, test: &TestSet) -> Result<Vec<bool>, EvalError> {
        let d = &test.dataset;
        Ok(d.records
            .par_iter()
            .map(|r| grasp_oracle(d.scene_of(r), &r.grasp, self.gripper).success)
            .collect())
    }
}

pub struct HeuristicPredictor {
    pub name: String,
    pub params: HeuristicParams,
    pub background: f32,
}

impl Predictor for HeuristicPredictor {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn note(&self) -> String {
        format!(
            "angle_threshold={} limit={}",
            self.params.angle_error_threshold_deg, self.params.eigenvalue_limit
        )
    }

    fn predict(&self, test: &TestSet) -> Result<Vec<bool>, EvalError> {
        Ok(test
            .samples
            .par_iter()
            .map(|s| {
                let p = patch_principal(&s.pixels, self.background);
                self.params.predict(p.as_ref(), s.bin.center_deg())
            })
            .collect())
    }
}

pub struct KnnPredictor<'a> {
    pub model: &'a KnnModel,
    pub hog: HogConfig,
}

impl Predictor for KnnPredictor<'_> {
    fn name(&self) -> String {
        "knn".into()
    }

    fn note(&self) -> String {
        format!("k={}", self.model.k)
    }

    fn predict(&self, test: &TestSet) -> Result<Vec<bool>, EvalError> {
        test.samples
            .par_iter()
            .map(|s| Ok(self.model.predict(&hog(&s.pixels, &self.hog)?, s.bin.index())))
            .collect()
    }
}

pub struct SvmPredictor<'a> {
    pub model: &'a SvmModel,
    pub hog: HogConfig,
}

impl Predictor for SvmPredictor<'_> {
    fn name(&self) -> String {
        "svm".into()
    }

    fn note(&self) -> String {
        format!("C={}", self.model.c)
    }

    fn predict(&self, test: &TestSet) -> Result<Vec<bool>, EvalError> {
        test.samples
            .par_iter()
            .map(|s| Ok(self.model.predict(&hog(&s.pixels, &self.hog)?, s.bin.index())))
            .collect()
    }
}

/// Heuristic parameters picked by exhaustive search on the test set itself.
/// The extent grid is expressed in multiples of the gripper's minimum
/// closing width mapped to patch pixels.
pub fn optimistic_heuristic(
    test: &TestSet,
    thresholds: &[f64],
    limit_factors: &[f64],
    min_close_px: f64,
    mode: ExtentMode,
    background: f32,
) -> Result<(HeuristicParams, f64), EvalError> {
    let inputs: Vec<_> = test
        .samples
        .par_iter()
        .map(|s| (patch_principal(&s.pixels, background), s.bin.center_deg()))
        .collect();
    let limits: Vec<f64> = limit_factors
        .iter()
        .map(|f| match mode {
            ExtentMode::Extent => f * min_close_px,
            ExtentMode::RawEigenvalue => f * min_close_px * min_close_px,
        })
        .collect();
    optimistic_param_select(&inputs, &test.labels(), thresholds, &limits, mode)
        .ok_or_else(|| EvalError::Config("heuristic grids must be non-empty".into()))
}

/// kNN over the training samples with `k` picked on the test set itself.
pub fn optimistic_knn(
    train: &[TrainingSample],
    test: &TestSet,
    hog_cfg: &HogConfig,
    ks: &[usize],
) -> Result<(KnnModel, f64), EvalError> {
    let items = describe(train, hog_cfg)?.into_iter().map(|(d, b, l)| (b, d, l));
    let mut model = KnnModel::new(1, items);
    let queries = describe(&test.samples, hog_cfg)?;
    let (k, acc) = sweep_k(&model, &queries, ks).ok_or_else(|| EvalError::Config("k grid must be non-empty".into()))?;
    model.k = k;
    Ok((model, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub method: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> (usize, f64) {
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    (correct, correct as f64 / labels.len().max(1) as f64)
}

/// Evaluates each method independently, one row per method in the given
/// order.
pub fn compare_all(methods: &[&dyn Predictor], test: &TestSet) -> Result<AccuracyReport, EvalError> {
    let labels = test.labels();
    let rows = methods
        .iter()
        .map(|m| {
            let pred = m.predict(test)?;
            let (correct, acc) = accuracy(&pred, &labels);
            Ok(AccuracyRow {
                method: m.name(),
                correct,
                total: labels.len(),
                accuracy: acc,
                note: m.note(),
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(AccuracyReport { rows })
}

impl AccuracyReport {
    pub fn get(&self, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).map(|r| r.accuracy)
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "correct", "total", "accuracy", "note"])?;
        for r in &self.rows {
            out.write_record([
                r.method.clone(),
                r.correct.to_string(),
                r.total.to_string(),
                format!("{:.4}", r.accuracy),
                r.note.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(0)
            .max("method".len());
        let mut s = format!(
            "{:<w$}  {:>8}  {:>7}  {:>8}  note\n",
            "method", "accuracy", "correct", "total"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>8.4}  {:>7}  {:>8}  {}",
                r.method, r.accuracy, r.correct, r.total, r.note
            );
        }
        s
    }
}

/// Success statistics of `tries` policy-chosen grasps, each on a freshly
/// drawn scene from `source`, with optional positional execution noise.
///
/// Scenes and noise come from one seeded stream and policy randomness from
/// another, so two policies evaluated with the same seed face the same
/// scenes and the same execution errors. One decision per scene keeps a
/// policy that repeats a failing grasp from dominating the rate.
pub fn grasp_rate_eval<P, F>(
    setup: &Setup,
    source: &SceneSource,
    make_policy: F,
    tries: usize,
    jitter_mm: f64,
    seed: u64,
) -> Result<(DatasetStats, Dataset), EvalError>
where
    P: GraspPolicy,
    F: Fn() -> P + Sync,
{
    let cfg = CollectConfig {
        trials: tries,
        jitter_mm,
        max_trials_per_scene: 1,
        ..setup.collect
    };
    cfg.validate()?;
    let world_seed = derive_seed(seed, Stream::Eval, 0);
    let policy_seed = derive_seed(seed, Stream::Eval, 1);
    let one = |i: usize| -> Result<(Scene, TrialRecord), EvalError> {
        let mut world = stream_rng(world_seed, Stream::Eval, i as u64);
        let mut prng = stream_rng(policy_seed, Stream::Eval, i as u64);
        let view = SceneView::new(
            source.sample(&mut world).map_err(CollectError::from)?,
            &setup.style,
            i as u64,
        );
        let choice = make_policy().choose(&view, &mut prng)?;
        let executed = jitter(choice.grasp, jitter_mm, view.scene.workspace(), &mut world);
        let trial = execute_trial(&view.scene, &executed, &setup.gripper, false);
        let record = TrialRecord {
            scene_id: i as u32,
            grasp: executed,
            label: trial.outcome.success,
            stage: 0,
            patch_path: String::new(),
            score: choice.score,
        };
        Ok((view.scene, record))
    };
    let trials = setup.in_pool(|| (0..tries).into_par_iter().map(one).collect::<Result<Vec<_>, _>>())?;
    let mut data = Dataset::new(Provenance {
        seed,
        stage: 0,
        objects: source.object_names(),
        config: cfg,
    });
    for (scene, record) in trials {
        data.scenes.push(scene);
        data.records.push(record);
    }
    data.assign_patch_paths();
    Ok((summarize(&data, None), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn balance_keeps_minority_and_matches_sizes() {
        let labels: Vec<bool> = (0..100).map(|i| i % 10 == 0).collect();
        let keep = balance_indices(&labels, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(keep.len(), 20);
        assert_eq!(keep.iter().filter(|&&i| labels[i]).count(), 10);
        assert!(keep.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            balance_indices(&[false; 5], &mut ChaCha8Rng::seed_from_u64(1)),
            Err(EvalError::CannotBalance { positives: 0, .. })
        ));
    }

    #[test]
    fn disjointness_is_enforced() {
        let a = vec!["box-1".to_string(), "disc-2".to_string()];
        assert!(check_disjoint(&a, &["tri-3".to_string()]).is_ok());
        assert!(matches!(
            check_disjoint(&a, &["disc-2".to_string()]),
            Err(EvalError::NotDisjoint(n)) if n == "disc-2"
        ));
    }

    #[test]
    fn text_table_is_aligned() {
        let r = AccuracyReport {
            rows: vec![
                AccuracyRow {
                    method: "a".into(),
                    correct: 1,
                    total: 2,
                    accuracy: 0.5,
                    note: String::new(),
                },
                AccuracyRow {
                    method: "longer-name".into(),
                    correct: 2,
                    total: 2,
                    accuracy: 1.0,
                    note: "k=3".into(),
                },
            ],
        };
        let t = r.to_text();
        let cols: Vec<usize> = t.lines().map(|l| l.find("  ").unwrap()).collect();
        assert!(t.lines().all(|l| l.len() >= 11));
        assert_eq!(
            t.lines().nth(1).unwrap().find("0.5000"),
            t.lines().nth(2).unwrap().find("1.0000")
        );
        assert_eq!(cols.len(), 3);
    }
}
