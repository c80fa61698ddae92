//! End-to-end runs built from a [`RunConfig`]: random collection, the first
//! model, staged rounds, the method comparison and the ablations.

use serde::Serialize;
use thiserror::Error;

use crate::baselines::{describe, svm_train, BaselineError, HeuristicParams, KnnModel, SvmModel};
use crate::collect::{collect, CollectConfig, CollectError, Dataset};
use crate::config::{ConfigError, RunConfig};
use crate::curriculum::{run_stage, AggregatedDataset, StageConfig, StageError, StageOutput};
use crate::eval::{
    build_test_set, compare_all, optimistic_heuristic, optimistic_knn, AccuracyReport, EvalError, HeuristicPredictor,
    KnnPredictor, NetPredictor, Predictor, SvmPredictor, TestSet,
};
use crate::learner::{
    aux_dataset, classification_accuracy, pretrain_features, score_examples, train, EpochLoss, LearnError, Network,
    PretrainReport, TrainConfig,
};
use crate::patch::{PatchError, TrainingSample};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::setup::Setup;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn build_setup(cfg: &RunConfig) -> Result<Setup, PipelineError> {
    cfg.validate()?;
    let libraries = cfg.library.build(&cfg.gripper);
    Ok(Setup::new(
        cfg.workspace,
        cfg.gripper,
        cfg.render,
        cfg.patch,
        cfg.augment,
        cfg.collect,
        libraries,
        cfg.workers,
    )?)
}

/// Random trials on the seen library.
pub fn collect_random(setup: &Setup, trials: usize, seed: u64) -> Result<Dataset, PipelineError> {
    let cfg = CollectConfig {
        trials,
        ..setup.collect
    };
    let source = setup.seen_source(&cfg);
    Ok(setup.in_pool(|| collect(&setup.spec(&cfg, &source, 0, seed, Stream::Collect)))?)
}

/// Freshly initialised grasp network, optionally with convolutions taken
/// from the auxiliary shape-category task.
pub fn initial_network(
    cfg: &RunConfig,
    setup: &Setup,
    seed: u64,
    pretrained: bool,
) -> Result<(Network, Option<PretrainReport>), PipelineError> {
    let net = Network::init(
        &cfg.model.arch,
        cfg.model.head_init_std,
        &mut stream_rng(seed, Stream::Init, 0),
    )?;
    if !pretrained {
        return Ok((net, None));
    }
    let p = crate::learner::PretrainConfig {
        seed: derive_seed(seed, Stream::Pretrain, cfg.pretrain.seed),
        ..cfg.pretrain
    };
    let aux = setup.in_pool(|| aux_dataset(p.samples, &setup.geo, &setup.style, p.seed));
    let (net, report) = pretrain_features(&net, &aux, &p)?;
    Ok((net, Some(report)))
}

/// Held-out accuracy of the auxiliary network, on shapes it never saw.
pub fn aux_accuracy(cfg: &RunConfig, setup: &Setup, report: &PretrainReport, seed: u64) -> Result<f64, PipelineError> {
    let held = setup.in_pool(|| {
        aux_dataset(
            cfg.pretrain.heldout_samples,
            &setup.geo,
            &setup.style,
            derive_seed(seed, Stream::Pretrain, u64::MAX),
        )
    });
    Ok(classification_accuracy(&report.aux_net, &held)?)
}

/// Stage-0 schedule with per-phase seeds mixed from the run seed.
pub fn schedule(phases: &[TrainConfig], seed: u64) -> Vec<TrainConfig> {
    phases
        .iter()
        .enumerate()
        .map(|(i, t)| TrainConfig {
            seed: derive_seed(seed ^ t.seed, Stream::Train, i as u64),
            ..*t
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Stage0 {
    pub model: Network,
    pub curve: Vec<EpochLoss>,
    pub pretrain: Option<PretrainReport>,
}

pub fn train_stage0(
    cfg: &RunConfig,
    setup: &Setup,
    data: &Dataset,
    seed: u64,
    pretrained: bool,
) -> Result<Stage0, PipelineError> {
    let (mut model, pretrain) = initial_network(cfg, setup, seed, pretrained)?;
    let samples = setup.samples(data, derive_seed(seed, Stream::Augment, 0))?;
    let curve = train(&mut model, &samples, None, &schedule(&cfg.train, seed))?;
    Ok(Stage0 { model, curve, pretrain })
}

/// Staged rounds `1..=n` starting from the stage-0 model and data.
pub fn run_stages(
    stage_cfg: &StageConfig,
    setup: &Setup,
    net0: &Network,
    data0: &Dataset,
    n: u32,
    seed: u64,
) -> Result<Vec<StageOutput>, PipelineError> {
    let mut out: Vec<StageOutput> = Vec::new();
    for k in 1..=n {
        let (prev, data_prev) = match out.last() {
            Some(s) => (&s.model, s.aggregate.clone()),
            None => (net0, AggregatedDataset::from_dataset(data0.clone())),
        };
        let s = run_stage(prev, &data_prev, k, stage_cfg, setup, seed)?;
        out.push(s);
    }
    Ok(out)
}

pub fn test_set(cfg: &RunConfig, setup: &Setup, seed: u64) -> Result<TestSet, PipelineError> {
    Ok(build_test_set(
        setup,
        cfg.eval.test_interactions,
        cfg.eval.balanced,
        derive_seed(seed, Stream::TestSet, 0),
    )?)
}

/// Accuracy of a network on a test set at the configured threshold.
pub fn net_accuracy(cfg: &RunConfig, net: &Network, test: &TestSet) -> Result<f64, PipelineError> {
    let scores = score_examples(net, &test.samples)?;
    let correct = scores
        .iter()
        .zip(&test.samples)
        .filter(|(s, e)| (**s >= cfg.eval.threshold) == e.label)
        .count();
    Ok(correct as f64 / test.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct BaselineModels {
    pub heuristic: HeuristicParams,
    pub knn: KnnModel,
    pub svm: SvmModel,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub report: AccuracyReport,
    pub baselines: BaselineModels,
}

/// The method comparison. Baselines learn from `train_samples` (the same
/// samples the first network was trained on); the heuristic and kNN pick
/// their hyperparameters on the test set itself.
pub fn bench(
    cfg: &RunConfig,
    setup: &Setup,
    train_samples: &[TrainingSample],
    test: &TestSet,
    learners: &[(&str, &Network)],
) -> Result<BenchOutput, PipelineError> {
    let e = &cfg.eval;
    let bg = setup.style.background;
    let min_close_px = setup.gripper.min_close_mm / setup.geo.mm_per_input_px();
    let fixed = |limit_factor: f64| HeuristicParams {
        angle_error_threshold_deg: e.heuristic.angle_threshold_deg,
        eigenvalue_limit: match e.heuristic.mode {
            crate::baselines::ExtentMode::Extent => limit_factor * min_close_px,
            crate::baselines::ExtentMode::RawEigenvalue => limit_factor * min_close_px * min_close_px,
        },
        mode: e.heuristic.mode,
    };
    let (best, _) = setup.in_pool(|| {
        optimistic_heuristic(
            test,
            &e.heuristic.thresholds_deg,
            &e.heuristic.limit_factors,
            min_close_px,
            e.heuristic.mode,
            bg,
        )
    })?;
    let (knn, _) = setup.in_pool(|| optimistic_knn(train_samples, test, &e.hog, &e.knn_ks))?;
    let svm = setup.in_pool(|| -> Result<SvmModel, PipelineError> {
        let items = describe(train_samples, &e.hog)?;
        Ok(svm_train(&items, &e.svm))
    })?;
    let h_angle = HeuristicPredictor {
        name: "heuristic-angle".into(),
        params: fixed(0.0),
        background: bg,
    };
    let h_thin = HeuristicPredictor {
        name: "heuristic-angle-thin".into(),
        params: fixed(e.heuristic.limit_factor),
        background: bg,
    };
    let h_opt = HeuristicPredictor {
        name: "heuristic-optimistic".into(),
        params: best,
        background: bg,
    };
    let knn_p = KnnPredictor {
        model: &knn,
        hog: e.hog,
    };
    let svm_p = SvmPredictor {
        model: &svm,
        hog: e.hog,
    };
    let nets: Vec<NetPredictor> = learners
        .iter()
        .map(|(name, net)| NetPredictor {
            name: name.to_string(),
            net,
            threshold: e.threshold,
        })
        .collect();
    let mut methods: Vec<&dyn Predictor> = vec![&h_angle, &h_thin, &h_opt, &knn_p, &svm_p];
    methods.extend(nets.iter().map(|n| n as &dyn Predictor));
    let report = setup.in_pool(|| compare_all(&methods, test))?;
    Ok(BenchOutput {
        report,
        baselines: BaselineModels {
            heuristic: best,
            knn,
            svm,
        },
    })
}

/// Everything the benchmark run produces.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub setup: Setup,
    pub data0: Dataset,
    pub test: TestSet,
    pub stage0: Stage0,
    pub stages: Vec<StageOutput>,
    pub train_samples: Vec<TrainingSample>,
    pub bench: BenchOutput,
}

/// Names of the learned methods in the comparison.
pub const LEARNER: &str = "learner";
pub const LEARNER_STAGED: &str = "learner-staged";

/// Collect → train → stage → compare, all from one config.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchRun, PipelineError> {
    let setup = build_setup(cfg)?;
    let seed = cfg.seed;
    let data0 = collect_random(&setup, setup.collect.trials, derive_seed(seed, Stream::Collect, 0))?;
    let stage0 = train_stage0(cfg, &setup, &data0, seed, cfg.model.pretrained)?;
    let stages = run_stages(&cfg.stage, &setup, &stage0.model, &data0, cfg.stages, seed)?;
    let test = test_set(cfg, &setup, seed)?;
    let train_samples = setup.samples(&data0, derive_seed(seed, Stream::Augment, 0))?;
    let mut learners = vec![(LEARNER, &stage0.model)];
    if let Some(last) = stages.last() {
        learners.push((LEARNER_STAGED, &last.model));
    }
    let bench = bench(cfg, &setup, &train_samples, &test, &learners)?;
    Ok(BenchRun {
        setup,
        data0,
        test,
        stage0,
        stages,
        train_samples,
        bench,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub study: String,
    pub setting: String,
    pub replicate: usize,
    pub accuracy: f64,
}

fn row(study: &str, setting: impl ToString, replicate: usize, accuracy: f64) -> AblationRow {
    AblationRow {
        study: study.into(),
        setting: setting.to_string(),
        replicate,
        accuracy,
    }
}

fn replicate_seed(cfg: &RunConfig, r: usize) -> u64 {
    derive_seed(cfg.seed, Stream::Ablation, r as u64)
}

/// Accuracy against random-trial count. Each replicate collects the
/// largest size once and trains on its prefixes.
pub fn data_size_curve(cfg: &RunConfig, setup: &Setup, test: &TestSet) -> Result<Vec<AblationRow>, PipelineError> {
    let max = cfg.ablation.sizes.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..cfg.ablation.replicates {
        let seed = replicate_seed(cfg, r);
        let full = collect_random(setup, max, derive_seed(seed, Stream::Collect, 0))?;
        for &n in &cfg.ablation.sizes {
            let s0 = train_stage0(cfg, setup, &full.truncated(n), seed, cfg.model.pretrained)?;
            out.push(row("data_size", n, r, net_accuracy(cfg, &s0.model, test)?));
        }
    }
    Ok(out)
}

/// Pretrained against scratch initialisation on the same data.
pub fn pretrain_ablation(cfg: &RunConfig, setup: &Setup, test: &TestSet) -> Result<Vec<AblationRow>, PipelineError> {
    let mut out = Vec::new();
    for r in 0..cfg.ablation.replicates {
        let seed = replicate_seed(cfg, r);
        let data = collect_random(setup, setup.collect.trials, derive_seed(seed, Stream::Collect, 0))?;
        for (name, pre) in [("pretrained", true), ("scratch", false)] {
            let s0 = train_stage0(cfg, setup, &data, seed, pre)?;
            out.push(row("pretraining", name, r, net_accuracy(cfg, &s0.model, test)?));
        }
    }
    Ok(out)
}

/// Accuracy after each of stages `0..=ablation.stages`, one replicate.
pub fn staging_ablation(
    cfg: &RunConfig,
    setup: &Setup,
    test: &TestSet,
    net0: &Network,
    data0: &Dataset,
) -> Result<Vec<AblationRow>, PipelineError> {
    let mut out = vec![row("stages", 0, 0, net_accuracy(cfg, net0, test)?)];
    let stages = run_stages(&cfg.stage, setup, net0, data0, cfg.ablation.stages, cfg.seed)?;
    for s in &stages {
        out.push(row("stages", s.report.stage, 0, net_accuracy(cfg, &s.model, test)?));
    }
    Ok(out)
}

/// Stage 1 trained on the aggregate against stage 1 trained on its own
/// trials only; replicates vary the stage-1 collection seed.
pub fn aggregation_ablation(
    cfg: &RunConfig,
    setup: &Setup,
    test: &TestSet,
    net0: &Network,
    data0: &Dataset,
) -> Result<Vec<AblationRow>, PipelineError> {
    let mut out = Vec::new();
    for r in 0..cfg.ablation.replicates {
        let seed = replicate_seed(cfg, r);
        for (name, aggregate) in [("aggregated", true), ("new-only", false)] {
            let sc = StageConfig { aggregate, ..cfg.stage };
            let s = run_stages(&sc, setup, net0, data0, 1, seed)?;
            out.push(row("aggregation", name, r, net_accuracy(cfg, &s[0].model, test)?));
        }
    }
    Ok(out)
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["study", "setting", "replicate", "accuracy"])?;
    for r in rows {
        out.write_record([
            r.study.clone(),
            r.setting.clone(),
            r.replicate.to_string(),
            format!("{:.4}", r.accuracy),
        ])?;
    }
    out.flush()?;
    Ok(())
}
