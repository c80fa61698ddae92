//! `graspforge`: collection, training, staging and evaluation from one
//! config file, each invocation writing into its own run directory.

mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use graspforge::collect::{summarize, Dataset, RandomPolicy, SceneView};
use graspforge::config::RunConfig;
use graspforge::curriculum::{write_stage_csv, StageReport, StagedPolicy};
use graspforge::eval::{
    clutter_removal, compare_all, grasp_rate_eval, mean_interactions, rerank, write_clutter_jsonl, ArgmaxPolicy,
    NetPredictor, NetScorer, OraclePredictor, Predictor, RerankPolicy,
};
use graspforge::learner::{write_loss_csv, Network};
use graspforge::patch::write_record_patches;
use graspforge::pipeline::{
    aggregation_ablation, aux_accuracy, build_setup, collect_random, data_size_curve, initial_network, net_accuracy,
    pretrain_ablation, run_benchmark, run_stages, staging_ablation, test_set, train_stage0, write_ablation_csv,
    AblationRow,
};
use graspforge::rng::{derive_seed, stream_rng, Stream};
use graspforge::scene::write_scenes;
use graspforge::setup::Setup;

use run::{load_model, Common, Failure, RunDir};

#[derive(Debug, Parser)]
#[command(
    name = "graspforge",
    version,
    about = "Self-supervised planar grasp learning in simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate scenes from the seen library and render them.
    GenScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Random grasp trials: dataset CSV, scenes and patches.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Auxiliary shape-category pretraining of the convolutional trunk.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train the first grasp network on random trials.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from `collect`; collects afresh when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Staged collection and aggregated retraining.
    Stage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Stage-0 checkpoint; trained from `--data` when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Held-out accuracy and grasp rate of one model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Full comparison of the learner against the baselines.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Data-size, pretraining, staging and aggregation studies.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Study::All)]
        study: Study,
    },
    /// Re-ranked against plain arg-max grasp selection under execution noise.
    RerankDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Clearing cluttered tables with a trained policy and at random.
    Clutter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Collect the tables of a finished run directory into one report.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        from: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    All,
    DataSize,
    Pretraining,
    Staging,
    Aggregation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenScenes { common, count } => gen_scenes(&common, count),
        Command::Collect { common } => collect(&common),
        Command::Pretrain { common } => pretrain(&common),
        Command::Train { common, data } => train(&common, data.as_deref()),
        Command::Stage { common, data, model } => stage(&common, data.as_deref(), model.as_deref()),
        Command::Eval { common, model } => eval(&common, model.as_deref()),
        Command::Bench { common } => bench(&common),
        Command::Ablate { common, study } => ablate(&common, study),
        Command::RerankDemo { common, model } => rerank_demo(&common, model.as_deref()),
        Command::Clutter { common, model } => clutter(&common, model.as_deref()),
        Command::Report { common, from } => report(&common, &from),
    }
}

/// Resolves the config, builds the setup and opens the run directory, in
/// that order, so a bad config never touches the filesystem.
fn prepare(common: &Common, name: &str) -> Result<(RunConfig, Setup, RunDir), Failure> {
    let cfg = common.resolve()?;
    let setup = build_setup(&cfg)?;
    let out = common.out.clone().unwrap_or_else(|| Path::new("runs").join(name));
    let run = RunDir::create(&out, common.force, &cfg)?;
    Ok((cfg, setup, run))
}

fn random_trials(cfg: &RunConfig, setup: &Setup, data: Option<&Path>, run: &mut RunDir) -> Result<Dataset, Failure> {
    match data {
        Some(dir) => {
            let d = Dataset::load(dir)?;
            run.log(format!("loaded {} trials from {}", d.len(), dir.display()));
            Ok(d)
        }
        None => {
            let d = collect_random(setup, setup.collect.trials, derive_seed(cfg.seed, Stream::Collect, 0))?;
            run.log(format!("collected {} random trials", d.len()));
            d.save(&run.path("dataset"))?;
            Ok(d)
        }
    }
}

fn first_model(
    cfg: &RunConfig,
    setup: &Setup,
    data0: &Dataset,
    model: Option<&Path>,
    run: &mut RunDir,
) -> Result<Network, Failure> {
    match model {
        Some(p) => {
            run.log(format!("loaded model from {}", p.display()));
            load_model(p)
        }
        None => {
            let s0 = train_stage0(cfg, setup, data0, cfg.seed, cfg.model.pretrained)?;
            run.log(format!("trained stage-0 model for {} epochs", s0.curve.len()));
            run.save_model("model_stage0.ckpt", &s0.model)?;
            Ok(s0.model)
        }
    }
}

fn rate(r: Option<f64>) -> String {
    r.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn gen_scenes(common: &Common, count: usize) -> Result<(), Failure> {
    let (cfg, setup, run) = prepare(common, "gen-scenes")?;
    let source = setup.seen_source(&setup.collect);
    let mut rng = stream_rng(cfg.seed, Stream::Collect, u64::MAX);
    let scenes = (0..count)
        .map(|_| source.sample(&mut rng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::runtime)?;
    run.write("scenes.txt", &write_scenes(&scenes))?;
    for (i, s) in scenes.iter().enumerate() {
        let view = SceneView::new(s.clone(), &setup.style, 0);
        let mut f = run.file(format!("images/scene_{i:04}.pgm"))?;
        view.image.write_pgm(&mut f)?;
    }
    let objects: usize = scenes.iter().map(|s| s.len()).sum();
    let summary = format!(
        "gen-scenes: {count} scenes, {objects} objects -> {}",
        run.root.display()
    );
    run.finish(&summary)
}

fn collect(common: &Common) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "collect")?;
    let data = random_trials(&cfg, &setup, None, &mut run)?;
    write_record_patches(&data, &run.path("dataset"), &setup.geo, &setup.style)?;
    let stats = summarize(&data, None);
    run.json("stats.json", &stats)?;
    let summary = format!(
        "collect: {} trials, {} positives, grasp rate {} -> {}",
        stats.total,
        stats.positives,
        rate(stats.grasp_rate),
        run.root.display()
    );
    run.finish(&summary)
}

fn pretrain(common: &Common) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "pretrain")?;
    let (net, report) = initial_network(&cfg, &setup, cfg.seed, true)?;
    let report = report.ok_or_else(|| Failure::Runtime("pretraining produced no report".into()))?;
    run.save_model("pretrained.ckpt", &net)?;
    run.save_model("aux.ckpt", &report.aux_net)?;
    write_loss_csv(&report.curve, run.file("pretrain_loss.csv")?)?;
    let acc = aux_accuracy(&cfg, &setup, &report, cfg.seed)?;
    run.log(format!("auxiliary task trained for {} epochs", report.curve.len()));
    let summary = format!(
        "pretrain: held-out category accuracy {acc:.4} -> {}",
        run.root.display()
    );
    run.finish(&summary)
}

fn train(common: &Common, data: Option<&Path>) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "train")?;
    let data0 = random_trials(&cfg, &setup, data, &mut run)?;
    let s0 = train_stage0(&cfg, &setup, &data0, cfg.seed, cfg.model.pretrained)?;
    run.save_model("model.ckpt", &s0.model)?;
    write_loss_csv(&s0.curve, run.file("loss.csv")?)?;
    if let Some(p) = &s0.pretrain {
        write_loss_csv(&p.curve, run.file("pretrain_loss.csv")?)?;
    }
    let last = s0.curve.last().map_or("n/a".into(), |l| format!("{:.4}", l.loss));
    let summary = format!(
        "train: {} trials, {} epochs, final loss {last} -> {}",
        data0.len(),
        s0.curve.len(),
        run.root.display()
    );
    run.finish(&summary)
}

fn stage(common: &Common, data: Option<&Path>, model: Option<&Path>) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "stage")?;
    let data0 = random_trials(&cfg, &setup, data, &mut run)?;
    let net0 = first_model(&cfg, &setup, &data0, model, &mut run)?;
    let stages = run_stages(&cfg.stage, &setup, &net0, &data0, cfg.stages, cfg.seed)?;
    let test = test_set(&cfg, &setup, cfg.seed)?;
    let s0 = summarize(&data0, None);
    let mut reports = vec![StageReport {
        stage: 0,
        trials: s0.total,
        positives: s0.positives,
        grasp_rate: s0.grasp_rate,
        benchmark_accuracy: Some(net_accuracy(&cfg, &net0, &test)?),
    }];
    for s in &stages {
        let k = s.report.stage;
        run.save_model(format!("stage_{k}/model.ckpt"), &s.model)?;
        s.new_trials.save(&run.path(format!("stage_{k}/trials")))?;
        s.aggregate.write_csv(run.file(format!("stage_{k}/aggregate.csv"))?)?;
        write_loss_csv(&s.curve, run.file(format!("stage_{k}/loss.csv"))?)?;
        reports.push(StageReport {
            benchmark_accuracy: Some(net_accuracy(&cfg, &s.model, &test)?),
            ..s.report
        });
        run.log(format!("stage {k}: grasp rate {}", rate(s.report.grasp_rate)));
    }
    write_stage_csv(&reports, run.file("stages.csv")?)?;
    let acc = |r: &StageReport| r.benchmark_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"));
    let last = reports.last().expect("stage 0 row");
    let summary = format!(
        "stage: {} stages, last grasp rate {}, accuracy {} -> {} -> {}",
        stages.len(),
        rate(last.grasp_rate),
        acc(&reports[0]),
        acc(last),
        run.root.display()
    );
    run.finish(&summary)
}

#[derive(Serialize)]
struct RateSummary {
    method: String,
    tries: usize,
    jitter_mm: f64,
    successes: usize,
    grasp_rate: Option<f64>,
}

fn eval(common: &Common, model: Option<&Path>) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "eval")?;
    let net = match model {
        Some(p) => load_model(p)?,
        None => {
            let data0 = random_trials(&cfg, &setup, None, &mut run)?;
            first_model(&cfg, &setup, &data0, None, &mut run)?
        }
    };
    let test = test_set(&cfg, &setup, cfg.seed)?;
    let learner = NetPredictor {
        name: "learner".into(),
        net: &net,
        threshold: cfg.eval.threshold,
    };
    let oracle = OraclePredictor {
        gripper: &setup.gripper,
    };
    let methods: Vec<&dyn Predictor> = vec![&learner, &oracle];
    let report = setup.in_pool(|| compare_all(&methods, &test))?;
    report.write_csv(run.file("eval.csv")?)?;
    run.write("eval.txt", &report.to_text())?;
    run.json(
        "test_stats.json",
        &BTreeMap::from([("raw", test.raw), ("balanced", summarize(&test.dataset, None))]),
    )?;
    let scorer = NetScorer {
        net: &net,
        geo: &setup.geo,
    };
    let held = setup.heldout_source(&setup.collect);
    let (stats, _) = grasp_rate_eval(
        &setup,
        &held,
        || ArgmaxPolicy {
            scorer: &scorer,
            n_patches: cfg.eval.rerank.n_patches,
        },
        cfg.eval.rate_tries,
        0.0,
        derive_seed(cfg.seed, Stream::Eval, 0),
    )?;
    run.json(
        "grasp_rate.json",
        &RateSummary {
            method: "argmax".into(),
            tries: stats.total,
            jitter_mm: 0.0,
            successes: stats.positives,
            grasp_rate: stats.grasp_rate,
        },
    )?;
    let summary = format!(
        "eval: accuracy {:.4} on {} held-out records, arg-max grasp rate {} -> {}",
        report.get("learner").unwrap_or(0.0),
        test.len(),
        rate(stats.grasp_rate),
        run.root.display()
    );
    run.finish(&summary)
}

fn bench(common: &Common) -> Result<(), Failure> {
    let (cfg, _, run) = prepare(common, "bench")?;
    let b = run_benchmark(&cfg)?;
    b.bench.report.write_csv(run.file("report.csv")?)?;
    run.write("report.txt", &b.bench.report.to_text())?;
    b.data0.save(&run.path("dataset"))?;
    run.save_model("model_stage0.ckpt", &b.stage0.model)?;
    write_loss_csv(&b.stage0.curve, run.file("loss.csv")?)?;
    let s0 = summarize(&b.data0, None);
    let mut reports = vec![StageReport {
        stage: 0,
        trials: s0.total,
        positives: s0.positives,
        grasp_rate: s0.grasp_rate,
        benchmark_accuracy: Some(net_accuracy(&cfg, &b.stage0.model, &b.test)?),
    }];
    for s in &b.stages {
        run.save_model(format!("model_stage{}.ckpt", s.report.stage), &s.model)?;
        reports.push(StageReport {
            benchmark_accuracy: Some(net_accuracy(&cfg, &s.model, &b.test)?),
            ..s.report
        });
    }
    write_stage_csv(&reports, run.file("stages.csv")?)?;
    let m = &b.bench.baselines;
    m.svm.save(run.file("svm.ckpt")?)?;
    m.knn.save(run.file("knn.ckpt")?)?;
    m.heuristic.save(run.file("heuristic.ckpt")?)?;
    run.json(
        "test_stats.json",
        &BTreeMap::from([("raw", b.test.raw), ("balanced", summarize(&b.test.dataset, None))]),
    )?;
    let cells: Vec<String> = b
        .bench
        .report
        .rows
        .iter()
        .map(|r| format!("{} {:.4}", r.method, r.accuracy))
        .collect();
    let summary = format!(
        "bench: {} on {} records -> {}",
        cells.join(", "),
        b.test.len(),
        run.root.display()
    );
    run.finish(&summary)
}

fn ablate(common: &Common, study: Study) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "ablate")?;
    let test = test_set(&cfg, &setup, cfg.seed)?;
    let wants = |s: Study| study == Study::All || study == s;
    let mut rows: Vec<AblationRow> = Vec::new();
    if wants(Study::DataSize) {
        rows.extend(data_size_curve(&cfg, &setup, &test)?);
        run.log("data-size curve done");
    }
    if wants(Study::Pretraining) {
        rows.extend(pretrain_ablation(&cfg, &setup, &test)?);
        run.log("pretraining study done");
    }
    if wants(Study::Staging) || wants(Study::Aggregation) {
        let data0 = random_trials(&cfg, &setup, None, &mut run)?;
        let net0 = first_model(&cfg, &setup, &data0, None, &mut run)?;
        if wants(Study::Staging) {
            rows.extend(staging_ablation(&cfg, &setup, &test, &net0, &data0)?);
            run.log("staging study done");
        }
        if wants(Study::Aggregation) {
            rows.extend(aggregation_ablation(&cfg, &setup, &test, &net0, &data0)?);
            run.log("aggregation study done");
        }
    }
    write_ablation_csv(&rows, run.file("ablation.csv")?)?;
    let mut means: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = means.entry((r.study.clone(), r.setting.clone())).or_default();
        e.0 += r.accuracy;
        e.1 += 1;
    }
    let cells: Vec<String> = means
        .iter()
        .map(|((s, k), (sum, n))| format!("{s}/{k} {:.4}", sum / *n as f64))
        .collect();
    let summary = format!("ablate: {} -> {}", cells.join(", "), run.root.display());
    run.finish(&summary)
}

fn trained_or_loaded(
    cfg: &RunConfig,
    setup: &Setup,
    model: Option<&Path>,
    run: &mut RunDir,
) -> Result<Network, Failure> {
    if let Some(p) = model {
        return load_model(p);
    }
    let data0 = random_trials(cfg, setup, None, run)?;
    let net0 = first_model(cfg, setup, &data0, None, run)?;
    let stages = run_stages(&cfg.stage, setup, &net0, &data0, cfg.stages, cfg.seed)?;
    match stages.into_iter().last() {
        Some(s) => {
            run.save_model(format!("model_stage{}.ckpt", s.report.stage), &s.model)?;
            run.log(format!("staged model ready after stage {}", s.report.stage));
            Ok(s.model)
        }
        None => Ok(net0),
    }
}

fn rerank_demo(common: &Common, model: Option<&Path>) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "rerank-demo")?;
    let net = trained_or_loaded(&cfg, &setup, model, &mut run)?;
    let scorer = NetScorer {
        net: &net,
        geo: &setup.geo,
    };
    let held = setup.heldout_source(&setup.collect);
    let e = &cfg.eval;
    let seed = derive_seed(cfg.seed, Stream::Eval, 1);
    let (argmax, _) = grasp_rate_eval(
        &setup,
        &held,
        || ArgmaxPolicy {
            scorer: &scorer,
            n_patches: e.rerank.n_patches,
        },
        e.rate_tries,
        e.rerank_jitter_mm,
        seed,
    )?;
    let (reranked, _) = grasp_rate_eval(
        &setup,
        &held,
        || RerankPolicy {
            scorer: &scorer,
            cfg: e.rerank,
        },
        e.rate_tries,
        e.rerank_jitter_mm,
        seed,
    )?;
    let rows: Vec<RateSummary> = [("argmax", argmax), ("rerank", reranked)]
        .into_iter()
        .map(|(m, s)| RateSummary {
            method: m.into(),
            tries: s.total,
            jitter_mm: e.rerank_jitter_mm,
            successes: s.positives,
            grasp_rate: s.grasp_rate,
        })
        .collect();
    run.json("rerank.json", &rows)?;
    // one decision laid out in full, for inspection
    let mut rng = stream_rng(seed, Stream::Eval, u64::MAX);
    let scene = held.sample(&mut rng).map_err(Failure::runtime)?;
    let view = SceneView::new(scene, &setup.style, 0);
    let outcome = rerank(&scorer, &view, &e.rerank, &mut rng)?;
    let mut w = csv::Writer::from_writer(run.file("candidates.csv")?);
    w.write_record([
        "rank",
        "x_mm",
        "y_mm",
        "bin",
        "original_score",
        "reranked_score",
        "chosen",
    ])?;
    for (i, c) in outcome.candidates.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.3}", c.center.0),
            format!("{:.3}", c.center.1),
            c.bin.to_string(),
            format!("{:.6}", c.original_score),
            format!("{:.6}", c.reranked_score),
            ((i == outcome.chosen) as u8).to_string(),
        ])?;
    }
    w.flush()?;
    let summary = format!(
        "rerank-demo: {} grasps at {}mm jitter, arg-max rate {}, re-ranked rate {} -> {}",
        e.rate_tries,
        e.rerank_jitter_mm,
        rate(argmax.grasp_rate),
        rate(reranked.grasp_rate),
        run.root.display()
    );
    run.finish(&summary)
}

#[derive(Serialize)]
struct ClutterSummary {
    policy: String,
    runs: usize,
    cleared: usize,
    interactions: Vec<usize>,
    mean_interactions: f64,
}

fn clutter(common: &Common, model: Option<&Path>) -> Result<(), Failure> {
    let (cfg, setup, mut run) = prepare(common, "clutter")?;
    let net = trained_or_loaded(&cfg, &setup, model, &mut run)?;
    let library = setup.libraries.seen.concat(&setup.libraries.novel);
    let seed = derive_seed(cfg.seed, Stream::Clutter, 0);
    let c = &cfg.eval.clutter;
    let trained = clutter_removal(
        &setup,
        &library,
        || StagedPolicy::new(&net, &setup.geo, cfg.stage.n_patches, cfg.stage.sampling),
        c,
        seed,
    )?;
    let random = clutter_removal(&setup, &library, || RandomPolicy, c, seed)?;
    write_clutter_jsonl(&trained, run.file("clutter_model.jsonl")?)?;
    write_clutter_jsonl(&random, run.file("clutter_random.jsonl")?)?;
    let sum = |name: &str, logs: &[graspforge::eval::ClutterRunLog]| ClutterSummary {
        policy: name.into(),
        runs: logs.len(),
        cleared: logs.iter().filter(|l| l.cleared).count(),
        interactions: logs.iter().map(|l| l.interactions()).collect(),
        mean_interactions: mean_interactions(logs),
    };
    let rows = [sum("model", &trained), sum("random", &random)];
    run.json("clutter.json", &rows)?;
    let summary = format!(
        "clutter: {} objects, mean interactions model {:.1} vs random {:.1} over {} runs -> {}",
        c.objects,
        rows[0].mean_interactions,
        rows[1].mean_interactions,
        c.runs,
        run.root.display()
    );
    run.finish(&summary)
}

/// Files a finished run may hold, in report order.
const REPORT_PARTS: [(&str, &str); 8] = [
    ("report.txt", "Method comparison"),
    ("stages.csv", "Stages"),
    ("ablation.csv", "Ablations"),
    ("eval.txt", "Evaluation"),
    ("grasp_rate.json", "Grasp rate"),
    ("rerank.json", "Re-ranking"),
    ("clutter.json", "Clutter removal"),
    ("stats.json", "Collection"),
];

fn report(common: &Common, from: &Path) -> Result<(), Failure> {
    if !from.is_dir() {
        return Err(Failure::Runtime(format!("{} is not a run directory", from.display())));
    }
    let (_, _, run) = prepare(common, "report")?;
    let mut text = format!("# Run {}\n", from.display());
    let mut found = 0;
    for (file, title) in REPORT_PARTS {
        if let Ok(body) = std::fs::read_to_string(from.join(file)) {
            text.push_str(&format!("\n## {title}\n\n```\n{}```\n", body));
            found += 1;
        }
    }
    run.write("report.md", &text)?;
    let summary = format!(
        "report: {found} sections from {} -> {}",
        from.display(),
        run.root.display()
    );
    run.finish(&summary)
}
