use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use grid_core::dataset::{generate_dataset, write_dataset, DatasetError};
use grid_core::encoder::TextEncoder;
use grid_core::eval::{
    baseline_eval, evaluate, simulate, write_baseline_report, write_eval_report, EchoOracleClient, EvalMode,
    GridPlanner, HttpClient, MajorityBaseline, MockClient, OraclePlanner, Planner, PlannerClient,
};
use grid_core::graph::{read_traces, Trace};
use grid_core::network::{load_checkpoint, save_checkpoint};
use grid_core::training::{build_samples, MetricsRow, TrainError, Trainer};

use crate::config::{config_err, create_dir, ensure_exists, RunConfig};
use crate::{BaselineArgs, EvalArgs, GenerateArgs, PlannerKind, SimulateArgs, Split, TrainArgs};

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_seed(seed);
    Ok(cfg)
}

fn load_split(dir: &Path, split: Split, limit: Option<usize>) -> Result<Vec<Trace>> {
    ensure_exists(dir, "dataset directory")?;
    let file = dir.join(match split {
        Split::Train => "train.jsonl",
        Split::Eval => "eval.jsonl",
    });
    ensure_exists(&file, "dataset file")?;
    let mut traces = read_traces(&file).with_context(|| format!("reading {}", file.display()))?;
    if let Some(n) = limit {
        traces.truncate(n);
    }
    if traces.is_empty() {
        bail!(config_err(format!("{} holds no tasks", file.display())));
    }
    Ok(traces)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(args: &GenerateArgs) -> Result<ExitCode> {
    let mut cfg = load_config(args.common.config.as_deref(), args.common.seed)?;
    if let Some(n) = args.objects {
        cfg.dataset.scene.objects_per_scene = n;
    }
    let tasks = args.tasks.or(cfg.tasks).unwrap_or(200);
    let out = cfg.out_dir(args.common.out.as_deref(), "data");
    let ds = generate_dataset(&cfg.dataset, tasks).map_err(|e| match e {
        DatasetError::ConfigInfeasible(_) | DatasetError::SlotUnsatisfiable { .. } => config_err(e.to_string()),
        other => other.into(),
    })?;
    create_dir(&out)?;
    write_dataset(&out, &ds)?;
    println!(
        "wrote {} train and {} eval tasks to {} (seed {})",
        ds.train.len(),
        ds.eval.len(),
        out.display(),
        cfg.dataset.seed
    );
    print!("{}", ds.stats);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config_digest: String,
    trainer_digest: String,
    seed: u64,
    iterations_done: usize,
    last: Option<&'a MetricsRow>,
}

fn train_error(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::Config(_) | TrainError::EmptyDataset => config_err(e.to_string()),
        other => other.into(),
    }
}

pub fn train(args: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = load_config(args.common.config.as_deref(), args.common.seed)?;
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
    }
    let dataset = args
        .dataset
        .clone()
        .ok_or_else(|| config_err("--dataset is required"))?;
    let traces = load_split(&dataset, Split::Train, args.tasks)?;
    let out = cfg.out_dir(args.common.out.as_deref(), "run");
    create_dir(&out)?;

    let mut trainer = match &args.resume {
        Some(path) => {
            ensure_exists(path, "checkpoint")?;
            let ck = load_checkpoint(path)?;
            let t = Trainer::from_checkpoint(&ck).map_err(train_error)?;
            cfg.model = t.model_cfg.clone();
            cfg.train = t.train_cfg.clone();
            cfg.loss = t.loss_cfg.clone();
            t
        }
        None => {
            cfg.check_training()?;
            let enc = cfg.encoder.build().map_err(|e| config_err(e.to_string()))?;
            Trainer::new(cfg.model.clone(), cfg.train.clone(), cfg.loss.clone(), enc.digest()).map_err(train_error)?
        }
    };
    cfg.encoder.dim = cfg.model.d;
    let encoder = cfg.encoder.build().map_err(|e| config_err(e.to_string()))?;
    if encoder.digest() != trainer.encoder_digest {
        bail!(config_err("configured encoder differs from the one the checkpoint was trained with"));
    }
    let samples = build_samples(&traces, encoder.as_ref(), &cfg.model).map_err(train_error)?;

    let csv_path = out.join("metrics.csv");
    let fresh = args.resume.is_none() || !csv_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&csv_path)
        .with_context(|| format!("opening {}", csv_path.display()))?;
    let mut csv = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);

    let ckpt_path = out.join("checkpoint.grid");
    let until = args
        .stop_after
        .unwrap_or(cfg.train.iterations)
        .min(cfg.train.iterations);
    let save_every = args.save_every.max(1);
    let mut last = None;
    while trainer.iteration < until {
        let row = trainer.step(&samples).map_err(train_error)?;
        csv.serialize(&row)?;
        if row.iteration % args.log_every.max(1) == 0 || row.iteration == until {
            println!(
                "iter {:>5}  lr {:.3e}  loss {:.4}  act {:.4}  obj {:.4}  batch_acc {:.3}",
                row.iteration, row.lr, row.loss, row.loss_act, row.loss_obj, row.batch_sub_acc
            );
        }
        if trainer.iteration % save_every == 0 {
            csv.flush()?;
            save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
        }
        last = Some(row);
    }
    csv.flush()?;
    save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
    write_json(
        &out.join("train.json"),
        &TrainSummary {
            config_digest: cfg.digest(),
            trainer_digest: trainer.config_digest(),
            seed: cfg.train.seed,
            iterations_done: trainer.iteration,
            last: last.as_ref(),
        },
    )?;
    println!("checkpoint: {} (iteration {})", ckpt_path.display(), trainer.iteration);
    Ok(ExitCode::SUCCESS)
}

fn grid_planner(cfg: &mut RunConfig, checkpoint: Option<&PathBuf>) -> Result<GridPlanner> {
    let path = checkpoint.ok_or_else(|| config_err("--checkpoint is required for the grid planner"))?;
    ensure_exists(path, "checkpoint")?;
    let ck = load_checkpoint(path)?;
    cfg.encoder.dim = ck.model.d;
    let enc: Arc<dyn TextEncoder> = Arc::from(cfg.encoder.build().map_err(|e| config_err(e.to_string()))?);
    GridPlanner::from_checkpoint(&ck, enc).map_err(|e| config_err(e.to_string()))
}

fn planner(
    kind: PlannerKind,
    cfg: &mut RunConfig,
    checkpoint: Option<&PathBuf>,
    dataset: &Path,
    traces: &[Trace],
) -> Result<Box<dyn Planner>> {
    Ok(match kind {
        PlannerKind::Grid => Box::new(grid_planner(cfg, checkpoint)?),
        PlannerKind::Oracle => Box::new(OraclePlanner::new(traces)),
        PlannerKind::Majority => {
            let train = load_split(dataset, Split::Train, None)?;
            Box::new(MajorityBaseline::fit(&train))
        }
        PlannerKind::Llm => bail!(config_err("the llm planner is run with the `baseline` command")),
    })
}

#[derive(Serialize)]
struct EvalConfigView<'a> {
    run: &'a RunConfig,
    planner: PlannerKind,
    mode: EvalMode,
    split: Split,
}

pub fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let mut cfg = load_config(args.common.config.as_deref(), args.common.seed)?;
    let dataset = args.dataset.clone().ok_or_else(|| config_err("--dataset is required"))?;
    let traces = load_split(&dataset, args.split, args.tasks)?;
    let planner = planner(args.planner, &mut cfg, args.checkpoint.as_ref(), &dataset, &traces)?;
    let mode = if args.closed_loop {
        EvalMode::ClosedLoop
    } else {
        EvalMode::TeacherForced
    };
    let outcome = evaluate(planner.as_ref(), &traces, mode)?;
    print!("{}", outcome.report);
    let out = cfg.out_dir(args.common.out.as_deref(), "eval");
    let view = EvalConfigView {
        run: &cfg,
        planner: args.planner,
        mode,
        split: args.split,
    };
    write_eval_report(&out, "eval", &outcome, &view)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct BaselineConfigView<'a> {
    run: &'a RunConfig,
    client: String,
    split: Split,
}

pub fn baseline(args: &BaselineArgs) -> Result<ExitCode> {
    let cfg = load_config(args.common.config.as_deref(), args.common.seed)?;
    let dataset = args.dataset.clone().ok_or_else(|| config_err("--dataset is required"))?;
    let traces = load_split(&dataset, args.split, args.tasks)?;
    let client: Arc<dyn PlannerClient> = match (&args.mock, args.planner) {
        (Some(answer), _) => Arc::new(MockClient::constant(answer.clone())),
        (None, PlannerKind::Oracle) => Arc::new(EchoOracleClient::new(&traces, cfg.prompt.n_shots)),
        (None, PlannerKind::Llm) => Arc::new(HttpClient::from_env(&cfg.llm).map_err(|e| config_err(e.to_string()))?),
        (None, other) => bail!(config_err(format!(
            "baseline runs an llm or oracle client, not {other:?}"
        ))),
    };
    let report = baseline_eval(client, &traces, &cfg.prompt)?;
    print!("{}", report.metrics);
    let mean_latency = report.records.iter().map(|r| r.latency_ms).sum::<f64>() / report.records.len().max(1) as f64;
    println!("mean latency {mean_latency:.1} ms over {} calls", report.records.len());
    let out = cfg.out_dir(args.common.out.as_deref(), "baseline");
    let view = BaselineConfigView {
        run: &cfg,
        client: report.client.clone(),
        split: args.split,
    };
    write_baseline_report(&out, "baseline", &report, &view)?;
    Ok(ExitCode::SUCCESS)
}

/// Exit code when the step cap ends a simulation.
pub const CAP_HIT: u8 = 3;

pub fn simulate_cmd(args: &SimulateArgs) -> Result<ExitCode> {
    let mut cfg = load_config(args.common.config.as_deref(), args.common.seed)?;
    let dataset = args.dataset.clone().ok_or_else(|| config_err("--dataset is required"))?;
    let traces = load_split(&dataset, args.split, None)?;
    let trace = match args.task {
        Some(id) => traces
            .iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| config_err(format!("task {id} is not in the {:?} split", args.split)))?,
        None => &traces[0],
    };
    let planner = planner(args.planner, &mut cfg, args.checkpoint.as_ref(), &dataset, &traces)?;
    println!("task {}: {}", trace.task_id, trace.instruction);
    let log = simulate(planner.as_ref(), trace, args.cap);
    for step in &log.steps {
        let pred = match step.prediction {
            Some(p) => format!("{}-{}", p.action.name(), p.object_id),
            None => "none".into(),
        };
        let note = step.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default();
        println!("stage {:>3}  {:<28} applied={}{}", step.step, pred, step.applied, note);
    }
    let out = cfg.out_dir(args.common.out.as_deref(), "simulate");
    create_dir(&out)?;
    #[derive(Serialize)]
    struct SimFile<'a> {
        config_digest: String,
        log: &'a grid_core::eval::SimulationLog,
    }
    write_json(
        &out.join(format!("simulate_{}.json", trace.task_id)),
        &SimFile {
            config_digest: cfg.digest(),
            log: &log,
        },
    )?;
    if log.cap_hit() {
        println!("step cap {} reached without finish", log.cap);
        return Ok(ExitCode::from(CAP_HIT));
    }
    println!("finished; goal reached: {}", log.goal_reached);
    Ok(ExitCode::SUCCESS)
}
