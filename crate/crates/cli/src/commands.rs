use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dtmapf_core::dataset::{build_corpus, read_dataset};
use dtmapf_core::io::{load_problem, save_json, ProblemFile};
use dtmapf_core::metrics::{aggregate, to_csv, to_json, KeyField, MetricsOptions};
use dtmapf_core::planner::{plan_cbs, plan_prioritized, plan_with_fallback, validate_plan, CbsConfig};
use dtmapf_core::seed::derive;
use dtmapf_core::{generate_map, sample_instance};
use dtmapf_harness::eval::EvalSpec;
use dtmapf_harness::scenario::{AdvisorKind, ScenarioConfig, ScenarioMode, DEFAULT_WINDOW};
use dtmapf_harness::DtPolicyConfig;
use dtmapf_model::{load_checkpoint, save_checkpoint, TrainState};
use log::info;
use serde::Serialize;

use crate::manifest::Manifest;
use crate::pipeline::{corpus_preset, eval_model, make_advisor, model_preset, train_on};
use crate::verify::{run_suite, SuiteOptions};

#[derive(Debug, Parser)]
#[command(name = "dtmapf", version, about = "Decision Transformer path finding pipeline")]
pub struct Cli {
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random maps with agent tasks.
    Gen(GenArgs),
    /// Solve a problem file with the expert planner.
    Plan(PlanArgs),
    /// Build an expert trajectory corpus.
    Dataset(DatasetArgs),
    /// Train a Decision Transformer on a corpus.
    Train(TrainArgs),
    /// Evaluate on static instances, optionally with an advisor rescue.
    EvalStatic(EvalStaticArgs),
    /// Evaluate under a mid-episode goal change.
    EvalDynamic(EvalDynamicArgs),
    /// Run the self-check suites; exits nonzero if any fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 20)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub agents: usize,
    #[arg(long, default_value_t = 0.0)]
    pub density: f64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerChoice {
    Cbs,
    Prioritized,
    /// CBS, falling back to prioritized planning when the node budget runs out.
    Auto,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlannerChoice::Auto)]
    pub planner: PlannerChoice,
    #[arg(long, default_value_t = 256)]
    pub horizon: u32,
    #[arg(long, default_value_t = 100_000)]
    pub node_budget: usize,
    #[arg(long)]
    pub hold_goal: bool,
    /// Seed for the priority orders of the fallback planner.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// `desk`, `paper`, `toy` or a JSON corpus spec.
    #[arg(long, default_value = "desk")]
    pub spec: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of maps per combination.
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `toy`, `default`, `tiny` or a JSON file with `model` and `train` sections.
    #[arg(long, default_value = "toy")]
    pub config: String,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from a checkpoint; model and optimizer settings come from it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Score the model on at most this many chunks after training.
    #[arg(long)]
    pub eval_chunks: Option<usize>,
    /// Force a single worker thread.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvisorChoice {
    None,
    Oracle,
    Llm,
}

impl From<AdvisorChoice> for AdvisorKind {
    fn from(a: AdvisorChoice) -> Self {
        match a {
            AdvisorChoice::None => AdvisorKind::None,
            AdvisorChoice::Oracle => AdvisorKind::Oracle,
            AdvisorChoice::Llm => AdvisorKind::Llm,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalCommon {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub agents: usize,
    #[arg(long, default_value_t = 0.0)]
    pub density: f64,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub horizon: u32,
    #[arg(long, value_enum, default_value_t = AdvisorChoice::None)]
    pub advisor: AdvisorChoice,
    /// Return-to-go the policy is conditioned on at the start.
    #[arg(long, default_value_t = 20.0)]
    pub target_rtg: f64,
    /// Softmax temperature for the policy's action choice; 0 is greedy.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Summary CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON as well.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Full episode traces, one JSON object per line.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Keep failed episodes in the SoC aggregate, counting unfinished agents at the horizon.
    #[arg(long)]
    pub soc_cap_failures: bool,
    /// JSON file with LLM client settings; endpoint and key always come from the environment.
    #[arg(long)]
    pub llm_config: Option<PathBuf>,
    /// JSONL log of LLM calls.
    #[arg(long)]
    pub llm_log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalStaticArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Steps before the advisor takes over unfinished agents (default: half the horizon).
    #[arg(long)]
    pub budget: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalDynamicArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(long, default_value_t = 0.25)]
    pub fraction: f64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: u32,
    /// Goal-change timestep; defaults to 15/30/50 for sizes 20/40/80.
    #[arg(long)]
    pub t_change: Option<u32>,
    /// Advise every unfinished agent during the window, not only the affected ones.
    #[arg(long)]
    pub advise_all_unfinished: bool,
    /// Reset the policy's context when its goal changes.
    #[arg(long)]
    pub clear_context_on_change: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run the full 720-instance planner safety sweep.
    #[arg(long)]
    pub full: bool,
    /// Write the check results as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Plan(a) => cmd_plan(&a),
        Command::Dataset(a) => cmd_dataset(&a),
        Command::Train(a) => cmd_train(&a),
        Command::EvalStatic(a) => cmd_eval_static(&a),
        Command::EvalDynamic(a) => cmd_eval_dynamic(&a),
        Command::Verify(a) => cmd_verify(&a),
    }
    .map(|ok| if ok { 0 } else { 1 })
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

pub fn cmd_gen(a: &GenArgs) -> Result<bool> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = Manifest::new("gen", a)?;
    for i in 0..a.count {
        let idx = i as u64;
        let map = generate_map(a.size, a.size, a.density, derive(a.seed, "gen-map", idx))?;
        let inst = sample_instance(&map, a.agents, derive(a.seed, "gen-instance", idx))?;
        let path = a.out.join(format!("problem_{i:04}.json"));
        save_json(&path, &ProblemFile::new(&map, &inst, Some(derive(a.seed, "gen-map", idx))))?;
        manifest.output(&path)?;
    }
    manifest.write_for(&a.out)?;
    info!("wrote {} problems to {}", a.count, a.out.display());
    Ok(true)
}

pub fn cmd_plan(a: &PlanArgs) -> Result<bool> {
    require(&a.problem, "problem file")?;
    let (map, inst) = load_problem(&a.problem)?;
    let cfg = CbsConfig {
        horizon: a.horizon,
        node_budget: a.node_budget,
        hold_goal: a.hold_goal,
    };
    let plan = match a.planner {
        PlannerChoice::Cbs => plan_cbs(&map, &inst, &cfg)?,
        PlannerChoice::Prioritized => {
            let order: Vec<usize> = (0..inst.len()).collect();
            plan_prioritized(&map, &inst, &order, a.horizon, a.hold_goal)?
        }
        PlannerChoice::Auto => plan_with_fallback(&map, &inst, &cfg, a.seed)?.plan,
    };
    let conflicts = validate_plan(&map, &plan, a.hold_goal)?;
    if !conflicts.is_empty() {
        bail!("planner returned a plan with {} conflicts", conflicts.len());
    }
    create_parent(&a.out)?;
    save_json(&a.out, &plan)?;
    let mut manifest = Manifest::new("plan", a)?;
    manifest.input(&a.problem)?.output(&a.out)?;
    manifest.write_for(&a.out)?;
    println!("soc {} makespan {}", plan.soc, plan.makespan);
    Ok(true)
}

pub fn cmd_dataset(a: &DatasetArgs) -> Result<bool> {
    let mut spec = corpus_preset(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.envs {
        spec.envs_per_combination = n;
    }
    create_parent(&a.out)?;
    let meta = build_corpus(&spec, &a.out)?;
    let mut manifest = Manifest::new("dataset", &spec)?;
    if Path::new(&a.spec).is_file() {
        manifest.input(Path::new(&a.spec))?;
    }
    manifest.output(&a.out)?;
    manifest.write_for(&a.out)?;
    info!(
        "{} episodes, {} skipped, {} chunks written to {}",
        meta.episodes,
        meta.skips.len(),
        meta.chunks,
        a.out.display()
    );
    Ok(true)
}

pub fn cmd_train(a: &TrainArgs) -> Result<bool> {
    require(&a.data, "dataset")?;
    if a.deterministic {
        // The global pool may already exist; training itself is sequential.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let (meta, chunks) = read_dataset(&a.data)?;
    let mut state: TrainState<f32> = match &a.resume {
        Some(path) => {
            require(path, "checkpoint")?;
            load_checkpoint(path)?
        }
        None => {
            let mut file = model_preset(&a.config)?;
            if file.model.context_len != meta.spec.context_len {
                info!(
                    "using the corpus context length {} instead of {}",
                    meta.spec.context_len, file.model.context_len
                );
                file.model.context_len = meta.spec.context_len;
            }
            if let Some(b) = a.batch_size {
                file.train.batch_size = b;
            }
            if let Some(lr) = a.lr {
                file.train.lr = lr;
            }
            if let Some(s) = a.seed {
                file.train.seed = s;
                file.model.param_seed = s;
            }
            TrainState::new(file.model, file.train)?
        }
    };
    let until = a.steps.unwrap_or(state.train.steps);
    state.train.steps = until;
    let mut log = match &a.log {
        Some(p) => {
            create_parent(p)?;
            let append = a.resume.is_some() && p.exists();
            let f = fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(p)?;
            Some(BufWriter::new(f))
        }
        None => None,
    };
    let (_, summary) = train_on(
        &mut state,
        &chunks,
        until,
        a.eval_chunks,
        log.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    create_parent(&a.out)?;
    save_checkpoint(&state, &a.out)?;
    let metrics_path = a.out.with_extension("metrics.json");
    fs::write(&metrics_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    let mut manifest = Manifest::new(
        "train",
        serde_json::json!({"model": state.model.config, "train": state.train, "args": a}),
    )?;
    manifest.input(&a.data)?;
    if let Some(r) = &a.resume {
        manifest.input(r)?;
    }
    manifest.output(&a.out)?.output(&metrics_path)?;
    manifest.write_for(&a.out)?;
    println!(
        "step {} loss {:.4} accuracy {:.4} over {} chunks",
        summary.steps, summary.loss, summary.accuracy, summary.evaluated_chunks
    );
    Ok(true)
}

fn run_eval_command(common: &EvalCommon, spec: EvalSpec, policy: DtPolicyConfig, command: &str, args: impl Serialize) -> Result<bool> {
    require(&common.checkpoint, "checkpoint")?;
    let state: TrainState<f32> = load_checkpoint(&common.checkpoint)?;
    let model = Arc::new(state.model);
    let mut advisor = make_advisor(spec.scenario.advisor, common.llm_config.as_deref(), common.llm_log.as_deref())?;
    let outcome = eval_model(&spec, &model, &policy, advisor.as_mut().map(|a| &mut **a as &mut dyn dtmapf_harness::Advisor))?;
    for (i, reason) in &outcome.skipped {
        log::warn!("episode {i} skipped: {reason}");
    }
    let opts = MetricsOptions {
        soc_cap_failures: common.soc_cap_failures,
    };
    let fields = [KeyField::MapSize, KeyField::Agents, KeyField::Density, KeyField::Advisor, KeyField::Fraction];
    let rows = aggregate(&outcome.records, &fields, &[spec.key()], &opts)?;
    create_parent(&common.out)?;
    fs::write(&common.out, to_csv(&rows))?;
    let mut manifest = Manifest::new(command, serde_json::json!({"spec": spec, "policy": policy, "args": args}))?;
    manifest.input(&common.checkpoint)?;
    if let Some(p) = &common.llm_config {
        manifest.input(p)?;
    }
    manifest.output(&common.out)?;
    if let Some(p) = &common.json {
        create_parent(p)?;
        fs::write(p, to_json(&rows)? + "\n")?;
        manifest.output(p)?;
    }
    if let Some(p) = &common.records {
        create_parent(p)?;
        let mut w = BufWriter::new(File::create(p)?);
        for (_, r) in &outcome.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
        manifest.output(p)?;
    }
    manifest.write_for(&common.out)?;
    print!("{}", to_csv(&rows));
    Ok(true)
}

fn base_spec(c: &EvalCommon, scenario: ScenarioConfig, t_change: Option<u32>) -> EvalSpec {
    EvalSpec {
        map_size: c.size,
        n_agents: c.agents,
        density: c.density,
        episodes: c.episodes,
        seed: c.seed,
        horizon: c.horizon,
        t_change,
        scenario,
    }
}

pub fn cmd_eval_static(a: &EvalStaticArgs) -> Result<bool> {
    let c = &a.common;
    let advisor = AdvisorKind::from(c.advisor);
    let scenario = ScenarioConfig {
        mode: if advisor == AdvisorKind::None {
            ScenarioMode::Static
        } else {
            ScenarioMode::StaticRescue
        },
        advisor,
        budget: a.budget,
        seed: c.seed,
        ..ScenarioConfig::default()
    };
    let policy = DtPolicyConfig {
        target_rtg: c.target_rtg,
        temperature: c.temperature,
        seed: c.seed,
        ..DtPolicyConfig::default()
    };
    run_eval_command(c, base_spec(c, scenario, None), policy, "eval-static", a)
}

pub fn cmd_eval_dynamic(a: &EvalDynamicArgs) -> Result<bool> {
    let c = &a.common;
    let scenario = ScenarioConfig {
        mode: ScenarioMode::Dynamic,
        fraction: a.fraction,
        window: a.window,
        advisor: c.advisor.into(),
        advise_all_unfinished: a.advise_all_unfinished,
        seed: c.seed,
        ..ScenarioConfig::default()
    };
    let policy = DtPolicyConfig {
        target_rtg: c.target_rtg,
        clear_context_on_change: a.clear_context_on_change,
        temperature: c.temperature,
        seed: c.seed,
    };
    let spec = base_spec(c, scenario, a.t_change);
    spec.resolved_t_change()?;
    run_eval_command(c, spec, policy, "eval-dynamic", a)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<bool> {
    let checks = run_suite(&SuiteOptions {
        seed: a.seed,
        full: a.full,
    });
    for c in &checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(p) = &a.report {
        create_parent(p)?;
        fs::write(p, serde_json::to_string_pretty(&checks)? + "\n")?;
    }
    Ok(checks.iter().all(|c| c.passed))
}
