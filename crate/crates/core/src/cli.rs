use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use koopctl::config::{parse_config, AnalysisConfig, ConfigOverrides, RankValue, CONFIG_FORMAT};
use koopctl::dmdc::{fit_dmdc_with, reconstruction_mse, serialize_model, RankRule};
use koopctl::embed::build_snapshots;
use koopctl::envsim::{
    rollout_tagged, trial_seed, CartPoleGains, Env, HoverGains, LanderGains, Policy,
};
use koopctl::pipeline::{
    analyze_all, detect_hidden_progress, lower_median, summarize_run, Direction, PipelineError,
};
use koopctl::plot::render_plots;
use koopctl::report::{emit_report, InputDigest, ReportFormat, ReproHeader};
use koopctl::specmetrics::{normalized_ctrb_rank, spectrum};
use koopctl::trajmodel::{parse_trajectory_file, serialize_trajectory_file, Trajectory, TrajectorySet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "koopctl", version, about = "Koopman-with-control analysis of agent trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out a scripted policy and write a trajectory file.
    Rollout(RolloutArgs),
    /// Fit one model to every trajectory in a file and print its metrics.
    Fit(FitArgs),
    /// Fit every (checkpoint, seed) pair, aggregate and flag hidden progress.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct RolloutArgs {
    /// cartpole, acrobot or lander.
    #[arg(long)]
    env: Env,
    /// pd, pump, descent, noop, hover or random (full names also accepted).
    #[arg(long)]
    policy: String,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Defaults to 200 (cartpole), 500 (acrobot) or 1000 (lander).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    checkpoint: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalysisFlags {
    /// JSON settings record; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_delay: Option<usize>,
    /// Output-space rank: `full`, an integer, or an energy fraction in (0, 1).
    #[arg(long)]
    svd_rank: Option<RankRule>,
    /// Input-space rank, same syntax. Defaults to `full`.
    #[arg(long)]
    svd_rank_omega: Option<RankRule>,
    /// Fit on raw state coordinates.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    ctrb_tol: Option<f64>,
    #[arg(long)]
    mse_gate: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
    /// Also write the fitted model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Trajectory files; repeat for several.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Writes `<prefix>.<csv|jsonl>` and `<prefix>_<metric>.svg`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    no_plots: bool,
    /// Worker threads for the per-pair fits.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    reward_flat_frac: Option<f64>,
    #[arg(long = "trend-t")]
    trend_t: Option<f64>,
    #[command(flatten)]
    analysis: AnalysisFlags,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            msg: format!("{}: {e}", path.display()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE },
            msg: e.to_string(),
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Rollout(a) => cmd_rollout(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn parse_policy(name: &str, env: Env, seed: u64) -> Result<Policy, Failure> {
    let policy = match name.to_ascii_lowercase().as_str() {
        "pd" | "cartpole-pd" => Policy::CartPolePd(CartPoleGains::default()),
        "pump" | "acrobot-energy-pump" => Policy::AcrobotEnergyPump { threshold: 0.0 },
        "descent" | "lander-descent-pd" => Policy::LanderDescentPd(LanderGains::default()),
        "noop" | "lander-noop" => Policy::LanderNoop,
        "hover" | "lander-hover" => Policy::LanderHover(HoverGains::default()),
        "random" => Policy::Random { seed },
        _ => return Err(Failure::usage(format!("unknown policy {name:?}"))),
    };
    policy.check_env(env).map_err(|e| Failure::usage(e.to_string()))?;
    Ok(policy)
}

fn default_max_steps(env: Env) -> u64 {
    match env {
        Env::CartPole => 200,
        Env::Acrobot => 500,
        Env::Lander => 1000,
    }
}

fn cmd_rollout(a: &RolloutArgs) -> Result<(), Failure> {
    let policy = parse_policy(&a.policy, a.env, a.seed)?;
    let max_steps = a.max_steps.unwrap_or_else(|| default_max_steps(a.env));
    let header = ReproHeader::new(
        "rollout",
        json!({
            "env": a.env.name(),
            "policy": policy.name(),
            "trials": a.trials,
            "max_steps": max_steps,
            "seed": a.seed,
            "checkpoint": a.checkpoint,
        }),
        Vec::new(),
    );
    let trajectories: Vec<Trajectory> = (0..a.trials)
        .into_par_iter()
        .map(|t| {
            rollout_tagged(
                a.env,
                &policy,
                trial_seed(a.seed, t),
                max_steps as usize,
                a.checkpoint,
                a.seed,
            )
        })
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let rewards: Vec<f64> = trajectories.iter().map(|t| t.total_reward()).collect();
    let set = TrajectorySet::new(a.env.spec(), trajectories)
        .map_err(|e| Failure::usage(e.to_string()))?
        .with_comment(header.to_json());
    write(&a.out, &serialize_trajectory_file(&set))?;
    println!("trials: {}", set.len());
    println!("median_reward: {}", lower_median(&rewards).expect("at least one trial"));
    Ok(())
}

/// Defaults, then the config file, then flags.
fn resolve(flags: &AnalysisFlags, extra: ConfigOverrides) -> Result<AnalysisConfig, Failure> {
    let mut cfg = AnalysisConfig::default();
    if let Some(path) = &flags.config {
        let overrides = parse_config(&read(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        cfg.apply(&overrides)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    let cli = ConfigOverrides {
        n_delay: flags.n_delay,
        standardize: flags.no_standardize.then_some(false),
        svd_rank: flags.svd_rank.map(|r| RankValue::Text(r.to_string())),
        svd_rank_omega: flags.svd_rank_omega.map(|r| RankValue::Text(r.to_string())),
        ctrb_tol: flags.ctrb_tol,
        mse_gate: flags.mse_gate,
        ..extra
    };
    cfg.apply(&cli).map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn config_json(cfg: &AnalysisConfig) -> serde_json::Value {
    let mut o = cfg.to_overrides();
    o.format = Some(CONFIG_FORMAT.to_string());
    serde_json::to_value(o).expect("config serializes")
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let cfg = resolve(&a.analysis, ConfigOverrides::default())?;
    let bytes = read(&a.input)?;
    let set = parse_trajectory_file(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", a.input.display())))?;

    let snapshots = build_snapshots(&set, &cfg.embed).map_err(PipelineError::from)?;
    let model = fit_dmdc_with(&snapshots, cfg.fit).map_err(PipelineError::from)?;
    let diag = reconstruction_mse(&model, &snapshots, cfg.mse_gate).map_err(PipelineError::from)?;
    let spec = spectrum(&model).map_err(PipelineError::from)?;
    let ctrb = normalized_ctrb_rank(&model, cfg.ctrb_rel_tol).map_err(PipelineError::from)?;

    println!("trajectories: {}", set.len());
    println!("snapshots: {}", diag.m);
    println!("max_eig_norm: {}", spec.max_eig_norm);
    println!("normalized_ctrb_rank: {}", ctrb.normalized_rank);
    println!("r: {}", model.r);
    println!("p: {}", model.p);
    println!("mse_one_step: {}", diag.mse_one_step);
    if !diag.passed_gate {
        eprintln!(
            "warning: one-step mse {} is not below the gate {}; the metrics above are unreliable",
            diag.mse_one_step, cfg.mse_gate
        );
    }
    if let Some(path) = &a.model_out {
        let header = ReproHeader::new(
            "fit",
            config_json(&cfg),
            vec![InputDigest::of(a.input.display().to_string(), &bytes)],
        );
        write(path, &serialize_model(&model, Some(&header.to_json())))?;
    }
    Ok(())
}

fn sibling(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let extra = ConfigOverrides {
        window: a.window,
        reward_flat_frac: a.reward_flat_frac,
        trend_t_threshold: a.trend_t,
        ..ConfigOverrides::default()
    };
    let cfg = resolve(&a.analysis, extra)?;

    let mut env = None;
    let mut digests = Vec::new();
    let mut groups: BTreeMap<(u64, u64), Vec<Trajectory>> = BTreeMap::new();
    for path in &a.inputs {
        let bytes = read(path)?;
        let set = parse_trajectory_file(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        digests.push(InputDigest::of(path.display().to_string(), &bytes));
        let (spec, trajectories, _) = set.into_parts();
        match &env {
            None => env = Some(spec),
            Some(first) if *first != spec => {
                return Err(Failure::usage(format!(
                    "{}: environment {:?} does not match {:?} of the first input",
                    path.display(),
                    spec.name(),
                    first.name()
                )))
            }
            Some(_) => {}
        }
        for t in trajectories {
            groups.entry((t.checkpoint(), t.seed())).or_default().push(t);
        }
    }
    let env = env.expect("at least one input");
    let sets: Vec<TrajectorySet> = groups
        .into_values()
        .map(|ts| TrajectorySet::new(env.clone(), ts).expect("groups are non-empty"))
        .collect();

    let jobs = a
        .jobs
        .map(|j| j as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let records = analyze_all(&sets, &cfg, jobs)?;
    let summary = summarize_run(&records)?;
    let flags = match detect_hidden_progress(&summary, &cfg.hidden_progress) {
        Ok(f) => f,
        Err(PipelineError::InsufficientCheckpoints { need, got }) => {
            eprintln!("note: hidden-progress detection needs {need} checkpoints, got {got}; skipped");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };

    let header = ReproHeader::new("analyze", config_json(&cfg), digests);
    let report_path = sibling(&a.out_prefix, &format!(".{}", a.format.extension()));
    write(&report_path, &emit_report(&header, &records, &summary, &flags, a.format))?;

    let failures: Vec<_> = records.iter().filter(|r| !r.passed_gate).collect();
    for r in &failures {
        eprintln!(
            "warning: checkpoint {} seed {}: one-step mse {} is not below the gate {}; excluded from aggregates",
            r.checkpoint, r.seed, r.mse_one_step, cfg.mse_gate
        );
    }
    println!(
        "pairs: {} over {} checkpoints ({} gate failures)",
        records.len(),
        summary.checkpoints.len(),
        failures.len()
    );
    println!("report: {}", report_path.display());

    if !a.no_plots {
        match render_plots(&summary, &flags, &header.to_json()) {
            Ok(files) => {
                for f in files {
                    let path = sibling(&a.out_prefix, &format!("_{}", f.name));
                    write(&path, f.svg.as_bytes())?;
                    println!("plot: {}", path.display());
                }
            }
            Err(e) => eprintln!("note: {e}; no plots written"),
        }
    }

    if flags.is_empty() {
        println!("hidden progress: none flagged");
    }
    for f in &flags {
        let triggers: Vec<String> = f
            .triggers
            .iter()
            .map(|t| {
                let dir = match t.direction {
                    Direction::Increasing => "increasing",
                    Direction::Decreasing => "decreasing",
                };
                format!("{} {dir} (t = {:.2})", t.metric.name(), t.t_stat)
            })
            .collect();
        println!(
            "hidden progress: checkpoints {}..{}: {}",
            f.start_checkpoint,
            f.end_checkpoint,
            triggers.join(", ")
        );
    }
    Ok(())
}
