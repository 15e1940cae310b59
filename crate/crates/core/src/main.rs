use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use aoi_lab::harness::{
    age_sweep, create_out, cross_test, evaluate_model, load_file_config, resolve_out,
    run_experiment, run_grid, write_loss_trace, AgeSweepConfig, EstimatorKind, ExperimentConfig,
    FileConfig, GridConfig, ResultRow, CSV_HEADER, DEFAULT_PAIRS, OUT_DIR_ENV,
};
use aoi_lab::laa::{
    gradcheck_stack, load_checkpoint, save_checkpoint, train, CheckpointMeta, TrainConfig,
};
use aoi_lab::sim::{AgeMode, ControlMode, EvalConfig, NetworkSetting, ScenarioConfig, SystemKind};
use aoi_lab::Result;

fn parse_system(s: &str) -> Result<SystemKind> {
    s.parse()
}
fn parse_age(s: &str) -> Result<AgeMode> {
    s.parse()
}
fn parse_controls(s: &str) -> Result<ControlMode> {
    s.parse()
}
fn parse_estimator(s: &str) -> Result<EstimatorKind> {
    s.parse()
}

#[derive(Parser)]
#[command(
    name = "aoi-lab",
    version,
    about = "Remote state estimation over a lossy queue: train the LSTM estimator, \
run the Kalman baselines, and produce CSV reports",
    after_help = format!("Output files default to the directory named by ${OUT_DIR_ENV} \
(falling back to the current directory).")
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the learning estimator and save a checkpoint plus its loss trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a filter baseline on one scenario.
    Eval(EvalArgs),
    /// Compare all applicable estimators across (p, q) operating points.
    Grid(GridArgs),
    /// Sweep the queue-only average age across admission rates.
    AgeSweep(AgeSweepArgs),
    /// Evaluate one checkpoint across the default operating points.
    CrossTest(CrossTestArgs),
    /// Check the network gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Plant: linear or cartpole.
    #[arg(long, value_parser = parse_system)]
    system: Option<SystemKind>,
    /// Admission probability of the queue.
    #[arg(long, conflicts_with = "time_varying")]
    p: Option<f64>,
    /// Service probability of the queue.
    #[arg(long, conflicts_with = "time_varying")]
    q: Option<f64>,
    /// Redraw (p, q) per episode instead of fixing them.
    #[arg(long)]
    time_varying: bool,
    /// Age input: true, noisy, or none.
    #[arg(long, value_parser = parse_age)]
    age: Option<AgeMode>,
    /// Control visibility: known or networked.
    #[arg(long, value_parser = parse_controls)]
    controls: Option<ControlMode>,
}

impl ScenarioArgs {
    /// Build the scenario, taking unspecified fields from `base` (a loaded
    /// checkpoint's scenario) or the stock defaults.
    fn scenario(&self, base: Option<&ScenarioConfig>) -> ScenarioConfig {
        let default = ScenarioConfig {
            system: SystemKind::Linear,
            network: NetworkSetting::Fixed { p: 0.1, q: 0.3 },
            control: ControlMode::Known,
            age: AgeMode::True,
        };
        let base = base.cloned().unwrap_or(default);
        let network = if self.time_varying {
            NetworkSetting::TimeVarying
        } else if self.p.is_some() || self.q.is_some() {
            let (bp, bq) = match base.network {
                NetworkSetting::Fixed { p, q } => (p, q),
                NetworkSetting::TimeVarying => (0.1, 0.3),
            };
            NetworkSetting::Fixed { p: self.p.unwrap_or(bp), q: self.q.unwrap_or(bq) }
        } else {
            base.network
        };
        ScenarioConfig {
            system: self.system.unwrap_or(base.system),
            network,
            control: self.controls.unwrap_or(base.control),
            age: self.age.unwrap_or(base.age),
        }
    }
}

#[derive(Args, Clone)]
struct BudgetArgs {
    /// Episode count (training episodes for `train` and `grid`, evaluation
    /// episodes otherwise).
    #[arg(long)]
    episodes: Option<u64>,
    /// Slots per episode.
    #[arg(long)]
    horizon: Option<u64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with [train] and [eval] sections overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Full-size study budget: 200 episodes of 40000 slots with a 2e6 replay
    /// buffer, evaluated over 200 x 40000 slots.
    #[arg(long)]
    full_scale: bool,
}

impl BudgetArgs {
    /// Training and evaluation configs after applying, in order: the config
    /// file, the full-scale preset, and the explicit size flags (which the
    /// caller applies, since their meaning is per-verb).
    fn base_configs(&self) -> Result<(TrainConfig, EvalConfig)> {
        let file = match &self.config {
            Some(path) => load_file_config(path)?,
            None => FileConfig::default(),
        };
        let mut train_cfg = file.train;
        let mut eval_cfg = file.eval;
        if self.full_scale {
            let fs = TrainConfig::full_scale(train_cfg.seed);
            train_cfg.episodes = fs.episodes;
            train_cfg.horizon = fs.horizon;
            train_cfg.replay_capacity = fs.replay_capacity;
            eval_cfg.episodes = 200;
            eval_cfg.horizon = 40_000;
            eprintln!(
                "warning: full-scale budget selected; expect hours of runtime on one core"
            );
        }
        Ok((train_cfg, eval_cfg))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Where to write the model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write the training loss trace CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Estimator to run: laa, tvkf, or ukf.
    #[arg(long, value_parser = parse_estimator, default_value = "laa")]
    estimator: EstimatorKind,
    /// Checkpoint to evaluate (laa only). Scenario fields not given on the
    /// command line default to the checkpoint's training scenario.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write the result CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Plant: linear or cartpole.
    #[arg(long, value_parser = parse_system, default_value = "linear")]
    system: SystemKind,
    /// Age input: true, noisy, or none.
    #[arg(long, value_parser = parse_age, default_value = "true")]
    age: AgeMode,
    /// Control visibility: known or networked.
    #[arg(long, value_parser = parse_controls, default_value = "known")]
    controls: ControlMode,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Where to write the result CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AgeSweepArgs {
    /// Slots to simulate per operating point.
    #[arg(long)]
    horizon: Option<u64>,
    /// Run a single seed instead of the default five.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the sweep CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossTestArgs {
    /// Checkpoint to evaluate across operating points.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Override the age mode stored in the checkpoint (true or noisy).
    #[arg(long, value_parser = parse_age)]
    age: Option<AgeMode>,
    /// Override the control mode stored in the checkpoint.
    #[arg(long, value_parser = parse_controls)]
    controls: Option<ControlMode>,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Where to write the result CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of randomized model/window configurations to check.
    #[arg(long, default_value_t = 10)]
    configs: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Grid(args) => cmd_grid(args),
        Cmd::AgeSweep(args) => cmd_age_sweep(args),
        Cmd::CrossTest(args) => cmd_cross_test(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let scenario = args.scenario.scenario(None);
    let (mut train_cfg, _) = args.budget.base_configs()?;
    if let Some(e) = args.budget.episodes {
        train_cfg.episodes = e;
    }
    if let Some(h) = args.budget.horizon {
        train_cfg.horizon = h;
    }
    if let Some(s) = args.budget.seed {
        train_cfg.seed = s;
    }
    let start = Instant::now();
    let (model, report) = train(&scenario, &train_cfg)?;
    let ckpt_path = resolve_out(args.checkpoint, "model.laa");
    if let Some(parent) = ckpt_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(&model, &CheckpointMeta::new(scenario, train_cfg), &ckpt_path)?;
    let loss_path = resolve_out(args.out, "loss.csv");
    let mut loss_out = create_out(&loss_path)?;
    write_loss_trace(&report, &mut loss_out)?;
    let last = report.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} updates over {} slots in {:.1}s (final batch loss {last:.4})",
        report.updates,
        report.slots,
        start.elapsed().as_secs_f64()
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("loss trace: {}", loss_path.display());
    Ok(ExitCode::SUCCESS)
}

fn describe(row: &ResultRow) {
    let point = match row.network {
        NetworkSetting::Fixed { p, q } => format!("p={p} q={q}"),
        NetworkSetting::TimeVarying => "time-varying".to_string(),
    };
    println!(
        "{} {} ({point}): rmse_total {:.4} in {:.1}s",
        row.system.name(),
        row.estimator.name(),
        row.rmse_total,
        row.wall_s
    );
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let (train_base, mut eval_cfg) = args.budget.base_configs()?;
    if let Some(e) = args.budget.episodes {
        eval_cfg.episodes = e;
    }
    if let Some(h) = args.budget.horizon {
        eval_cfg.horizon = h;
    }
    if let Some(s) = args.budget.seed {
        eval_cfg.seed = s;
    }
    let row = match (args.estimator, &args.checkpoint) {
        (EstimatorKind::Laa, Some(path)) => {
            let (mut model, meta) = load_checkpoint(path)?;
            let scenario = args.scenario.scenario(Some(&meta.scenario));
            let (row, _) = evaluate_model(&mut model, &meta.train, &scenario, &eval_cfg)?;
            row
        }
        (EstimatorKind::Laa, None) => {
            return Err(aoi_lab::Error::InvalidConfig(
                "evaluating the learning estimator needs --checkpoint (or use `train` first)"
                    .into(),
            ));
        }
        (kind, Some(_)) => {
            return Err(aoi_lab::Error::InvalidConfig(format!(
                "--checkpoint only applies to the learning estimator, not {}",
                kind.name()
            )));
        }
        (kind, None) => {
            let exp = ExperimentConfig {
                scenario: args.scenario.scenario(None),
                estimator: kind,
                train: train_base,
                eval: eval_cfg,
            };
            run_experiment(&exp)?.row
        }
    };
    let out_path = resolve_out(args.out, "eval.csv");
    let mut out = create_out(&out_path)?;
    writeln!(out, "{CSV_HEADER}")?;
    writeln!(out, "{}", row.csv_line())?;
    out.flush()?;
    describe(&row);
    println!("wrote {}", out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(args: GridArgs) -> Result<ExitCode> {
    let mut grid = GridConfig::desk(args.system);
    grid.control = args.controls;
    grid.age = args.age;
    if args.budget.config.is_some() || args.budget.full_scale {
        let (train_cfg, eval_cfg) = args.budget.base_configs()?;
        grid.train = train_cfg;
        grid.eval = eval_cfg;
    }
    if let Some(e) = args.budget.episodes {
        grid.train.episodes = e;
    }
    if let Some(h) = args.budget.horizon {
        grid.train.horizon = h;
    }
    if let Some(s) = args.budget.seed {
        grid.train.seed = s;
    }
    let out_path = resolve_out(args.out, "grid.csv");
    let mut out = create_out(&out_path)?;
    let rows = run_grid(&grid, &mut out, describe)?;
    println!("wrote {} rows to {}", rows.len(), out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_age_sweep(args: AgeSweepArgs) -> Result<ExitCode> {
    let mut cfg = AgeSweepConfig::default();
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    let out_path = resolve_out(args.out, "age_sweep.csv");
    let mut out = create_out(&out_path)?;
    age_sweep(&cfg, &mut out)?;
    let cells = cfg.qs.len() * cfg.fractions.len() * cfg.seeds.len();
    println!("wrote {cells} rows to {}", out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_cross_test(args: CrossTestArgs) -> Result<ExitCode> {
    let (_, mut eval_cfg) = args.budget.base_configs()?;
    if let Some(e) = args.budget.episodes {
        eval_cfg.episodes = e;
    }
    if let Some(h) = args.budget.horizon {
        eval_cfg.horizon = h;
    }
    if let Some(s) = args.budget.seed {
        eval_cfg.seed = s;
    }
    let (mut model, meta) = load_checkpoint(&args.checkpoint)?;
    let base = ScenarioConfig {
        control: args.controls.unwrap_or(meta.scenario.control),
        age: args.age.unwrap_or(meta.scenario.age),
        ..meta.scenario.clone()
    };
    let out_path = resolve_out(args.out, "cross_test.csv");
    let mut out = create_out(&out_path)?;
    let rows = cross_test(&mut model, &base, &meta.train, &DEFAULT_PAIRS, &eval_cfg, &mut out)?;
    for row in &rows {
        describe(row);
    }
    println!("wrote {} rows to {}", rows.len(), out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let report = gradcheck_stack(args.configs, args.seed);
    println!(
        "checked {} parameters across {} configurations: max relative error {:.3e}, {} failures",
        report.checked_params, report.configs, report.max_rel_err, report.failures
    );
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
