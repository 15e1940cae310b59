//! Experiment harness: builds estimators from a config, scores them on shared
//! simulation traces, and writes CSV reports.
//!
//! Every row carries a fingerprint of the full config that produced it, and
//! the wall-clock column is last so that reports can be compared byte-for-byte
//! after stripping it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{ukf_for, TvkfEstimator};
use crate::laa::{self, train, LaaModel, TrainConfig, TrainReport};
use crate::network::{average_age, QueueConfig};
use crate::rng::{fnv1a, substream};
use crate::sim::{
    evaluate_with, AgeMode, ControlMode, EvalConfig, EvalResult, NetworkSetting, ScenarioConfig,
    SystemKind,
};
use crate::{Error, Result};

/// Environment variable naming the default output directory for reports.
pub const OUT_DIR_ENV: &str = "AOI_LAB_OUT";

/// The six operating points of the default comparison grid, spanning light
/// load up to just below the stability boundary for q = 0.3 and q = 0.5.
pub const DEFAULT_PAIRS: [(f64, f64); 6] =
    [(0.01, 0.3), (0.1, 0.3), (0.297, 0.3), (0.01, 0.5), (0.3, 0.5), (0.499, 0.5)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Laa,
    Tvkf,
    Ukf,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Laa => "laa",
            EstimatorKind::Tvkf => "tvkf",
            EstimatorKind::Ukf => "ukf",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laa" => Ok(EstimatorKind::Laa),
            "tvkf" => Ok(EstimatorKind::Tvkf),
            "ukf" => Ok(EstimatorKind::Ukf),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

/// One complete experiment: a scenario, the estimator to run on it, and the
/// training and evaluation budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorKind,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        if self.estimator == EstimatorKind::Tvkf && self.scenario.system != SystemKind::Linear {
            return Err(Error::InvalidConfig(
                "the time-varying Kalman filter only models the linear plant".into(),
            ));
        }
        if self.estimator != EstimatorKind::Laa && self.scenario.age == AgeMode::None {
            return Err(Error::InvalidConfig(
                "only the learning estimator can run without an age signal".into(),
            ));
        }
        Ok(())
    }

    /// Stable hex fingerprint of the full config; identical configs produce
    /// identical rows.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

pub fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    format!("{:016x}", fnv1a(&bytes))
}

pub const CSV_HEADER: &str = "system,estimator,p,q,network_mode,control_mode,age_mode,seed,\
episodes,horizon,rmse_total,rmse_c1,rmse_c2,rmse_c3,rmse_c4,fingerprint,wall_s";

/// One evaluation outcome. Serialized as a CSV line with wall-clock time in
/// the final column so determinism checks can strip it.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub system: SystemKind,
    pub estimator: EstimatorKind,
    pub network: NetworkSetting,
    pub control: ControlMode,
    pub age: AgeMode,
    pub seed: u64,
    pub episodes: u64,
    pub horizon: u64,
    pub rmse_total: f64,
    pub rmse_per_component: Vec<f64>,
    pub fingerprint: String,
    pub wall_s: f64,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let (p, q) = match self.network {
            NetworkSetting::Fixed { p, q } => (p.to_string(), q.to_string()),
            NetworkSetting::TimeVarying => (String::new(), String::new()),
        };
        let mut comps = [String::new(), String::new(), String::new(), String::new()];
        for (slot, value) in comps.iter_mut().zip(&self.rmse_per_component) {
            *slot = value.to_string();
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.system.name(),
            self.estimator.name(),
            p,
            q,
            self.network.name(),
            self.control.name(),
            self.age.name(),
            self.seed,
            self.episodes,
            self.horizon,
            self.rmse_total,
            comps[0],
            comps[1],
            comps[2],
            comps[3],
            self.fingerprint,
            self.wall_s,
        )
    }
}

fn make_row(cfg: &ExperimentConfig, result: &EvalResult, wall_s: f64) -> ResultRow {
    ResultRow {
        system: cfg.scenario.system,
        estimator: cfg.estimator,
        network: cfg.scenario.network,
        control: cfg.scenario.control,
        age: cfg.scenario.age,
        seed: cfg.eval.seed,
        episodes: cfg.eval.episodes,
        horizon: cfg.eval.horizon,
        rmse_total: result.rmse_total,
        rmse_per_component: result.rmse_per_component.clone(),
        fingerprint: cfg.fingerprint(),
        wall_s,
    }
}

/// Evaluate one estimator kind on a scenario. `model` must be provided when
/// (and only when) the kind is the learning estimator.
pub fn evaluate_kind(
    kind: EstimatorKind,
    model: Option<&mut LaaModel>,
    scenario: &ScenarioConfig,
    eval: &EvalConfig,
) -> Result<EvalResult> {
    match kind {
        EstimatorKind::Laa => {
            let model = model.ok_or_else(|| {
                Error::InvalidConfig("the learning estimator needs a trained model".into())
            })?;
            laa::evaluate(model, scenario, eval)
        }
        EstimatorKind::Tvkf => {
            if scenario.system != SystemKind::Linear {
                return Err(Error::InvalidConfig(
                    "the time-varying Kalman filter only models the linear plant".into(),
                ));
            }
            let mut est = TvkfEstimator::new(scenario.control, scenario.age)?;
            evaluate_with(&mut est, scenario, eval)
        }
        EstimatorKind::Ukf => {
            let mut est = ukf_for(scenario.system, scenario.control, scenario.age)?;
            evaluate_with(&mut est, scenario, eval)
        }
    }
}

/// Evaluate an already-trained model on one scenario, producing the result
/// row alongside the raw evaluation. `train_cfg` is the config the model was
/// trained with (normally from its checkpoint metadata) so the fingerprint
/// reflects how the model was actually produced.
pub fn evaluate_model(
    model: &mut LaaModel,
    train_cfg: &TrainConfig,
    scenario: &ScenarioConfig,
    eval: &EvalConfig,
) -> Result<(ResultRow, EvalResult)> {
    let exp = ExperimentConfig {
        scenario: scenario.clone(),
        estimator: EstimatorKind::Laa,
        train: *train_cfg,
        eval: *eval,
    };
    exp.validate()?;
    let start = Instant::now();
    let result = laa::evaluate(model, scenario, eval)?;
    let row = make_row(&exp, &result, start.elapsed().as_secs_f64());
    Ok((row, result))
}

/// Everything produced by one experiment run.
pub struct RunOutput {
    pub row: ResultRow,
    pub result: EvalResult,
    /// Present only for the learning estimator.
    pub trained: Option<(LaaModel, TrainReport)>,
}

/// Train (if needed) and evaluate the configured estimator. Wall time covers
/// training plus evaluation for the learning estimator and evaluation alone
/// for the filters.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let (result, trained) = match cfg.estimator {
        EstimatorKind::Laa => {
            let (mut model, report) = train(&cfg.scenario, &cfg.train)?;
            let result = laa::evaluate(&mut model, &cfg.scenario, &cfg.eval)?;
            (result, Some((model, report)))
        }
        kind => (evaluate_kind(kind, None, &cfg.scenario, &cfg.eval)?, None),
    };
    let wall_s = start.elapsed().as_secs_f64();
    Ok(RunOutput { row: make_row(cfg, &result, wall_s), result, trained })
}

/// A sweep over (p, q) operating points comparing all applicable estimators
/// on shared traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub pairs: Vec<(f64, f64)>,
    pub system: SystemKind,
    pub control: ControlMode,
    pub age: AgeMode,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl GridConfig {
    /// Grid sized to finish on one core in minutes rather than hours: the
    /// full operating-point set, but a short training window.
    pub fn desk(system: SystemKind) -> Self {
        GridConfig {
            pairs: DEFAULT_PAIRS.to_vec(),
            system,
            control: ControlMode::Known,
            age: AgeMode::True,
            train: TrainConfig { bptt_window: 4, ..TrainConfig::default() },
            eval: EvalConfig::default(),
        }
    }

    pub fn estimators(&self) -> &'static [EstimatorKind] {
        match self.system {
            SystemKind::Linear => &[EstimatorKind::Laa, EstimatorKind::Tvkf, EstimatorKind::Ukf],
            SystemKind::Cartpole => &[EstimatorKind::Laa, EstimatorKind::Ukf],
        }
    }
}

/// Run the grid, writing a header plus one row per (operating point,
/// estimator) and reporting each finished row through `on_row`. All
/// estimators within a cell must consume bit-identical simulation traces; a
/// mismatch panics because it invalidates the comparison.
pub fn run_grid(
    cfg: &GridConfig,
    out: &mut impl Write,
    mut on_row: impl FnMut(&ResultRow),
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    writeln!(out, "{CSV_HEADER}")?;
    for &(p, q) in &cfg.pairs {
        let scenario = ScenarioConfig {
            system: cfg.system,
            network: NetworkSetting::Fixed { p, q },
            control: cfg.control,
            age: cfg.age,
        };
        let mut cell_hash: Option<u64> = None;
        for &kind in cfg.estimators() {
            let exp = ExperimentConfig {
                scenario: scenario.clone(),
                estimator: kind,
                train: cfg.train.clone(),
                eval: cfg.eval,
            };
            let output = run_experiment(&exp)?;
            match cell_hash {
                None => cell_hash = Some(output.result.trace_hash),
                Some(h) => assert_eq!(
                    h,
                    output.result.trace_hash,
                    "estimators at (p={p}, q={q}) saw different traces"
                ),
            }
            writeln!(out, "{}", output.row.csv_line())?;
            on_row(&output.row);
            rows.push(output.row);
        }
    }
    out.flush()?;
    Ok(rows)
}

/// Sweep of the long-run average age over admission rates, for each service
/// rate. The admission rate is expressed as a fraction of q, so every service
/// rate is swept across the same relative load range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgeSweepConfig {
    pub qs: Vec<f64>,
    /// p / q load fractions; must keep p = fq inside (0, 1).
    pub fractions: Vec<f64>,
    pub horizon: u64,
    pub seeds: Vec<u64>,
}

impl Default for AgeSweepConfig {
    fn default() -> Self {
        AgeSweepConfig {
            qs: vec![0.3, 0.5],
            fractions: vec![0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99],
            horizon: 1_000_000,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

pub const AGE_SWEEP_HEADER: &str = "q,p,horizon,seed,mean_age";

/// Simulate the queue alone and report the time-averaged age at each
/// operating point. The mean age is large at both extremes of p (starved
/// updates at low p, congestion at high p) with a minimum in between.
pub fn age_sweep(cfg: &AgeSweepConfig, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{AGE_SWEEP_HEADER}")?;
    let mut cell = 0u64;
    for &q in &cfg.qs {
        for &f in &cfg.fractions {
            let p = f * q;
            let queue = QueueConfig::new(p, q)?;
            for &seed in &cfg.seeds {
                let mut rng = substream(seed, "age-sweep", cell);
                let mean = average_age(&queue, cfg.horizon, &mut rng);
                writeln!(out, "{q},{p},{},{seed},{mean}", cfg.horizon)?;
                cell += 1;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Evaluate an already-trained model across foreign operating points without
/// retraining, to measure how far it generalizes from its training network.
pub fn cross_test(
    model: &mut LaaModel,
    base: &ScenarioConfig,
    train: &TrainConfig,
    pairs: &[(f64, f64)],
    eval: &EvalConfig,
    out: &mut impl Write,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    writeln!(out, "{CSV_HEADER}")?;
    for &(p, q) in pairs {
        let scenario = ScenarioConfig { network: NetworkSetting::Fixed { p, q }, ..base.clone() };
        let (row, _) = evaluate_model(model, train, &scenario, eval)?;
        writeln!(out, "{}", row.csv_line())?;
        rows.push(row);
    }
    out.flush()?;
    Ok(rows)
}

/// Write a training loss trace as `update,loss` rows.
pub fn write_loss_trace(report: &TrainReport, out: &mut impl Write) -> Result<()> {
    writeln!(out, "update,loss")?;
    for (i, loss) in report.loss_trace.iter().enumerate() {
        writeln!(out, "{i},{loss}")?;
    }
    out.flush()?;
    Ok(())
}

/// Optional TOML overrides for the training and evaluation budgets. Absent
/// fields keep their defaults; unknown fields are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Default output directory: `$AOI_LAB_OUT` if set, else the current
/// directory.
pub fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Resolve an output path: an explicit path is used as given, otherwise
/// `name` inside [`out_dir`].
pub fn resolve_out(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| out_dir().join(name))
}

/// Open `path` for writing, creating parent directories as needed.
pub fn create_out(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}
