//! Baseline controllers, the evaluation grid, aggregate metrics and report
//! files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    circular_mean_deg, greedy_action, DynEnv, EnvConfig, EpisodeSpec, ObsNormalizer, Observation,
};
use crate::error::{Error, Result};
use crate::pretrain::expert_action;
use crate::sac::AgentSnapshot;
use crate::turbulence::TurbulenceLibrary;
use crate::util::{derive_seed, read_csv, write_csv};
use crate::wake::{InflowCondition, WindFarm};
use crate::yaw_opt::{lut_lookup, YawLut};

/// Exponential smoothing `(1 - ρ)·x̂ + ρ·x`.
pub fn polyak_filter(prev: f64, x: f64, rho: f64) -> f64 {
    (1.0 - rho) * prev + rho * x
}

/// Same update on unit vectors, for angles in degrees. Result in [0, 360).
pub fn polyak_filter_deg(prev: f64, x: f64, rho: f64) -> f64 {
    let (p, m) = (prev.to_radians(), x.to_radians());
    let s = (1.0 - rho) * p.sin() + rho * m.sin();
    let c = (1.0 - rho) * p.cos() + rho * m.cos();
    s.atan2(c).to_degrees().rem_euclid(360.0)
}

/// What drives the agent slot during evaluation.
#[derive(Clone, Debug)]
pub enum ControllerKind {
    Greedy,
    Lut {
        lut: Arc<YawLut>,
        rho: f64,
    },
    SacSnapshot {
        snapshot: Arc<AgentSnapshot>,
        deterministic: bool,
    },
}

impl ControllerKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Greedy => Ok(()),
            Self::Lut { lut, rho } => {
                if !(*rho > 0.0 && *rho <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "filter rate {rho} outside (0, 1]"
                    )));
                }
                lut.validate()
            }
            Self::SacSnapshot { snapshot, .. } => snapshot.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Lut { .. } => "lut",
            Self::SacSnapshot { .. } => "sac",
        }
    }
}

/// Filtered inflow estimate of the LUT controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InflowEstimate {
    pub ws: f64,
    pub wd: f64,
}

/// A controller with its per-episode state.
pub struct Controller<'a> {
    kind: &'a ControllerKind,
    farm: WindFarm,
    normalizer: ObsNormalizer,
    yaw_step: f64,
    estimate: Option<InflowEstimate>,
    rng: ChaCha8Rng,
}

impl<'a> Controller<'a> {
    pub fn new(kind: &'a ControllerKind, farm: &WindFarm, env_cfg: &EnvConfig, seed: u64) -> Self {
        Self {
            kind,
            farm: farm.clone(),
            normalizer: env_cfg.normalizer(),
            yaw_step: env_cfg.yaw_step(),
            estimate: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn estimate(&self) -> Option<InflowEstimate> {
        self.estimate
    }

    /// Current LUT yaw targets, after folding `obs` into the filter.
    pub fn lut_targets(&mut self, obs: &Observation, lut: &YawLut, rho: f64) -> Vec<f64> {
        let f = self.normalizer.denormalize(obs);
        let est = match self.estimate {
            None => {
                let wd = circular_mean_deg(f.iter().map(|t| t.wd));
                let up = self.farm.downstream_order(wd)[0];
                InflowEstimate {
                    ws: f[up].ws,
                    wd: f[up].wd,
                }
            }
            Some(prev) => {
                let up = self.farm.downstream_order(prev.wd)[0];
                InflowEstimate {
                    ws: polyak_filter(prev.ws, f[up].ws, rho),
                    wd: polyak_filter_deg(prev.wd, f[up].wd, rho),
                }
            }
        };
        self.estimate = Some(est);
        lut_lookup(lut, est.wd, est.ws)
    }

    pub fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        let kind = self.kind;
        match kind {
            ControllerKind::Greedy => Ok(self
                .normalizer
                .denormalize(obs)
                .iter()
                .map(|t| greedy_action(t.yaw, self.yaw_step))
                .collect()),
            ControllerKind::Lut { lut, rho } => {
                let targets = self.lut_targets(obs, lut, *rho);
                let yaws: Vec<f64> = self
                    .normalizer
                    .denormalize(obs)
                    .iter()
                    .map(|t| t.yaw)
                    .collect();
                Ok(expert_action(&yaws, &targets, self.yaw_step))
            }
            ControllerKind::SacSnapshot {
                snapshot,
                deterministic,
            } => snapshot.act(obs.as_slice(), *deterministic, &mut self.rng),
        }
    }
}

/// One evaluation condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: usize,
    pub wind_direction: f64,
    pub wind_speed: f64,
    pub box_id: usize,
    pub seed: u64,
}

/// Discrete grid of evaluation conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalGrid {
    pub directions: Vec<f64>,
    pub speeds: Vec<f64>,
    /// Held-out boxes `0..n_boxes`.
    pub n_boxes: usize,
    pub turbulence_intensity: f64,
    pub horizon_s: f64,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self::paper()
    }
}

impl EvalGrid {
    /// 7 directions × 4 speeds × 6 boxes.
    pub fn paper() -> Self {
        Self {
            directions: (0..7).map(|i| 255.0 + 5.0 * i as f64).collect(),
            speeds: vec![8.0, 10.0, 12.0, 13.0],
            n_boxes: 6,
            turbulence_intensity: 0.05,
            horizon_s: 3600.0,
        }
    }

    /// Same conditions on half the boxes.
    pub fn desk() -> Self {
        Self {
            n_boxes: 3,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions.is_empty() || self.speeds.is_empty() || self.n_boxes == 0 {
            return Err(Error::InvalidConfig(
                "evaluation grid has an empty axis".into(),
            ));
        }
        if !(self.horizon_s > 0.0) {
            return Err(Error::InvalidConfig(
                "evaluation horizon must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn cases_per_seed(&self) -> usize {
        self.directions.len() * self.speeds.len() * self.n_boxes
    }

    /// Cases ordered by seed, direction, speed, box.
    pub fn cases(&self, seeds: &[u64]) -> Vec<EvalCase> {
        let mut out = Vec::with_capacity(seeds.len() * self.cases_per_seed());
        for &seed in seeds {
            for &wind_direction in &self.directions {
                for &wind_speed in &self.speeds {
                    for box_id in 0..self.n_boxes {
                        out.push(EvalCase {
                            case_id: out.len(),
                            wind_direction,
                            wind_speed,
                            box_id,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    /// Zero initial yaws; the box start depends only on the box and seed so
    /// every controller sees the same realization.
    pub fn episode_spec(&self, case: &EvalCase, n_turbines: usize) -> Result<EpisodeSpec> {
        Ok(EpisodeSpec {
            inflow: InflowCondition::new(
                case.wind_speed,
                case.wind_direction,
                self.turbulence_intensity,
            )?,
            initial_yaws: vec![0.0; n_turbines],
            turbulence_box_id: case.box_id,
            rng_seed: derive_seed(case.seed, "eval-box", case.box_id as u64),
            horizon_s: Some(self.horizon_s),
        })
    }
}

/// Per-step farm power of the agent and the greedy reference (W).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PowerSeries {
    pub agent: Vec<f64>,
    pub baseline: Vec<f64>,
}

/// Outcome of one case. `label` names the controller or pretrain size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: usize,
    pub label: String,
    pub snapshot_step: Option<u64>,
    pub wind_direction: f64,
    pub wind_speed: f64,
    pub box_id: usize,
    pub seed: u64,
    pub gain_pct: f64,
    pub agent_power: f64,
    pub baseline_power: f64,
}

pub const CASE_COLUMNS: [&str; 10] = [
    "case_id",
    "label",
    "snapshot_step",
    "wind_direction",
    "wind_speed",
    "box_id",
    "seed",
    "gain_pct",
    "agent_power",
    "baseline_power",
];

/// Tags attached to every case of a grid run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLabel {
    pub label: String,
    pub snapshot_step: Option<u64>,
}

impl RunLabel {
    pub fn new(label: impl Into<String>, snapshot_step: Option<u64>) -> Self {
        Self {
            label: label.into(),
            snapshot_step,
        }
    }
}

/// Runs `controller` in the agent slot for one case.
pub fn run_case(
    env: &mut DynEnv,
    controller: &ControllerKind,
    grid: &EvalGrid,
    case: &EvalCase,
    label: &RunLabel,
) -> Result<(CaseResult, PowerSeries)> {
    let spec = grid.episode_spec(case, env.turbine_count())?;
    let mut obs = env.reset(&spec)?;
    let seed = derive_seed(case.seed, "eval-policy", case.case_id as u64);
    let mut ctl = Controller::new(controller, env.farm(), env.config(), seed);
    let mut series = PowerSeries::default();
    loop {
        let action = ctl.act(&obs)?;
        let res = env.step(&action)?;
        series.agent.push(res.info.agent_power);
        series.baseline.push(res.info.baseline_power);
        obs = res.obs;
        if res.done {
            break;
        }
    }
    let n = series.agent.len() as f64;
    let agent_power = series.agent.iter().sum::<f64>() / n;
    let baseline_power = series.baseline.iter().sum::<f64>() / n;
    let result = CaseResult {
        case_id: case.case_id,
        label: label.label.clone(),
        snapshot_step: label.snapshot_step,
        wind_direction: case.wind_direction,
        wind_speed: case.wind_speed,
        box_id: case.box_id,
        seed: case.seed,
        gain_pct: (agent_power / baseline_power - 1.0) * 100.0,
        agent_power,
        baseline_power,
    };
    Ok((result, series))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedCase {
    pub case: EvalCase,
    pub label: String,
    pub error: String,
}

/// Collected case results of one or more grid runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub cases: Vec<CaseResult>,
    /// Parallel to `cases` when kept.
    pub series: Vec<PowerSeries>,
    pub failed: Vec<FailedCase>,
}

impl EvalReport {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.cases.extend(other.cases);
        self.series.extend(other.series);
        self.failed.extend(other.failed);
    }
}

/// Everything needed to build one environment per case.
#[derive(Clone, Debug)]
pub struct EvalSetup {
    pub farm: Arc<WindFarm>,
    pub env_cfg: EnvConfig,
    pub library: Arc<TurbulenceLibrary>,
    pub grid: EvalGrid,
}

/// Evaluates every grid case for each `(seed, controller)` pair in
/// parallel. Results come back in case order; failures are listed rather
/// than aborting the run.
pub fn run_grid(
    setup: &EvalSetup,
    controllers: &[(u64, ControllerKind)],
    label: &RunLabel,
) -> Result<EvalReport> {
    setup.grid.validate()?;
    setup.env_cfg.validate()?;
    for (_, c) in controllers {
        c.validate()?;
    }
    let seeds: Vec<u64> = controllers.iter().map(|(s, _)| *s).collect();
    let cases = setup.grid.cases(&seeds);
    let per_seed = setup.grid.cases_per_seed();
    let results: Vec<std::result::Result<(CaseResult, PowerSeries), FailedCase>> = cases
        .par_iter()
        .map(|case| {
            let controller = &controllers[case.case_id / per_seed].1;
            DynEnv::new(
                setup.farm.clone(),
                setup.env_cfg.clone(),
                setup.library.clone(),
            )
            .and_then(|mut env| run_case(&mut env, controller, &setup.grid, case, label))
            .map_err(|e| FailedCase {
                case: *case,
                label: label.label.clone(),
                error: e.to_string(),
            })
        })
        .collect();
    let mut report = EvalReport::default();
    for r in results {
        match r {
            Ok((c, s)) => {
                report.cases.push(c);
                report.series.push(s);
            }
            Err(f) => report.failed.push(f),
        }
    }
    Ok(report)
}

/// Mean, population std and count of one group of cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub value: f64,
    pub mean_gain_pct: f64,
    pub std_gain_pct: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStat {
    pub label: String,
    pub snapshot_step: Option<u64>,
    pub mean_gain_pct: f64,
    pub ratio_of_means_gain_pct: f64,
    pub n: usize,
}

/// Aggregate metrics. `overall_gain_pct` is the unweighted mean of per-case
/// gains; `ratio_of_means_gain_pct` compares summed mean powers instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall_gain_pct: f64,
    pub ratio_of_means_gain_pct: f64,
    pub by_speed: Vec<GroupStat>,
    pub by_direction: Vec<GroupStat>,
    pub by_snapshot: Vec<SnapshotStat>,
    pub n_cases: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn ratio_gain(cases: &[&CaseResult]) -> f64 {
    let a: f64 = cases.iter().map(|c| c.agent_power).sum();
    let b: f64 = cases.iter().map(|c| c.baseline_power).sum();
    (a / b - 1.0) * 100.0
}

fn group_by(cases: &[CaseResult], key: impl Fn(&CaseResult) -> f64) -> Vec<GroupStat> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for c in cases {
        let k = key(c);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(c.gain_pct),
            None => groups.push((k, vec![c.gain_pct])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
        .into_iter()
        .map(|(value, gains)| {
            let (mean, std) = mean_std(&gains);
            GroupStat {
                value,
                mean_gain_pct: mean,
                std_gain_pct: std,
                n: gains.len(),
            }
        })
        .collect()
}

pub fn aggregate_mean_gain(cases: &[CaseResult]) -> Result<Aggregate> {
    if cases.is_empty() {
        return Err(Error::EmptyReport);
    }
    let gains: Vec<f64> = cases.iter().map(|c| c.gain_pct).collect();
    let all: Vec<&CaseResult> = cases.iter().collect();
    let mut snaps: BTreeMap<(String, Option<u64>), Vec<&CaseResult>> = BTreeMap::new();
    for c in cases {
        snaps
            .entry((c.label.clone(), c.snapshot_step))
            .or_default()
            .push(c);
    }
    let by_snapshot = snaps
        .into_iter()
        .map(|((label, snapshot_step), group)| SnapshotStat {
            label,
            snapshot_step,
            mean_gain_pct: group.iter().map(|c| c.gain_pct).sum::<f64>() / group.len() as f64,
            ratio_of_means_gain_pct: ratio_gain(&group),
            n: group.len(),
        })
        .collect();
    Ok(Aggregate {
        overall_gain_pct: mean_std(&gains).0,
        ratio_of_means_gain_pct: ratio_gain(&all),
        by_speed: group_by(cases, |c| c.wind_speed),
        by_direction: group_by(cases, |c| c.wind_direction),
        by_snapshot,
        n_cases: cases.len(),
    })
}

pub type HeatmapRow = (String, Vec<Option<f64>>);

/// Mean gain per (label, snapshot step); rows are labels, columns steps.
/// Cases without a snapshot step are left out.
pub fn heatmap(cases: &[CaseResult]) -> (Vec<u64>, Vec<HeatmapRow>) {
    let steps: Vec<u64> = cases
        .iter()
        .filter_map(|c| c.snapshot_step)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut cells: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for c in cases {
        if let Some(s) = c.snapshot_step {
            let e = cells
                .entry(c.label.clone())
                .or_default()
                .entry(s)
                .or_insert((0.0, 0));
            e.0 += c.gain_pct;
            e.1 += 1;
        }
    }
    let rows = cells
        .into_iter()
        .map(|(label, m)| {
            let row = steps
                .iter()
                .map(|s| m.get(s).map(|(sum, n)| sum / *n as f64))
                .collect();
            (label, row)
        })
        .collect();
    (steps, rows)
}

#[derive(Serialize)]
struct DistRow<'a> {
    label: &'a str,
    snapshot_step: Option<u64>,
    value: f64,
    seed: u64,
    gain_pct: f64,
}

#[derive(Serialize)]
struct SeriesRow {
    case_id: usize,
    step: usize,
    agent_power: f64,
    baseline_power: f64,
}

fn write_distribution(
    path: &Path,
    hash: &str,
    cases: &[CaseResult],
    axis: &str,
    key: fn(&CaseResult) -> f64,
) -> Result<()> {
    let rows: Vec<DistRow> = cases
        .iter()
        .map(|c| DistRow {
            label: &c.label,
            snapshot_step: c.snapshot_step,
            value: key(c),
            seed: c.seed,
            gain_pct: c.gain_pct,
        })
        .collect();
    write_csv(
        path,
        hash,
        &rows,
        &["label", "snapshot_step", axis, "seed", "gain_pct"],
    )
}

/// Writes `cases.csv`, `aggregate.json` (non-empty reports only),
/// `heatmap.csv`, `by_speed.csv`, `by_direction.csv`, `failed.json` when
/// cases failed, and `timeseries.csv` if requested. Returns the paths.
pub fn emit_report(
    report: &EvalReport,
    dir: &Path,
    hash: &str,
    timeseries: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("cases.csv");
    write_csv(&path, hash, &report.cases, &CASE_COLUMNS)?;
    written.push(path);

    if !report.is_empty() {
        let path = dir.join("aggregate.json");
        let agg = aggregate_mean_gain(&report.cases)?;
        let mut value = serde_json::to_value(&agg)?;
        value["config_hash"] = hash.into();
        std::fs::write(&path, serde_json::to_string_pretty(&value)?)?;
        written.push(path);
    }

    let path = dir.join("heatmap.csv");
    write_heatmap(&path, hash, &report.cases)?;
    written.push(path);

    let path = dir.join("by_speed.csv");
    write_distribution(&path, hash, &report.cases, "wind_speed", |c| c.wind_speed)?;
    written.push(path);
    let path = dir.join("by_direction.csv");
    write_distribution(&path, hash, &report.cases, "wind_direction", |c| {
        c.wind_direction
    })?;
    written.push(path);

    if !report.failed.is_empty() {
        let path = dir.join("failed.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report.failed)?)?;
        written.push(path);
    }
    if timeseries && report.series.len() == report.cases.len() {
        let rows: Vec<SeriesRow> = report
            .cases
            .iter()
            .zip(&report.series)
            .flat_map(|(c, s)| {
                s.agent
                    .iter()
                    .zip(&s.baseline)
                    .enumerate()
                    .map(|(k, (&a, &b))| SeriesRow {
                        case_id: c.case_id,
                        step: k + 1,
                        agent_power: a,
                        baseline_power: b,
                    })
            })
            .collect();
        let path = dir.join("timeseries.csv");
        write_csv(
            &path,
            hash,
            &rows,
            &["case_id", "step", "agent_power", "baseline_power"],
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Heatmap matrix: first column the label, then one column per step.
pub fn write_heatmap(path: &Path, hash: &str, cases: &[CaseResult]) -> Result<()> {
    let (steps, rows) = heatmap(cases);
    let mut header = vec!["label".to_string()];
    header.extend(steps.iter().map(u64::to_string));
    let records: Vec<Vec<String>> = rows
        .into_iter()
        .map(|(label, vals)| {
            std::iter::once(label)
                .chain(
                    vals.into_iter()
                        .map(|v| v.map_or_else(String::new, |x| x.to_string())),
                )
                .collect()
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, hash, &records, &header)
}

pub fn read_cases(path: &Path) -> Result<Vec<CaseResult>> {
    Ok(read_csv(path)?.1)
}

/// Steady-model hub-height speed on an `nx × ny` grid spanning the layout
/// plus `margin` (m), written as `x,y,ws` rows.
pub fn write_flow_field(
    path: &Path,
    hash: &str,
    farm: &WindFarm,
    inflow: &InflowCondition,
    yaws: &[f64],
    (nx, ny): (usize, usize),
    margin: f64,
) -> Result<()> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidConfig(
            "flow field needs at least 2x2 points".into(),
        ));
    }
    let pos = &farm.layout.positions;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pos {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (x0, x1, y0, y1) = (x0 - margin, x1 + margin, y0 - margin, y1 + margin);
    let points: Vec<[f64; 2]> = (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                [
                    x0 + (x1 - x0) * i as f64 / (nx - 1) as f64,
                    y0 + (y1 - y0) * j as f64 / (ny - 1) as f64,
                ]
            })
        })
        .collect();
    let ws = farm.flow_field(inflow, yaws, &points)?;
    let rows: Vec<(f64, f64, f64)> = points
        .iter()
        .zip(ws)
        .map(|(p, w)| (p[0], p[1], w))
        .collect();
    write_csv(path, hash, &rows, &["x", "y", "ws"])
}
