//! Run configuration: one JSON document with a section per module, laid over
//! a named profile. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use wakerl::env::{EnvConfig, EpisodeSampling};
use wakerl::eval::EvalGrid;
use wakerl::pretrain::{DatasetSize, ExpertInflow, PretrainConfig};
use wakerl::sac::SacConfig;
use wakerl::turbulence::TurbulenceParams;
use wakerl::util::config_hash;
use wakerl::wake::{FarmLayout, TurbineSpec, WakeParams, WindFarm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmConfig {
    /// Turbine definition file; the 10 MW reference turbine when absent.
    pub turbine: Option<PathBuf>,
    pub rows: usize,
    pub cols: usize,
    pub spacing_diameters: f64,
    pub wake: WakeParams,
}

impl Default for FarmConfig {
    fn default() -> Self {
        Self {
            turbine: None,
            rows: 2,
            cols: 2,
            spacing_diameters: 5.0,
            wake: WakeParams::default(),
        }
    }
}

impl FarmConfig {
    pub fn build(&self) -> Result<WindFarm> {
        let turbine = match &self.turbine {
            Some(p) => TurbineSpec::from_json_file(p)
                .with_context(|| format!("reading turbine {}", p.display()))?,
            None => TurbineSpec::reference_10mw(),
        };
        let layout = FarmLayout::grid(self.rows, self.cols, self.spacing_diameters, turbine)?;
        Ok(WindFarm::new(layout, self.wake))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceConfig {
    pub params: TurbulenceParams,
    pub n_train: usize,
    pub n_eval: usize,
}

impl Default for TurbulenceConfig {
    fn default() -> Self {
        Self {
            params: TurbulenceParams::default(),
            n_train: 10,
            n_eval: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub total_steps: u64,
    pub snapshot_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub grid: EvalGrid,
    pub deterministic: bool,
    /// Polyak rate of the LUT controller's inflow filter.
    pub lut_rho: f64,
    pub lut_directions: Vec<f64>,
    pub lut_speeds: Vec<f64>,
    /// Also write per-step power series.
    pub timeseries: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: EvalGrid::paper(),
            deterministic: true,
            lut_rho: 0.05,
            lut_directions: (0..=60).map(|i| 240.0 + i as f64).collect(),
            lut_speeds: (3..=25).map(f64::from).collect(),
            timeseries: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub farm: FarmConfig,
    pub env: EnvConfig,
    pub sampling: EpisodeSampling,
    pub turbulence: TurbulenceConfig,
    pub expert: ExpertInflow,
    pub sac: SacConfig,
    pub pretrain: PretrainConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    /// Dataset size for single-size commands.
    pub size: DatasetSize,
    /// Sizes covered by a sweep.
    pub sizes: Vec<DatasetSize>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let (total_steps, snapshot_every, seeds, grid) = match profile {
            Profile::Desk => (50_000, 12_500, vec![0, 1, 2], EvalGrid::desk()),
            Profile::Paper => (1_000_000, 250_000, vec![0, 1, 2, 3, 4], EvalGrid::paper()),
        };
        Self {
            profile,
            farm: FarmConfig::default(),
            env: EnvConfig::default(),
            sampling: EpisodeSampling::default(),
            turbulence: TurbulenceConfig::default(),
            expert: ExpertInflow::default(),
            sac: SacConfig::default(),
            pretrain: PretrainConfig::default(),
            training: TrainingConfig {
                total_steps,
                snapshot_every,
            },
            eval: EvalConfig {
                grid,
                ..EvalConfig::default()
            },
            size: DatasetSize::Medium,
            sizes: DatasetSize::ALL.to_vec(),
            seeds,
            master_seed: 0,
            out: PathBuf::from("out"),
        }
    }

    /// Profile defaults overlaid with the JSON document `text`.
    pub fn from_json_over(profile: Profile, text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let profile = match user.get("profile") {
            Some(p) => serde_json::from_value(p.clone()).context("bad profile")?,
            None => profile,
        };
        let mut base = serde_json::to_value(Self::profile(profile))?;
        merge(&mut base, user);
        let cfg: Self = serde_json::from_value(base).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                Self::from_json_over(profile, &text)
            }
            None => {
                let cfg = Self::profile(profile);
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must be non-empty");
        }
        if self.sizes.is_empty() {
            bail!("sizes must be non-empty");
        }
        if self.training.snapshot_every == 0 {
            bail!("training.snapshot_every must be positive");
        }
        if self.eval.grid.n_boxes > self.turbulence.n_eval {
            bail!(
                "evaluation grid uses {} boxes but only {} are generated",
                self.eval.grid.n_boxes,
                self.turbulence.n_eval
            );
        }
        if self.turbulence.n_train == 0 {
            bail!("at least one training box is required");
        }
        self.env.validate()?;
        self.sac.validate()?;
        self.pretrain.validate()?;
        self.eval.grid.validate()?;
        Ok(())
    }

    /// Hash of everything that affects results; the output directory is
    /// excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        config_hash(&c)
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
