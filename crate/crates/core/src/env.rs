//! Quasi-dynamic wind-farm environment.
//!
//! Wakes are the steady Gaussian deficits of [`crate::wake`], but each
//! emitting rotor's thrust and yaw misalignment are read from a ring buffer
//! of past states, delayed by the advection time `x / U∞` to the receiving
//! rotor. Wake centers additionally meander laterally, and every rotor sees
//! its own speed and direction perturbation from a turbulence box.
//!
//! Two copies of the farm run in lockstep from identical initial conditions:
//! the agent's, and a shadow baseline that steers every turbine to zero yaw
//! at the same rate limit. The reward is the relative farm power gain of the
//! agent over the shadow.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::turbulence::{TurbulenceBox, TurbulenceLibrary};
use crate::wake::{turbine_power, InflowCondition, WindFarm};

/// Number of per-turbine observation features.
pub const FEATURES_PER_TURBINE: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Simulation step (s).
    pub dt_sim: f64,
    /// Control interval (s); an integer multiple of `dt_sim`.
    pub dt_agent: f64,
    pub flow_throughs: f64,
    /// deg/s
    pub yaw_rate_max: f64,
    /// Averaging window for the observation means, in agent steps.
    pub avg_window: usize,
    pub ws_bounds: (f64, f64),
    pub wd_bounds: (f64, f64),
    /// Observation range and hard actuator limit for yaw (deg).
    pub yaw_bounds: (f64, f64),
    /// Domain margins in rotor diameters.
    pub margin_upstream: f64,
    pub margin_downstream: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt_sim: 5.0,
            dt_agent: 10.0,
            flow_throughs: 20.0,
            yaw_rate_max: 0.5,
            avg_window: 25,
            ws_bounds: (0.0, 30.0),
            wd_bounds: (240.0, 300.0),
            yaw_bounds: (-40.0, 40.0),
            margin_upstream: 2.0,
            margin_downstream: 2.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let ratio = self.dt_agent / self.dt_sim;
        if !(self.dt_sim > 0.0) || ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "dt_agent must be an integer multiple of dt_sim".into(),
            ));
        }
        if !(self.yaw_rate_max > 0.0) {
            return Err(Error::InvalidConfig("yaw_rate_max must be > 0".into()));
        }
        if self.avg_window < 1 {
            return Err(Error::InvalidConfig("avg_window must be >= 1".into()));
        }
        for (lo, hi) in [self.ws_bounds, self.wd_bounds, self.yaw_bounds] {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(
                    "normalization bounds must be increasing".into(),
                ));
            }
        }
        if !(self.flow_throughs > 0.0) {
            return Err(Error::InvalidConfig("flow_throughs must be > 0".into()));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.dt_agent / self.dt_sim).round() as usize
    }

    /// Largest yaw change per agent step (deg).
    pub fn yaw_step(&self) -> f64 {
        self.yaw_rate_max * self.dt_agent
    }

    pub fn normalizer(&self) -> ObsNormalizer {
        ObsNormalizer {
            ws: self.ws_bounds,
            wd: self.wd_bounds,
            yaw: self.yaw_bounds,
        }
    }
}

/// One episode's fixed conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub inflow: InflowCondition,
    pub initial_yaws: Vec<f64>,
    pub turbulence_box_id: usize,
    /// Selects the starting sample within the turbulence box.
    pub rng_seed: u64,
    /// Overrides the flow-through episode length (s).
    #[serde(default)]
    pub horizon_s: Option<f64>,
}

/// Ranges episodes are drawn from during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSampling {
    pub wind_speed: (f64, f64),
    pub wind_direction: (f64, f64),
    pub initial_yaw: (f64, f64),
    pub turbulence_intensity: f64,
}

impl Default for EpisodeSampling {
    fn default() -> Self {
        Self {
            wind_speed: (8.0, 15.0),
            wind_direction: (255.0, 285.0),
            initial_yaw: (-15.0, 15.0),
            turbulence_intensity: 0.05,
        }
    }
}

/// Draw an episode: uniform speed, direction and initial yaws, and a box
/// uniformly from a library of `n_boxes`.
pub fn sample_episode<R: Rng + ?Sized>(
    rng: &mut R,
    n_turbines: usize,
    n_boxes: usize,
    sampling: &EpisodeSampling,
) -> EpisodeSpec {
    let ws = rng.gen_range(sampling.wind_speed.0..=sampling.wind_speed.1);
    let wd = rng.gen_range(sampling.wind_direction.0..=sampling.wind_direction.1);
    let initial_yaws = (0..n_turbines)
        .map(|_| rng.gen_range(sampling.initial_yaw.0..=sampling.initial_yaw.1))
        .collect();
    EpisodeSpec {
        inflow: InflowCondition::new(ws, wd, sampling.turbulence_intensity)
            .expect("sampling ranges produce valid inflow"),
        initial_yaws,
        turbulence_box_id: rng.gen_range(0..n_boxes.max(1)),
        rng_seed: rng.gen(),
        horizon_s: None,
    }
}

/// Raw, denormalized features of one turbine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbineFeatures {
    pub ws: f64,
    pub wd: f64,
    pub yaw: f64,
    pub ws_mean: f64,
    pub wd_mean: f64,
    pub yaw_mean: f64,
}

/// Flattened normalized observation, 6 features per turbine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn turbine_count(&self) -> usize {
        self.0.len() / FEATURES_PER_TURBINE
    }
}

/// Affine maps of each feature onto [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub ws: (f64, f64),
    pub wd: (f64, f64),
    pub yaw: (f64, f64),
}

fn to_unit(x: f64, (lo, hi): (f64, f64)) -> f64 {
    (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
}

fn from_unit(n: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + (n + 1.0) / 2.0 * (hi - lo)
}

impl ObsNormalizer {
    pub fn normalize(&self, features: &[TurbineFeatures]) -> Observation {
        let mut out = Vec::with_capacity(features.len() * FEATURES_PER_TURBINE);
        for f in features {
            out.extend_from_slice(&[
                to_unit(f.ws, self.ws),
                to_unit(f.wd, self.wd),
                to_unit(f.yaw, self.yaw),
                to_unit(f.ws_mean, self.ws),
                to_unit(f.wd_mean, self.wd),
                to_unit(f.yaw_mean, self.yaw),
            ]);
        }
        Observation(out)
    }

    pub fn denormalize(&self, obs: &Observation) -> Vec<TurbineFeatures> {
        obs.0
            .chunks_exact(FEATURES_PER_TURBINE)
            .map(|c| TurbineFeatures {
                ws: from_unit(c[0], self.ws),
                wd: from_unit(c[1], self.wd),
                yaw: from_unit(c[2], self.yaw),
                ws_mean: from_unit(c[3], self.ws),
                wd_mean: from_unit(c[4], self.wd),
                yaw_mean: from_unit(c[5], self.yaw),
            })
            .collect()
    }
}

/// One stored experience tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Rate-limited increment that steers a yaw toward zero.
pub fn greedy_action(yaw: f64, yaw_step: f64) -> f64 {
    (-yaw / yaw_step).clamp(-1.0, 1.0)
}

/// Mean direction (deg) of a set of angles, in [0, 360).
pub fn circular_mean_deg(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = values.into_iter().fold((0.0, 0.0), |(s, c), v| {
        let r = v.to_radians();
        (s + r.sin(), c + r.cos())
    });
    s.atan2(c).to_degrees().rem_euclid(360.0)
}

/// Instantaneous conditions at one rotor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFlow {
    pub ws: f64,
    pub wd: f64,
    pub power: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Emission {
    ct: f64,
    misalignment: f64,
}

/// Wake path between two rotors, fixed for an episode.
#[derive(Clone, Copy, Debug)]
struct WakePath {
    src: usize,
    dst: usize,
    dx: f64,
    dc: f64,
    lag: usize,
}

/// One copy of the farm: yaw actuators plus emission history.
#[derive(Clone, Debug)]
struct FarmSim {
    yaw: Vec<f64>,
    target: Vec<f64>,
    ring: Vec<Vec<Emission>>,
    local: Vec<LocalFlow>,
}

impl FarmSim {
    fn emission(&self, turbine: usize, k: isize) -> Emission {
        let cap = self.ring[turbine].len() as isize;
        self.ring[turbine][k.rem_euclid(cap) as usize]
    }
}

struct Episode {
    spec: EpisodeSpec,
    turbulence: TurbulenceBox,
    paths: Vec<WakePath>,
    box_offset: usize,
    agent: FarmSim,
    baseline: FarmSim,
    /// Simulation step index.
    k: usize,
    steps_taken: usize,
    max_steps: usize,
    window: Vec<VecDeque<(f64, f64, f64)>>,
}

/// Extra per-step diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub action_clipped: bool,
    /// Farm power averaged over the control interval (W).
    pub agent_power: f64,
    pub baseline_power: f64,
    pub time_s: f64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// The environment. Single-threaded; clone the `Arc`s to run many.
pub struct DynEnv {
    farm: Arc<WindFarm>,
    cfg: EnvConfig,
    library: Arc<TurbulenceLibrary>,
    episode: Option<Episode>,
}

impl DynEnv {
    pub fn new(
        farm: Arc<WindFarm>,
        cfg: EnvConfig,
        library: Arc<TurbulenceLibrary>,
    ) -> Result<Self> {
        cfg.validate()?;
        if (library.params.dt_s - cfg.dt_sim).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "turbulence sampled every {} s but dt_sim is {} s",
                library.params.dt_s, cfg.dt_sim
            )));
        }
        if library.boxes.iter().any(|b| b.n_turbines != farm.len()) {
            return Err(Error::InvalidConfig(
                "turbulence library built for another farm size".into(),
            ));
        }
        Ok(Self {
            farm,
            cfg,
            library,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn farm(&self) -> &WindFarm {
        &self.farm
    }

    pub fn library(&self) -> &TurbulenceLibrary {
        &self.library
    }

    pub fn turbine_count(&self) -> usize {
        self.farm.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.farm.len() * FEATURES_PER_TURBINE
    }

    pub fn action_dim(&self) -> usize {
        self.farm.len()
    }

    /// Streamwise domain length: farm extent plus margins (m).
    pub fn domain_length(&self, wind_direction: f64) -> f64 {
        let frame = self.farm.wind_frame(wind_direction);
        let (lo, hi) = frame.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
            (lo.min(p.downstream), hi.max(p.downstream))
        });
        (hi - lo)
            + (self.cfg.margin_upstream + self.cfg.margin_downstream)
                * self.farm.turbine().rotor_diameter
    }

    /// Episode duration: `flow_throughs` passages of the free stream (s).
    pub fn episode_length(&self, inflow: &InflowCondition) -> f64 {
        self.cfg.flow_throughs * self.domain_length(inflow.wind_direction) / inflow.wind_speed
    }

    pub fn steps_for(&self, spec: &EpisodeSpec) -> usize {
        let horizon = spec
            .horizon_s
            .unwrap_or_else(|| self.episode_length(&spec.inflow));
        (horizon / self.cfg.dt_agent - 1e-9).ceil().max(1.0) as usize
    }

    pub fn reset(&mut self, spec: &EpisodeSpec) -> Result<Observation> {
        let n = self.farm.len();
        if spec.initial_yaws.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} initial yaws"),
                got: spec.initial_yaws.len().to_string(),
            });
        }
        let unit = self.library.get(spec.turbulence_box_id)?;
        let turbulence = unit.scaled(
            &spec.inflow,
            self.farm.turbine().rotor_diameter,
            &self.library.params,
        );
        let box_offset = if turbulence.is_empty() {
            0
        } else {
            (spec.rng_seed % turbulence.len() as u64) as usize
        };

        let frame = self.farm.wind_frame(spec.inflow.wind_direction);
        let u = spec.inflow.wind_speed;
        let mut paths = Vec::new();
        for src in 0..n {
            for dst in 0..n {
                let dx = frame[dst].downstream - frame[src].downstream;
                if src == dst || dx <= 0.0 {
                    continue;
                }
                let lag = ((dx / u) / self.cfg.dt_sim - 1e-9).ceil().max(1.0) as usize;
                paths.push(WakePath {
                    src,
                    dst,
                    dx,
                    dc: frame[dst].crosswind - frame[src].crosswind,
                    lag,
                });
            }
        }
        let cap = paths.iter().map(|p| p.lag).max().unwrap_or(0) + 1;

        let clamp_yaw = |g: f64| g.clamp(self.cfg.yaw_bounds.0, self.cfg.yaw_bounds.1);
        let yaws: Vec<f64> = spec.initial_yaws.iter().map(|&g| clamp_yaw(g)).collect();
        let misalignment: Vec<f64> = (0..n)
            .map(|i| yaws[i] - turbulence.direction_at(i, box_offset))
            .collect();
        let (_, ct) = self
            .farm
            .effective_wind_speeds_and_ct(&spec.inflow, &misalignment)?;
        let ring: Vec<Vec<Emission>> = (0..n)
            .map(|i| {
                vec![
                    Emission {
                        ct: ct[i],
                        misalignment: misalignment[i],
                    };
                    cap
                ]
            })
            .collect();
        let sim = FarmSim {
            yaw: yaws.clone(),
            target: yaws,
            ring,
            local: vec![
                LocalFlow {
                    ws: 0.0,
                    wd: 0.0,
                    power: 0.0,
                };
                n
            ],
        };
        let mut episode = Episode {
            max_steps: self.steps_for(spec),
            spec: spec.clone(),
            turbulence,
            paths,
            box_offset,
            agent: sim.clone(),
            baseline: sim,
            k: 0,
            steps_taken: 0,
            window: Vec::new(),
        };
        self.advance_flow(&mut episode);
        episode.window = episode
            .agent
            .local
            .iter()
            .zip(&episode.agent.yaw)
            .map(|(l, &g)| std::iter::repeat_n((l.ws, l.wd, g), self.cfg.avg_window).collect())
            .collect();
        let obs = self.observe(&episode);
        self.episode = Some(episode);
        Ok(obs)
    }

    /// Recompute local flow of both copies at the current step and record
    /// the new emissions.
    fn advance_flow(&self, ep: &mut Episode) {
        let kb = ep.k + ep.box_offset;
        let inflow = ep.spec.inflow;
        for sim in [&mut ep.agent, &mut ep.baseline] {
            let n = sim.yaw.len();
            let mut sum_sq = vec![0.0; n];
            for p in &ep.paths {
                let e = sim.emission(p.src, ep.k as isize - p.lag as isize);
                let meander = ep.turbulence.meander_at(p.src, p.dst, kb);
                let d = self.farm.source_deficit(
                    p.dx,
                    p.dc - meander,
                    e.ct,
                    e.misalignment,
                    inflow.turbulence_intensity,
                );
                sum_sq[p.dst] += d.value * d.value;
            }
            for i in 0..n {
                let dir = ep.turbulence.direction_at(i, kb);
                let ws = ((inflow.wind_speed + ep.turbulence.speed_at(i, kb))
                    * (1.0 - sum_sq[i].sqrt()))
                .max(0.0);
                let misalignment = sim.yaw[i] - dir;
                sim.local[i] = LocalFlow {
                    ws,
                    wd: inflow.wind_direction + dir,
                    power: turbine_power(ws, misalignment, self.farm.turbine()),
                };
                let cap = sim.ring[i].len();
                sim.ring[i][ep.k % cap] = Emission {
                    ct: self.farm.turbine().ct(ws),
                    misalignment,
                };
            }
        }
    }

    fn observe(&self, ep: &Episode) -> Observation {
        let w = self.cfg.avg_window as f64;
        let features: Vec<TurbineFeatures> = ep
            .window
            .iter()
            .zip(&ep.agent.local)
            .zip(&ep.agent.yaw)
            .map(|((hist, l), &g)| TurbineFeatures {
                ws: l.ws,
                wd: l.wd,
                yaw: g,
                ws_mean: hist.iter().map(|h| h.0).sum::<f64>() / w,
                wd_mean: circular_mean_deg(hist.iter().map(|h| h.1)),
                yaw_mean: hist.iter().map(|h| h.2).sum::<f64>() / w,
            })
            .collect();
        self.cfg.normalizer().normalize(&features)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let mut ep = self.episode.take().ok_or(Error::NotReset)?;
        let result = self.step_episode(&mut ep, action);
        self.episode = Some(ep);
        result
    }

    fn step_episode(&self, ep: &mut Episode, action: &[f64]) -> Result<StepResult> {
        if ep.steps_taken >= ep.max_steps {
            return Err(Error::StepAfterDone);
        }
        let n = self.farm.len();
        if action.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} actions"),
                got: action.len().to_string(),
            });
        }
        let step = self.cfg.yaw_step();
        let (lo, hi) = self.cfg.yaw_bounds;
        let mut clipped = false;
        for i in 0..n {
            let a = if action[i].is_nan() { 0.0 } else { action[i] };
            let a_c = a.clamp(-1.0, 1.0);
            clipped |= a_c != action[i];
            ep.agent.target[i] = (ep.agent.yaw[i] + a_c * step).clamp(lo, hi);
            let g = ep.baseline.yaw[i];
            ep.baseline.target[i] = (g + greedy_action(g, step) * step).clamp(lo, hi);
        }

        let substeps = self.cfg.substeps();
        let max_move = self.cfg.yaw_rate_max * self.cfg.dt_sim;
        let (mut p_agent, mut p_base) = (0.0, 0.0);
        for _ in 0..substeps {
            ep.k += 1;
            for sim in [&mut ep.agent, &mut ep.baseline] {
                for i in 0..n {
                    let diff = sim.target[i] - sim.yaw[i];
                    sim.yaw[i] = if diff.abs() <= max_move {
                        sim.target[i]
                    } else {
                        sim.yaw[i] + max_move.copysign(diff)
                    };
                }
            }
            self.advance_flow(ep);
            p_agent += ep.agent.local.iter().map(|l| l.power).sum::<f64>();
            p_base += ep.baseline.local.iter().map(|l| l.power).sum::<f64>();
        }
        p_agent /= substeps as f64;
        p_base /= substeps as f64;
        let reward = if p_base > 0.0 {
            p_agent / p_base - 1.0
        } else {
            0.0
        };

        for (hist, (l, &g)) in ep
            .window
            .iter_mut()
            .zip(ep.agent.local.iter().zip(&ep.agent.yaw))
        {
            hist.pop_front();
            hist.push_back((l.ws, l.wd, g));
        }
        ep.steps_taken += 1;
        let done = ep.steps_taken >= ep.max_steps;
        Ok(StepResult {
            obs: self.observe(ep),
            reward,
            done,
            info: StepInfo {
                action_clipped: clipped,
                agent_power: p_agent,
                baseline_power: p_base,
                time_s: ep.steps_taken as f64 * self.cfg.dt_agent,
                step: ep.steps_taken,
            },
        })
    }

    fn episode(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or(Error::NotReset)
    }

    /// Farm-mean free-stream inflow at the current simulation step: the
    /// episode inflow plus the rotor-averaged speed and direction perturbations.
    pub fn true_inflow(&self) -> Result<InflowCondition> {
        let ep = self.episode()?;
        let kb = ep.k + ep.box_offset;
        let n = self.farm.len();
        let base = ep.spec.inflow;
        let du = (0..n).map(|i| ep.turbulence.speed_at(i, kb)).sum::<f64>() / n as f64;
        let wd = circular_mean_deg(
            (0..n).map(|i| base.wind_direction + ep.turbulence.direction_at(i, kb)),
        );
        InflowCondition::new(
            (base.wind_speed + du).max(1e-3),
            wd,
            base.turbulence_intensity,
        )
    }

    /// Local wind and power at every agent-farm rotor.
    pub fn instantaneous_farm_state(&self) -> Result<Vec<LocalFlow>> {
        Ok(self.episode()?.agent.local.clone())
    }

    /// Same for the shadow baseline.
    pub fn baseline_farm_state(&self) -> Result<Vec<LocalFlow>> {
        Ok(self.episode()?.baseline.local.clone())
    }

    pub fn yaws(&self) -> Result<Vec<f64>> {
        Ok(self.episode()?.agent.yaw.clone())
    }

    pub fn baseline_yaws(&self) -> Result<Vec<f64>> {
        Ok(self.episode()?.baseline.yaw.clone())
    }

    pub fn episode_spec(&self) -> Result<&EpisodeSpec> {
        Ok(&self.episode()?.spec)
    }

    pub fn max_steps(&self) -> Result<usize> {
        Ok(self.episode()?.max_steps)
    }

    pub fn is_done(&self) -> bool {
        self.episode
            .as_ref()
            .is_none_or(|e| e.steps_taken >= e.max_steps)
    }

    pub fn time_s(&self) -> Result<f64> {
        Ok(self.episode()?.k as f64 * self.cfg.dt_sim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbulence::{BoxRole, TurbulenceParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn library(count: usize) -> Arc<TurbulenceLibrary> {
        Arc::new(TurbulenceLibrary::generate(
            BoxRole::Train,
            count,
            7,
            4,
            TurbulenceParams::default(),
        ))
    }

    fn env() -> DynEnv {
        DynEnv::new(
            Arc::new(WindFarm::default_2x2()),
            EnvConfig::default(),
            library(10),
        )
        .unwrap()
    }

    fn spec(ws: f64, wd: f64, ti: f64, yaws: Vec<f64>) -> EpisodeSpec {
        EpisodeSpec {
            inflow: InflowCondition::new(ws, wd, ti).unwrap(),
            initial_yaws: yaws,
            turbulence_box_id: 0,
            rng_seed: 0,
            horizon_s: None,
        }
    }

    #[test]
    fn normalization_examples() {
        let n = EnvConfig::default().normalizer();
        let f = TurbineFeatures {
            ws: 15.0,
            wd: 240.0,
            yaw: 12.34,
            ws_mean: 30.0,
            wd_mean: 300.0,
            yaw_mean: -40.0,
        };
        let obs = n.normalize(&[f]);
        assert_eq!(obs.0[0], 0.0);
        assert_eq!(obs.0[1], -1.0);
        assert_eq!(&obs.0[3..], &[1.0, 1.0, -1.0]);
        let back = n.denormalize(&obs)[0];
        assert!((back.yaw - 12.34).abs() < 1e-12);
        let clipped = n.normalize(&[TurbineFeatures { ws: 45.0, ..f }]);
        assert_eq!(clipped.0[0], 1.0);
    }

    #[test]
    fn episode_length_formula() {
        let e = env();
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        assert_relative_eq!(e.domain_length(270.0), 9.0 * 178.3, epsilon = 1e-9);
        assert_relative_eq!(e.episode_length(&inflow), 20.0 * 160.47, epsilon = 1e-6);
        assert_eq!(e.steps_for(&spec(10.0, 270.0, 0.05, vec![0.0; 4])), 321);
    }

    #[test]
    fn reset_observation_is_normalized_and_round_trips_yaw() {
        let mut e = env();
        let yaws = vec![-15.0, 3.5, 12.34, 0.0];
        let obs = e.reset(&spec(11.0, 262.0, 0.05, yaws.clone())).unwrap();
        assert_eq!(obs.len(), 24);
        assert!(obs.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        let feats = e.config().normalizer().denormalize(&obs);
        for (f, g) in feats.iter().zip(&yaws) {
            assert!((f.yaw - g).abs() < 1e-12);
            assert!((f.yaw_mean - g).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_box_is_rejected() {
        let mut e = env();
        let mut s = spec(10.0, 270.0, 0.05, vec![0.0; 4]);
        s.turbulence_box_id = 10;
        assert!(matches!(e.reset(&s), Err(Error::UnknownTurbulenceBox(10))));
    }

    #[test]
    fn full_action_moves_yaw_by_five_degrees() {
        let mut e = env();
        e.reset(&spec(10.0, 270.0, 0.05, vec![0.0; 4])).unwrap();
        e.step(&[1.0, -1.0, 0.5, 0.0]).unwrap();
        assert_eq!(e.yaws().unwrap(), vec![5.0, -5.0, 2.5, 0.0]);
        let r = e.step(&[3.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(r.info.action_clipped);
        assert_eq!(e.yaws().unwrap()[0], 10.0);
    }

    #[test]
    fn yaw_is_hard_limited() {
        let mut e = env();
        e.reset(&spec(10.0, 270.0, 0.05, vec![38.0, 0.0, 0.0, 0.0]))
            .unwrap();
        e.step(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.yaws().unwrap()[0], 40.0);
    }

    #[test]
    fn greedy_agent_earns_zero_reward() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_episode(&mut rng, 4, 10, &EpisodeSampling::default());
        let mut obs = e.reset(&s).unwrap();
        let step = e.config().yaw_step();
        loop {
            let a: Vec<f64> = e
                .config()
                .normalizer()
                .denormalize(&obs)
                .iter()
                .map(|f| greedy_action(f.yaw, step))
                .collect();
            let r = e.step(&a).unwrap();
            assert!(r.reward.abs() < 1e-9);
            obs = r.obs;
            if r.done {
                break;
            }
        }
        assert!(matches!(e.step(&[0.0; 4]), Err(Error::StepAfterDone)));
    }

    #[test]
    fn reward_is_relative_gain() {
        let mut e = env();
        e.reset(&spec(10.0, 270.0, 0.05, vec![0.0; 4])).unwrap();
        let r = e.step(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(
            r.reward,
            r.info.agent_power / r.info.baseline_power - 1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn laminar_steady_state_matches_static_model() {
        let mut e = env();
        let yaws = vec![20.0, -10.0, 5.0, 0.0];
        let s = spec(9.0, 268.0, 0.0, yaws.clone());
        e.reset(&s).unwrap();
        for _ in 0..40 {
            e.step(&[0.0; 4]).unwrap();
        }
        let steady = e.farm().effective_wind_speeds(&s.inflow, &yaws).unwrap();
        for (l, u) in e.instantaneous_farm_state().unwrap().iter().zip(&steady) {
            assert!((l.ws - u).abs() < 1e-6);
        }
    }

    #[test]
    fn yaw_change_reaches_downstream_after_advection_delay() {
        let mut e = env();
        let s = spec(10.0, 270.0, 0.0, vec![0.0; 4]);
        e.reset(&s).unwrap();
        let before = e.instantaneous_farm_state().unwrap()[2].ws;
        // Upstream turbine 0 yaws during the first agent step; x/U = 89.15 s.
        e.step(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let t0 = 5.0; // first sub-step already applies half the move
        let lag = 5.0 * 178.3 / 10.0;
        let mut t = 10.0;
        let mut changed_at = None;
        while t < 200.0 {
            let ws = e.instantaneous_farm_state().unwrap()[2].ws;
            if changed_at.is_none() && (ws - before).abs() > 1e-12 {
                changed_at = Some(t);
            }
            e.step(&[0.0; 4]).unwrap();
            t += 10.0;
        }
        let changed_at = changed_at.expect("downstream turbine responds");
        assert!(changed_at >= t0 + lag, "changed at {changed_at}");
        assert!(changed_at < t0 + lag + 20.0);
    }

    #[test]
    fn unwaked_turbine_direction_is_free_stream_plus_perturbation() {
        let mut e = env();
        let s = spec(10.0, 270.0, 0.05, vec![0.0; 4]);
        e.reset(&s).unwrap();
        e.step(&[0.0; 4]).unwrap();
        let unit = e.library().get(0).unwrap();
        let scaled = unit.scaled(&s.inflow, 178.3, &e.library().params);
        let state = e.instantaneous_farm_state().unwrap();
        assert_eq!(state[0].wd, 270.0 + scaled.direction_at(0, 2));
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let run = || {
            let mut e = env();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let s = sample_episode(&mut rng, 4, 10, &EpisodeSampling::default());
            let mut out = vec![e.reset(&s).unwrap().0];
            for k in 0..50 {
                let a = [((k as f64) * 0.3).sin(), 0.2, -0.7, 1.0];
                let r = e.step(&a).unwrap();
                out.push(r.obs.0);
                out.push(vec![r.reward]);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_count_independent_of_actions() {
        let mut e = env();
        let s = spec(14.0, 281.0, 0.05, vec![1.0; 4]);
        let expected = e.steps_for(&s);
        for a in [0.0, 1.0, -1.0] {
            e.reset(&s).unwrap();
            let mut n = 0;
            while !e.step(&[a; 4]).unwrap().done {
                n += 1;
            }
            assert_eq!(n + 1, expected);
        }
    }

    #[test]
    fn sampling_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampling = EpisodeSampling::default();
        let specs: Vec<EpisodeSpec> = (0..10_000)
            .map(|_| sample_episode(&mut rng, 4, 10, &sampling))
            .collect();
        let ws: Vec<f64> = specs.iter().map(|s| s.inflow.wind_speed).collect();
        assert!(ws.iter().all(|u| (8.0..=15.0).contains(u)));
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        assert!((mean - 11.5).abs() < 0.1);
        for s in &specs {
            assert_eq!(s.inflow.turbulence_intensity, 0.05);
            assert!(s.turbulence_box_id < 10);
            assert!((255.0..=285.0).contains(&s.inflow.wind_direction));
            assert!(s.initial_yaws.iter().all(|g| (-15.0..=15.0).contains(g)));
        }
        assert!((0..10).all(|b| specs.iter().any(|s| s.turbulence_box_id == b)));
    }

    #[test]
    fn circular_mean_handles_wrap() {
        assert!(
            (circular_mean_deg([350.0, 10.0]) - 0.0).abs() < 1e-9
                || (circular_mean_deg([350.0, 10.0]) - 360.0).abs() < 1e-9
        );
        assert!((circular_mean_deg([260.0, 280.0]) - 270.0).abs() < 1e-9);
    }
}
