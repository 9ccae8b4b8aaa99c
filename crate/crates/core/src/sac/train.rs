use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agent::{AgentSnapshot, SacAgent, UpdateStats};
use super::replay::ReplayBuffer;
use crate::env::{sample_episode, DynEnv, EpisodeSampling, Transition};
use crate::error::{Error, Result};
use crate::util::{read_csv, write_csv};

/// One training-log row. Written at every episode end; loss columns hold
/// the mean over updates made during that episode and stay empty in warmup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub episode_return: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub entropy: Option<f64>,
}

pub const LOG_COLUMNS: [&str; 6] = [
    "step",
    "episode_return",
    "critic_loss",
    "actor_loss",
    "alpha",
    "entropy",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub snapshot_steps: Vec<u64>,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path, hash: &str) -> Result<()> {
        write_csv(path, hash, &self.rows, &LOG_COLUMNS)
    }

    pub fn read_csv(path: &Path) -> Result<Vec<LogRow>> {
        Ok(read_csv(path)?.1)
    }
}

#[derive(Default)]
struct StatsAccumulator {
    sum: [f64; 4],
    count: usize,
}

impl StatsAccumulator {
    fn add(&mut self, s: &UpdateStats) {
        for (acc, v) in self
            .sum
            .iter_mut()
            .zip([s.critic_loss, s.actor_loss, s.alpha, s.entropy])
        {
            *acc += v;
        }
        self.count += 1;
    }

    fn take(&mut self) -> [Option<f64>; 4] {
        let out = if self.count == 0 {
            [None; 4]
        } else {
            self.sum.map(|v| Some(v / self.count as f64))
        };
        *self = Self::default();
        out
    }
}

/// Steps at which snapshots are taken: 0, every multiple of `every`, and
/// the final step.
pub fn snapshot_schedule(total_steps: u64, every: u64) -> Vec<u64> {
    let mut steps: Vec<u64> = (0..=total_steps).step_by(every.max(1) as usize).collect();
    if steps.last() != Some(&total_steps) {
        steps.push(total_steps);
    }
    steps
}

/// Online SAC loop. Episodes are drawn with `sample_episode`; warmup steps
/// act with the current policy and perform no updates. Time-limit ends are
/// stored as non-terminal so bootstrapping continues through them.
pub fn train_online<R: Rng + ?Sized>(
    env: &mut DynEnv,
    agent: &mut SacAgent,
    sampling: &EpisodeSampling,
    total_steps: u64,
    snapshot_every: u64,
    rng: &mut R,
    on_snapshot: &mut dyn FnMut(AgentSnapshot) -> Result<()>,
) -> Result<TrainingLog> {
    if snapshot_every == 0 {
        return Err(Error::InvalidConfig(
            "snapshot_every must be positive".into(),
        ));
    }
    if env.obs_dim() != agent.obs_dim() || env.action_dim() != agent.action_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "agent for obs {} / action {}",
                env.obs_dim(),
                env.action_dim()
            ),
            got: format!("obs {} / action {}", agent.obs_dim(), agent.action_dim()),
        });
    }
    let mut log = TrainingLog::default();
    on_snapshot(agent.snapshot(0))?;
    log.snapshot_steps.push(0);
    if total_steps == 0 {
        return Ok(log);
    }

    let n = env.turbine_count();
    let n_boxes = env.library().boxes.len();
    let mut buffer = ReplayBuffer::new(agent.cfg.replay_capacity);
    let mut stats = StatsAccumulator::default();
    let mut obs = env.reset(&sample_episode(rng, n, n_boxes, sampling))?;
    let mut episode_return = 0.0;

    for step in 1..=total_steps {
        let action = agent.act(obs.as_slice(), false, rng)?;
        let res = env.step(&action)?;
        episode_return += res.reward;
        buffer.push(Transition {
            obs: obs.0,
            action,
            reward: res.reward,
            next_obs: res.obs.0.clone(),
            done: false,
        });

        if step as usize > agent.cfg.warmup_steps && buffer.len() >= agent.cfg.batch_size {
            for _ in 0..agent.cfg.updates_per_step {
                let batch = buffer.sample(agent.cfg.batch_size, rng);
                stats.add(&agent.update(&batch, rng)?);
            }
        }

        if res.done {
            let [critic_loss, actor_loss, alpha, entropy] = stats.take();
            log.rows.push(LogRow {
                step,
                episode_return: Some(episode_return),
                critic_loss,
                actor_loss,
                alpha,
                entropy,
            });
            episode_return = 0.0;
            obs = env.reset(&sample_episode(rng, n, n_boxes, sampling))?;
        } else {
            obs = res.obs;
        }

        if step % snapshot_every == 0 || step == total_steps {
            on_snapshot(agent.snapshot(step))?;
            log.snapshot_steps.push(step);
        }
    }
    Ok(log)
}
