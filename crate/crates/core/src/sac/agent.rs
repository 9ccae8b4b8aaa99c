use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{actor_loss, critic_input, critic_mse, critic_targets, rows_to_array};
use crate::env::Transition;
use crate::error::{Error, Result};
use crate::nn::{
    deterministic_action, sample_squashed, standard_normal, Adam, GaussianPolicyOutput, Mlp,
    SquashConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub discount: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub initial_alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub hidden: Vec<usize>,
    /// Output-layer init scale of the policy network.
    pub actor_output_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            tau: 5e-3,
            batch_size: 256,
            replay_capacity: 1_000_000,
            warmup_steps: 1_000,
            updates_per_step: 1,
            initial_alpha: 0.2,
            auto_alpha: true,
            target_entropy: None,
            hidden: vec![256, 256],
            actor_output_scale: 1e-2,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("replay capacity must hold at least one batch");
        }
        if [self.actor_lr, self.critic_lr, self.alpha_lr]
            .iter()
            .any(|lr| !(*lr > 0.0))
        {
            return bad("learning rates must be positive");
        }
        if !(self.initial_alpha > 0.0) {
            return bad("initial temperature must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }
}

/// Diagnostics from one gradient update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean of the two critic losses.
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// `-mean logπ` over the batch.
    pub entropy: f64,
}

/// Twin-critic soft actor-critic agent.
#[derive(Clone, Debug)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub squash: SquashConfig,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub log_alpha: f64,
    obs_dim: usize,
    action_dim: usize,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    alpha_opt: Adam,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let actor = Mlp::new(
            &layer_sizes(obs_dim, &cfg.hidden, 2 * action_dim),
            cfg.actor_output_scale,
            rng,
        );
        let critic_sizes = layer_sizes(obs_dim + action_dim, &cfg.hidden, 1);
        let critic1 = Mlp::new(&critic_sizes, 1.0, rng);
        let critic2 = Mlp::new(&critic_sizes, 1.0, rng);
        Ok(Self {
            squash: SquashConfig::unit(action_dim),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_alpha: cfg.initial_alpha.ln(),
            obs_dim,
            action_dim,
            actor_opt: Adam::new(cfg.actor_lr),
            critic1_opt: Adam::new(cfg.critic_lr),
            critic2_opt: Adam::new(cfg.critic_lr),
            alpha_opt: Adam::new(cfg.alpha_lr),
            cfg,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn policy(&self, obs: &[f64]) -> Result<GaussianPolicyOutput> {
        Ok(GaussianPolicyOutput::from_head(
            &self.actor.forward_one(obs)?,
        ))
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let out = self.policy(obs)?;
        Ok(if deterministic {
            deterministic_action(&out, &self.squash)
        } else {
            sample_squashed(&out, &self.squash, rng).0
        })
    }

    /// Copies the online critics into the targets.
    pub fn sync_targets(&mut self) {
        self.target1 = self.critic1.clone();
        self.target2 = self.critic2.clone();
    }

    pub fn polyak_update(&mut self, tau: f64) {
        self.target1.polyak_from(&self.critic1, tau);
        self.target2.polyak_from(&self.critic2, tau);
    }

    /// One SAC step: critics, then actor, then temperature, then targets.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
    ) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let b = batch.len();
        let n = self.action_dim;
        let obs = rows_to_array(batch.iter().map(|t| t.obs.as_slice()), self.obs_dim)?;
        let actions = rows_to_array(batch.iter().map(|t| t.action.as_slice()), n)?;
        let next = rows_to_array(batch.iter().map(|t| t.next_obs.as_slice()), self.obs_dim)?;
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let alpha = self.alpha();

        let next_noise =
            Array2::from_shape_vec((b, n), standard_normal(b * n, rng)).expect("noise");
        let y = critic_targets(
            &self.actor,
            &self.target1,
            &self.target2,
            &rewards,
            next.view(),
            &dones,
            next_noise.view(),
            alpha,
            self.cfg.discount,
            &self.squash,
        )?;
        let x = critic_input(obs.view(), actions.view());
        let (l1, g1) = critic_mse(&self.critic1, x.view(), &y)?;
        let (l2, g2) = critic_mse(&self.critic2, x.view(), &y)?;
        self.critic1_opt.step_mlp(&mut self.critic1, &g1);
        self.critic2_opt.step_mlp(&mut self.critic2, &g2);

        let noise = Array2::from_shape_vec((b, n), standard_normal(b * n, rng)).expect("noise");
        let a = actor_loss(
            &self.actor,
            &self.critic1,
            &self.critic2,
            obs.view(),
            noise.view(),
            alpha,
            &self.squash,
        )?;
        self.actor_opt.step_mlp(&mut self.actor, &a.grads);

        if self.cfg.auto_alpha {
            let target = self.cfg.target_entropy_for(n);
            // d/d logα of -logα·(logπ + H̄), logπ held fixed.
            let grad = -(a.mean_logprob + target);
            self.alpha_opt.step_scalar(&mut self.log_alpha, grad);
        }
        self.polyak_update(self.cfg.tau);
        Ok(UpdateStats {
            critic_loss: 0.5 * (l1 + l2),
            actor_loss: a.loss,
            alpha: self.alpha(),
            entropy: -a.mean_logprob,
        })
    }

    pub fn snapshot(&self, step: u64) -> AgentSnapshot {
        AgentSnapshot {
            format: SNAPSHOT_FORMAT.into(),
            step,
            obs_dim: self.obs_dim,
            action_dim: self.action_dim,
            hidden: self.cfg.hidden.clone(),
            squash: self.squash.clone(),
            actor: self.actor.clone(),
            critic1: self.critic1.clone(),
            critic2: self.critic2.clone(),
            target1: self.target1.clone(),
            target2: self.target2.clone(),
            log_alpha: self.log_alpha,
            config_hash: None,
        }
    }

    /// Restores networks from a snapshot; optimizer state starts fresh.
    pub fn from_snapshot(snap: &AgentSnapshot, mut cfg: SacConfig) -> Result<Self> {
        snap.validate()?;
        cfg.hidden = snap.hidden.clone();
        cfg.validate()?;
        Ok(Self {
            squash: snap.squash.clone(),
            actor: snap.actor.clone(),
            critic1: snap.critic1.clone(),
            critic2: snap.critic2.clone(),
            target1: snap.target1.clone(),
            target2: snap.target2.clone(),
            log_alpha: snap.log_alpha,
            obs_dim: snap.obs_dim,
            action_dim: snap.action_dim,
            actor_opt: Adam::new(cfg.actor_lr),
            critic1_opt: Adam::new(cfg.critic_lr),
            critic2_opt: Adam::new(cfg.critic_lr),
            alpha_opt: Adam::new(cfg.alpha_lr),
            cfg,
        })
    }
}

pub const SNAPSHOT_FORMAT: &str = "wakerl-sac-snapshot/1";

/// Serialized agent parameters with an architecture header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSnapshot {
    pub format: String,
    pub step: u64,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub squash: SquashConfig,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub log_alpha: f64,
    /// Hash of the run configuration that produced the snapshot.
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl AgentSnapshot {
    /// Checks every network against the declared architecture.
    pub fn validate(&self) -> Result<()> {
        if self.format != SNAPSHOT_FORMAT {
            return Err(Error::InvalidConfig(format!(
                "unknown snapshot format {:?}",
                self.format
            )));
        }
        self.squash.validate()?;
        if self.squash.dim() != self.action_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("squash of dimension {}", self.action_dim),
                got: self.squash.dim().to_string(),
            });
        }
        let actor = layer_sizes(self.obs_dim, &self.hidden, 2 * self.action_dim);
        let critic = layer_sizes(self.obs_dim + self.action_dim, &self.hidden, 1);
        let nets = [
            ("actor", &self.actor, &actor),
            ("critic1", &self.critic1, &critic),
            ("critic2", &self.critic2, &critic),
            ("target1", &self.target1, &critic),
            ("target2", &self.target2, &critic),
        ];
        for (name, net, sizes) in nets {
            net.validate()?;
            if &net.sizes() != sizes {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} layers {sizes:?}"),
                    got: format!("{:?}", net.sizes()),
                });
            }
        }
        if !self.log_alpha.is_finite() {
            return Err(Error::InvalidConfig("non-finite temperature".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        snap.validate()?;
        Ok(snap)
    }

    /// Deterministic or sampled action of the stored policy.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let out = GaussianPolicyOutput::from_head(&self.actor.forward_one(obs)?);
        Ok(if deterministic {
            deterministic_action(&out, &self.squash)
        } else {
            sample_squashed(&out, &self.squash, rng).0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> SacConfig {
        SacConfig {
            hidden: vec![16, 16],
            batch_size: 8,
            replay_capacity: 100,
            ..SacConfig::default()
        }
    }

    fn transition(rng: &mut ChaCha8Rng, obs_dim: usize, act_dim: usize) -> Transition {
        Transition {
            obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: (0..act_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            reward: rng.gen_range(-1.0..1.0),
            next_obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: false,
        }
    }

    #[test]
    fn deterministic_action_is_repeatable_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = SacAgent::new(6, 2, small_cfg(), &mut rng).unwrap();
        let obs = [0.1, -0.2, 0.3, 0.0, 0.5, -0.9];
        let a = agent.act(&obs, true, &mut rng).unwrap();
        assert_eq!(a, agent.act(&obs, true, &mut rng).unwrap());
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let s = agent.act(&obs, false, &mut r1).unwrap();
        assert_eq!(s, agent.act(&obs, false, &mut r2).unwrap());
        assert!(s.iter().chain(&a).all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn untrained_policy_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = SacAgent::new(24, 4, SacConfig::default(), &mut rng).unwrap();
        let a = agent.act(&[0.3; 24], true, &mut rng).unwrap();
        assert!(a.iter().all(|v| v.abs() < 0.1), "{a:?}");
    }

    #[test]
    fn tau_one_copies_online_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = SacAgent::new(
            3,
            1,
            SacConfig {
                tau: 1.0,
                ..small_cfg()
            },
            &mut rng,
        )
        .unwrap();
        let batch: Vec<_> = (0..8).map(|_| transition(&mut rng, 3, 1)).collect();
        let refs: Vec<_> = batch.iter().collect();
        agent.update(&refs, &mut rng).unwrap();
        assert_eq!(agent.target1, agent.critic1);
        assert_eq!(agent.target2, agent.critic2);
    }

    #[test]
    fn critic_fits_a_repeated_transition_without_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SacConfig {
            discount: 1e-12,
            critic_lr: 1e-3,
            ..small_cfg()
        };
        let mut agent = SacAgent::new(3, 1, cfg, &mut rng).unwrap();
        let t = transition(&mut rng, 3, 1);
        let batch = vec![&t; 8];
        let first = agent.update(&batch, &mut rng).unwrap().critic_loss;
        let mut last = first;
        for _ in 0..500 {
            last = agent.update(&batch, &mut rng).unwrap().critic_loss;
        }
        assert!(last < 1e-4 && last < first, "{first} -> {last}");
        assert!(agent.alpha() > 0.0);
    }

    #[test]
    fn lower_target_entropy_gives_lower_entropy() {
        let run = |target: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let cfg = SacConfig {
                target_entropy: Some(target),
                alpha_lr: 1e-2,
                actor_lr: 1e-3,
                ..small_cfg()
            };
            let mut agent = SacAgent::new(3, 1, cfg, &mut rng).unwrap();
            let data: Vec<_> = (0..32).map(|_| transition(&mut rng, 3, 1)).collect();
            let mut entropy = 0.0;
            for _ in 0..400 {
                let batch: Vec<_> = (0..8)
                    .map(|_| &data[rng.gen_range(0..data.len())])
                    .collect();
                entropy = agent.update(&batch, &mut rng).unwrap().entropy;
            }
            entropy
        };
        let high = run(0.5);
        let low = run(-3.0);
        assert!(low < high, "low target {low} vs high target {high}");
    }

    #[test]
    fn snapshot_round_trip_and_shape_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let agent = SacAgent::new(6, 2, small_cfg(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("0.snap");
        agent.snapshot(0).save(&path).unwrap();
        let back = AgentSnapshot::load(&path).unwrap();
        assert_eq!(back, agent.snapshot(0));
        let restored = SacAgent::from_snapshot(&back, small_cfg()).unwrap();
        assert_eq!(restored.actor, agent.actor);

        let mut broken = agent.snapshot(0);
        broken.obs_dim = 7;
        broken.save(&path).unwrap();
        assert!(matches!(
            AgentSnapshot::load(&path),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
