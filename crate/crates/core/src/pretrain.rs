//! Expert demonstrations from the steady-state optimizer, behavior cloning of
//! the actor and return regression of the critics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_episode, DynEnv, EnvConfig, EpisodeSampling, EpisodeSpec};
use crate::error::{Error, Result};
use crate::nn::{logprob_and_head_grad, Adam, Mlp, SquashConfig};
use crate::sac::losses::{critic_input, critic_mse, rows_to_array};
use crate::sac::SacAgent;
use crate::turbulence::TurbulenceLibrary;
use crate::util::{config_hash, derive_seed};
use crate::wake::WindFarm;
use crate::yaw_opt::expert_yaw_targets;

/// Named demonstration budgets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetSize {
    None,
    Small,
    Medium,
    Large,
}

impl DatasetSize {
    pub const ALL: [DatasetSize; 4] = [Self::None, Self::Small, Self::Medium, Self::Large];

    pub fn episodes(self) -> usize {
        match self {
            Self::None => 0,
            Self::Small => 10,
            Self::Medium => 50,
            Self::Large => 200,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "None",
            Self::Small => "Small",
            Self::Medium => "Medium",
            Self::Large => "Large",
        }
    }
}

impl fmt::Display for DatasetSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown dataset size {s:?} (None|Small|Medium|Large)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of pairs used for training; the rest validates.
    pub split: f64,
    pub discount: f64,
    /// Keep pretrained critics in normalized-return units. When false the
    /// output layer is rescaled back to raw returns.
    pub normalized_critics: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            actor_lr: 3e-5,
            critic_lr: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            split: 0.8,
            discount: 0.99,
            normalized_critics: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie in (0, 1)");
        }
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertStep {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec: EpisodeSpec,
    pub steps: Vec<ExpertStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n_episodes: usize,
    pub generator_seed: u64,
    pub episode_seeds: Vec<u64>,
    pub expert: ExpertInflow,
    pub env_config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

/// Hash tying a dataset to the environment that produced it.
pub fn env_config_hash(
    env_cfg: &EnvConfig,
    sampling: &EpisodeSampling,
    library: &TurbulenceLibrary,
    farm: &WindFarm,
) -> String {
    config_hash(&(env_cfg, sampling, library.config_hash(), &farm.layout))
}

impl ExpertDataset {
    pub fn len_pairs(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len_pairs() == 0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    /// Loads a dataset, rejecting one produced under another environment.
    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        let ds: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if let Some(h) = expected_hash {
            if ds.meta.env_config_hash != h {
                return Err(Error::HashMismatch {
                    expected: h.into(),
                    found: ds.meta.env_config_hash.clone(),
                });
            }
        }
        Ok(ds)
    }

    /// Flat `(s, a, G)` samples with per-trajectory discounted returns.
    pub fn pairs(&self, discount: f64) -> Vec<Pair> {
        let mut out = Vec::with_capacity(self.len_pairs());
        for t in &self.trajectories {
            if t.steps.is_empty() {
                continue;
            }
            let rewards: Vec<f64> = t.steps.iter().map(|s| s.reward).collect();
            let returns = discounted_returns(&rewards, discount);
            for (s, g) in t.steps.iter().zip(returns) {
                out.push(Pair {
                    obs: s.obs.clone(),
                    action: s.action.clone(),
                    ret: g,
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub ret: f64,
}

/// Rate-limited tracking action toward absolute yaw targets.
pub fn expert_action(yaws: &[f64], targets: &[f64], yaw_step: f64) -> Vec<f64> {
    yaws.iter()
        .zip(targets)
        .map(|(&y, &t)| ((t - y) / yaw_step).clamp(-1.0, 1.0))
        .collect()
}

/// Which inflow the expert optimizes against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertInflow {
    /// The episode's mean free stream; targets are fixed per episode.
    #[default]
    Episode,
    /// The farm-mean free stream at the current step, turbulence included.
    Instantaneous,
}

/// Runs one episode under the expert, re-solving the steady optimum at
/// every agent step for the chosen inflow.
pub fn run_expert_episode(
    env: &mut DynEnv,
    spec: &EpisodeSpec,
    inflow: ExpertInflow,
) -> Result<Trajectory> {
    let yaw_step = env.config().yaw_step();
    let mut obs = env.reset(spec)?;
    let mut steps = Vec::with_capacity(env.steps_for(spec));
    let episode_targets = expert_yaw_targets(env.farm(), &spec.inflow)?;
    loop {
        let targets = match inflow {
            ExpertInflow::Episode => episode_targets.clone(),
            ExpertInflow::Instantaneous => expert_yaw_targets(env.farm(), &env.true_inflow()?)?,
        };
        let action = expert_action(&env.yaws()?, &targets, yaw_step);
        let res = env.step(&action)?;
        steps.push(ExpertStep {
            obs: obs.0,
            action,
            reward: res.reward,
        });
        obs = res.obs;
        if res.done {
            break;
        }
    }
    Ok(Trajectory {
        spec: spec.clone(),
        steps,
    })
}

/// Generates `n_episodes` expert trajectories. Episode specs are drawn
/// sequentially from `seed`; the episodes themselves run in parallel.
pub fn generate_expert_dataset(
    farm: Arc<WindFarm>,
    env_cfg: &EnvConfig,
    library: Arc<TurbulenceLibrary>,
    sampling: &EpisodeSampling,
    n_episodes: usize,
    seed: u64,
    expert: ExpertInflow,
) -> Result<ExpertDataset> {
    let n = farm.len();
    let n_boxes = library.len();
    let hash = env_config_hash(env_cfg, sampling, &library, &farm);
    let episode_seeds: Vec<u64> = (0..n_episodes as u64)
        .map(|i| derive_seed(seed, "expert", i))
        .collect();
    let specs: Vec<EpisodeSpec> = episode_seeds
        .iter()
        .map(|&s| sample_episode(&mut ChaCha8Rng::seed_from_u64(s), n, n_boxes, sampling))
        .collect();
    let trajectories = specs
        .par_iter()
        .map(|spec| {
            let mut env = DynEnv::new(farm.clone(), env_cfg.clone(), library.clone())?;
            run_expert_episode(&mut env, spec, expert)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpertDataset {
        meta: DatasetMeta {
            n_episodes,
            generator_seed: seed,
            episode_seeds,
            expert,
            env_config_hash: hash,
        },
        trajectories,
    })
}

/// Shuffles and splits into `(train, val)` with `val = max(1, round((1 - split)·n))`.
pub fn split_dataset<T: Clone, R: Rng + ?Sized>(
    pairs: &[T],
    split: f64,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pairs.len() < 2 {
        return Err(Error::TooFewValues { needed: 2, got: 1 });
    }
    let n = pairs.len();
    let n_val = (((1.0 - split) * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let val = idx[..n_val].iter().map(|&i| pairs[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| pairs[i].clone()).collect();
    Ok((train, val))
}

/// Patience counter over validation losses. Epoch 0 is the untrained state.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's validation loss; true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

/// Replays a loss schedule (epochs numbered from 1) through the stopping
/// rule; returns `(last epoch run, restored epoch)`.
pub fn early_stopping_outcome(
    val_losses: &[f64],
    patience: usize,
    max_epochs: usize,
) -> (usize, usize) {
    let mut es = EarlyStopping::new(patience);
    let mut last = 0;
    for (i, &l) in val_losses.iter().enumerate().take(max_epochs) {
        last = i + 1;
        es.observe(last, l);
        if es.should_stop() {
            break;
        }
    }
    (last, es.best_epoch)
}

/// Loss curves of one pretraining run. Index 0 of `val_loss` is the
/// initial network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl PretrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }
}

/// Mean negative log-likelihood of the actions and its gradient.
pub fn bc_loss(
    actor: &Mlp,
    obs: &Array2<f64>,
    actions: &Array2<f64>,
    squash: &SquashConfig,
) -> Result<(f64, Mlp)> {
    let (raw, cache) = actor.forward_cached(obs.view())?;
    let b = obs.nrows() as f64;
    let mut grad = Array2::zeros(raw.raw_dim());
    let mut loss = 0.0;
    for i in 0..obs.nrows() {
        let (lp, g) = logprob_and_head_grad(&raw.row(i).to_vec(), &actions.row(i).to_vec(), squash);
        loss -= lp / b;
        for (j, v) in g.into_iter().enumerate() {
            grad[[i, j]] = -v / b;
        }
    }
    let (g, _) = actor.backward(&cache, grad.view())?;
    Ok((loss, g))
}

fn obs_action_arrays(pairs: &[&Pair]) -> Result<(Array2<f64>, Array2<f64>)> {
    let od = pairs[0].obs.len();
    let ad = pairs[0].action.len();
    Ok((
        rows_to_array(pairs.iter().map(|p| p.obs.as_slice()), od)?,
        rows_to_array(pairs.iter().map(|p| p.action.as_slice()), ad)?,
    ))
}

/// Minibatch loop shared by the actor and critic fits. `loss_grad` returns
/// the mean loss and gradient on a batch; the best-validation parameters are
/// restored on exit.
fn fit<R, F>(
    mut net: Mlp,
    train: &[&Pair],
    val: &[&Pair],
    lr: f64,
    cfg: &PretrainConfig,
    rng: &mut R,
    loss_grad: F,
) -> Result<(Mlp, PretrainHistory)>
where
    R: Rng + ?Sized,
    F: Fn(&Mlp, &[&Pair]) -> Result<(f64, Mlp)>,
{
    let eval = |n: &Mlp| -> Result<f64> {
        let mut total = 0.0;
        for chunk in val.chunks(1024) {
            total += loss_grad(n, chunk)?.0 * chunk.len() as f64;
        }
        Ok(total / val.len() as f64)
    };
    let mut history = PretrainHistory {
        val_loss: vec![eval(&net)?],
        ..PretrainHistory::default()
    };
    let mut stopper = EarlyStopping::new(cfg.patience);
    stopper.observe(0, history.val_loss[0]);
    let mut best = net.clone();
    let mut opt = Adam::new(lr);
    let mut order: Vec<&Pair> = train.to_vec();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (l, g) = loss_grad(&net, batch)?;
            opt.step_mlp(&mut net, &g);
            epoch_loss += l * batch.len() as f64;
        }
        history.train_loss.push(epoch_loss / order.len() as f64);
        let v = eval(&net)?;
        history.val_loss.push(v);
        history.epochs_run = epoch;
        if stopper.observe(epoch, v) {
            best = net.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    Ok((best, history))
}

/// Behavior cloning of the actor by maximum likelihood of expert actions.
pub fn bc_pretrain_actor<R: Rng + ?Sized>(
    actor: &Mlp,
    squash: &SquashConfig,
    train: &[Pair],
    val: &[Pair],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<(Mlp, PretrainHistory)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train: Vec<&Pair> = train.iter().collect();
    let val: Vec<&Pair> = val.iter().collect();
    fit(
        actor.clone(),
        &train,
        &val,
        cfg.actor_lr,
        cfg,
        rng,
        |net, batch| {
            let (obs, act) = obs_action_arrays(batch)?;
            bc_loss(net, &obs, &act, squash)
        },
    )
}

/// `G_t = r_t + λ G_{t+1}`, computed backwards.
pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + discount * acc;
        out[t] = acc;
    }
    out
}

/// Affine standardization; population std with a 1e-8 floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    pub std: f64,
}

impl ReturnStats {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewValues {
                needed: 2,
                got: values.len(),
            });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt().max(1e-8),
        })
    }

    pub fn normalize(&self, g: f64) -> f64 {
        (g - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn normalize_returns(values: &[f64]) -> Result<(Vec<f64>, ReturnStats)> {
    let stats = ReturnStats::fit(values)?;
    Ok((values.iter().map(|&g| stats.normalize(g)).collect(), stats))
}

/// Result of critic pretraining.
#[derive(Clone, Debug)]
pub struct CriticPretrain {
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub stats: ReturnStats,
    pub history1: PretrainHistory,
    pub history2: PretrainHistory,
}

/// Regresses both critics `Q(s, a)` onto normalized discounted returns.
/// Statistics come from the training split only.
pub fn pretrain_critic<R: Rng + ?Sized>(
    critic1: &Mlp,
    critic2: &Mlp,
    train: &[Pair],
    val: &[Pair],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<CriticPretrain> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = if train.len() >= 2 {
        ReturnStats::fit(&train.iter().map(|p| p.ret).collect::<Vec<_>>())?
    } else {
        ReturnStats {
            mean: train[0].ret,
            std: 1e-8,
        }
    };
    let norm = |ps: &[Pair]| -> Vec<Pair> {
        ps.iter()
            .map(|p| Pair {
                ret: stats.normalize(p.ret),
                ..p.clone()
            })
            .collect()
    };
    let (train_n, val_n) = (norm(train), norm(val));
    let train_r: Vec<&Pair> = train_n.iter().collect();
    let val_r: Vec<&Pair> = val_n.iter().collect();
    let loss = |net: &Mlp, batch: &[&Pair]| {
        let (obs, act) = obs_action_arrays(batch)?;
        let y: Vec<f64> = batch.iter().map(|p| p.ret).collect();
        critic_mse(net, critic_input(obs.view(), act.view()).view(), &y)
    };
    let (mut c1, history1) = fit(
        critic1.clone(),
        &train_r,
        &val_r,
        cfg.critic_lr,
        cfg,
        rng,
        loss,
    )?;
    let (mut c2, history2) = fit(
        critic2.clone(),
        &train_r,
        &val_r,
        cfg.critic_lr,
        cfg,
        rng,
        loss,
    )?;
    if !cfg.normalized_critics {
        denormalize_output(&mut c1, &stats);
        denormalize_output(&mut c2, &stats);
    }
    Ok(CriticPretrain {
        critic1: c1,
        critic2: c2,
        stats,
        history1,
        history2,
    })
}

/// Loss curves and return statistics of a full agent pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub actor: PretrainHistory,
    pub critic1: PretrainHistory,
    pub critic2: PretrainHistory,
    pub return_stats: ReturnStats,
}

/// Clones the expert into the actor, then fits both critics on the same
/// split, and finally copies the critics into their targets. An empty
/// dataset leaves the agent untouched and returns `None`.
pub fn pretrain_agent<R: Rng + ?Sized>(
    agent: &mut SacAgent,
    dataset: &ExpertDataset,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Option<PretrainSummary>> {
    if dataset.is_empty() {
        return Ok(None);
    }
    let pairs = dataset.pairs(cfg.discount);
    let (train, val) = split_dataset(&pairs, cfg.split, rng)?;
    let (actor, actor_hist) =
        bc_pretrain_actor(&agent.actor, &agent.squash, &train, &val, cfg, rng)?;
    let critics = pretrain_critic(&agent.critic1, &agent.critic2, &train, &val, cfg, rng)?;
    agent.actor = actor;
    agent.critic1 = critics.critic1;
    agent.critic2 = critics.critic2;
    agent.sync_targets();
    Ok(Some(PretrainSummary {
        n_train: train.len(),
        n_val: val.len(),
        actor: actor_hist,
        critic1: critics.history1,
        critic2: critics.history2,
        return_stats: critics.stats,
    }))
}

/// Folds `y ↦ y·std + mean` into the last layer.
pub fn denormalize_output(net: &mut Mlp, stats: &ReturnStats) {
    let last = net.layers.last_mut().expect("non-empty network");
    last.weight.mapv_inplace(|w| w * stats.std);
    last.bias.mapv_inplace(|b| b * stats.std + stats.mean);
}
