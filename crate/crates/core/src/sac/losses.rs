//! Loss functions with hand-derived gradients. All take batches as rows.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{log_std_clamp_grad, reparam_sample, GaussianPolicyOutput, Mlp, SquashConfig};

/// Row-wise concatenation `[obs | action]`, the critic input.
pub fn critic_input(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[obs.view(), actions.view()]).expect("same row count")
}

/// Builds a row matrix from equally sized slices.
pub fn rows_to_array<'a>(
    rows: impl IntoIterator<Item = &'a [f64]>,
    cols: usize,
) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != cols {
            return Err(Error::ShapeMismatch {
                expected: format!("rows of length {cols}"),
                got: r.len().to_string(),
            });
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, cols), data).expect("row data"))
}

/// Mean squared error `mean((Q(x) - y)²)` and its parameter gradient.
pub fn critic_mse(critic: &Mlp, inputs: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, Mlp)> {
    let (q, cache) = critic.forward_cached(inputs)?;
    if q.nrows() != targets.len() || q.ncols() != 1 {
        return Err(Error::ShapeMismatch {
            expected: format!("{} scalar targets", q.nrows()),
            got: targets.len().to_string(),
        });
    }
    let b = targets.len() as f64;
    let mut grad = Array2::zeros((targets.len(), 1));
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let e = q[[i, 0]] - y;
        loss += e * e / b;
        grad[[i, 0]] = 2.0 * e / b;
    }
    let (g, _) = critic.backward(&cache, grad.view())?;
    Ok((loss, g))
}

/// Per-row `[μ..., logσ...]` policy outputs from the actor.
pub fn policy_outputs(actor: &Mlp, obs: ArrayView2<f64>) -> Result<Vec<GaussianPolicyOutput>> {
    let raw = actor.forward(obs)?;
    Ok(raw
        .rows()
        .into_iter()
        .map(|r| GaussianPolicyOutput::from_head(&r.to_vec()))
        .collect())
}

/// Soft Bellman targets `r + λ(1 - done)(min Q̄(s', a') - α logπ(a'|s'))`
/// with `a'` drawn from the given standard-normal noise rows.
#[allow(clippy::too_many_arguments)]
pub fn critic_targets(
    actor: &Mlp,
    target1: &Mlp,
    target2: &Mlp,
    rewards: &[f64],
    next_obs: ArrayView2<f64>,
    dones: &[bool],
    noise: ArrayView2<f64>,
    alpha: f64,
    discount: f64,
    squash: &SquashConfig,
) -> Result<Vec<f64>> {
    let outs = policy_outputs(actor, next_obs)?;
    let dim = squash.dim();
    let mut actions = Array2::zeros((outs.len(), dim));
    let mut logps = Vec::with_capacity(outs.len());
    for (i, out) in outs.iter().enumerate() {
        let s = reparam_sample(out, &noise.row(i).to_vec(), squash);
        actions
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(&s.action));
        logps.push(s.logprob);
    }
    let x = critic_input(next_obs, actions.view());
    let q1 = target1.forward(x.view())?;
    let q2 = target2.forward(x.view())?;
    Ok((0..outs.len())
        .map(|i| {
            if dones[i] {
                rewards[i]
            } else {
                let soft = q1[[i, 0]].min(q2[[i, 0]]) - alpha * logps[i];
                rewards[i] + discount * soft
            }
        })
        .collect())
}

/// Result of the reparameterized actor objective.
#[derive(Clone, Debug)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: Mlp,
    pub mean_logprob: f64,
}

/// `mean(α logπ(a|s) - min(Q₁, Q₂)(s, a))` with `a = tanh(μ + σ z)·scale + bias`
/// and its gradient with respect to the actor parameters.
pub fn actor_loss(
    actor: &Mlp,
    critic1: &Mlp,
    critic2: &Mlp,
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    alpha: f64,
    squash: &SquashConfig,
) -> Result<ActorLoss> {
    let (raw, actor_cache) = actor.forward_cached(obs)?;
    let b = obs.nrows();
    let n = squash.dim();
    if raw.ncols() != 2 * n || noise.dim() != (b, n) {
        return Err(Error::ShapeMismatch {
            expected: format!("actor head of {} and noise {b}x{n}", 2 * n),
            got: format!("head {} and noise {:?}", raw.ncols(), noise.dim()),
        });
    }
    let mut samples = Vec::with_capacity(b);
    let mut outs = Vec::with_capacity(b);
    let mut actions = Array2::zeros((b, n));
    for i in 0..b {
        let out = GaussianPolicyOutput::from_head(&raw.row(i).to_vec());
        let s = reparam_sample(&out, &noise.row(i).to_vec(), squash);
        actions
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(&s.action));
        samples.push(s);
        outs.push(out);
    }
    let x = critic_input(obs, actions.view());
    let (q1, c1) = critic1.forward_cached(x.view())?;
    let (q2, c2) = critic2.forward_cached(x.view())?;
    let mut pick1 = Array2::zeros((b, 1));
    let mut pick2 = Array2::zeros((b, 1));
    let mut loss = 0.0;
    let mut logp_sum = 0.0;
    for i in 0..b {
        let q = if q1[[i, 0]] <= q2[[i, 0]] {
            pick1[[i, 0]] = 1.0;
            q1[[i, 0]]
        } else {
            pick2[[i, 0]] = 1.0;
            q2[[i, 0]]
        };
        loss += (alpha * samples[i].logprob - q) / b as f64;
        logp_sum += samples[i].logprob;
    }
    // ∂ min Q / ∂ input, keeping only the action columns.
    let (_, gx1) = critic1.backward(&c1, pick1.view())?;
    let (_, gx2) = critic2.backward(&c2, pick2.view())?;
    let obs_dim = obs.ncols();
    let dq_da = &gx1.slice(s![.., obs_dim..]) + &gx2.slice(s![.., obs_dim..]);

    let mut grad_head = Array2::zeros((b, 2 * n));
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let s = &samples[i];
        let out = &outs[i];
        let dlp_mu = s.logprob_grad_mu();
        let dlp_ls = s.logprob_grad_log_std(out);
        let da_mu = s.action_grad_mu(squash);
        for d in 0..n {
            let sigma_z = out.log_std[d].exp() * s.noise[d];
            let g_mu = alpha * dlp_mu[d] - dq_da[[i, d]] * da_mu[d];
            let g_ls = alpha * dlp_ls[d] - dq_da[[i, d]] * da_mu[d] * sigma_z;
            grad_head[[i, d]] = g_mu * inv_b;
            grad_head[[i, n + d]] = g_ls * inv_b * log_std_clamp_grad(raw[[i, n + d]]);
        }
    }
    let (grads, _) = actor.backward(&actor_cache, grad_head.view())?;
    Ok(ActorLoss {
        loss,
        grads,
        mean_logprob: logp_sum / b as f64,
    })
}
