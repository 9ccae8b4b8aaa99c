use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Affine map from the tanh range onto the action interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquashConfig {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
    pub clip_eps: f64,
}

impl SquashConfig {
    /// Actions in `[-1, 1]` for every dimension.
    pub fn unit(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            bias: vec![0.0; dim],
            clip_eps: 1e-6,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.len() != self.bias.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bias entries", self.scale.len()),
                got: self.bias.len().to_string(),
            });
        }
        if self.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("squash scale must be positive".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidConfig("atanh clip must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn log_scale_sum(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

/// Pre-squash Gaussian parameters; `log_std` is always within the clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicyOutput {
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianPolicyOutput {
    pub fn new(mu: Vec<f64>, log_std: Vec<f64>) -> Self {
        let log_std = log_std.into_iter().map(clamp_log_std).collect();
        Self { mu, log_std }
    }

    /// Splits a raw network head `[μ..., logσ...]`.
    pub fn from_head(raw: &[f64]) -> Self {
        let n = raw.len() / 2;
        Self::new(raw[..n].to_vec(), raw[n..2 * n].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

pub fn clamp_log_std(v: f64) -> f64 {
    // NaN maps to the lower bound so downstream math stays finite.
    if v.is_nan() {
        LOG_STD_MIN
    } else {
        v.clamp(LOG_STD_MIN, LOG_STD_MAX)
    }
}

/// `d clamp(v) / dv`.
pub fn log_std_clamp_grad(raw: f64) -> f64 {
    if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
        1.0
    } else {
        0.0
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh²(u))` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub fn atanh_invert(a: &[f64], squash: &SquashConfig) -> Vec<f64> {
    let lim = 1.0 - squash.clip_eps;
    a.iter()
        .zip(squash.scale.iter().zip(&squash.bias))
        .map(|(&a, (&s, &b))| ((a - b) / s).clamp(-lim, lim).atanh())
        .collect()
}

fn logprob_pre_squash(out: &GaussianPolicyOutput, u: &[f64], squash: &SquashConfig) -> f64 {
    let mut lp = -squash.log_scale_sum();
    for d in 0..out.dim() {
        let z = (u[d] - out.mu[d]) * (-out.log_std[d]).exp();
        lp += -0.5 * z * z - out.log_std[d] - HALF_LN_2PI - log_one_minus_tanh_sq(u[d]);
    }
    lp
}

/// Log-density of action `a` under the tanh-squashed Gaussian.
pub fn squashed_logprob(out: &GaussianPolicyOutput, a: &[f64], squash: &SquashConfig) -> f64 {
    logprob_pre_squash(out, &atanh_invert(a, squash), squash)
}

/// Reparameterized draw together with everything the gradient paths need.
#[derive(Clone, Debug, PartialEq)]
pub struct ReparamSample {
    pub action: Vec<f64>,
    pub logprob: f64,
    pub pre_tanh: Vec<f64>,
    pub noise: Vec<f64>,
}

impl ReparamSample {
    /// `∂a_d/∂μ_d`; the derivative with respect to logσ_d is this times σ_d z_d.
    pub fn action_grad_mu(&self, squash: &SquashConfig) -> Vec<f64> {
        self.pre_tanh
            .iter()
            .zip(&squash.scale)
            .map(|(&u, &s)| s * (1.0 - u.tanh().powi(2)))
            .collect()
    }

    /// `∂logπ/∂μ_d` with the noise held fixed.
    pub fn logprob_grad_mu(&self) -> Vec<f64> {
        self.pre_tanh.iter().map(|u| 2.0 * u.tanh()).collect()
    }

    /// `∂logπ/∂logσ_d` with the noise held fixed.
    pub fn logprob_grad_log_std(&self, out: &GaussianPolicyOutput) -> Vec<f64> {
        (0..out.dim())
            .map(|d| -1.0 + 2.0 * self.pre_tanh[d].tanh() * out.log_std[d].exp() * self.noise[d])
            .collect()
    }
}

/// Deterministic map from standard-normal noise to a squashed action.
pub fn reparam_sample(
    out: &GaussianPolicyOutput,
    noise: &[f64],
    squash: &SquashConfig,
) -> ReparamSample {
    let pre_tanh: Vec<f64> = (0..out.dim())
        .map(|d| out.mu[d] + out.log_std[d].exp() * noise[d])
        .collect();
    let action = pre_tanh
        .iter()
        .zip(squash.scale.iter().zip(&squash.bias))
        .map(|(&u, (&s, &b))| u.tanh() * s + b)
        .collect();
    let logprob = logprob_pre_squash(out, &pre_tanh, squash);
    ReparamSample {
        action,
        logprob,
        pre_tanh,
        noise: noise.to_vec(),
    }
}

pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn sample_squashed<R: Rng + ?Sized>(
    out: &GaussianPolicyOutput,
    squash: &SquashConfig,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let s = reparam_sample(out, &standard_normal(out.dim(), rng), squash);
    (s.action, s.logprob)
}

pub fn deterministic_action(out: &GaussianPolicyOutput, squash: &SquashConfig) -> Vec<f64> {
    out.mu
        .iter()
        .zip(squash.scale.iter().zip(&squash.bias))
        .map(|(&m, (&s, &b))| m.tanh() * s + b)
        .collect()
}

/// Log-likelihood of a fixed action and its gradient with respect to the raw
/// network head `[μ..., logσ_raw...]` (clamp included).
pub fn logprob_and_head_grad(
    raw_head: &[f64],
    a: &[f64],
    squash: &SquashConfig,
) -> (f64, Vec<f64>) {
    let out = GaussianPolicyOutput::from_head(raw_head);
    let n = out.dim();
    let u = atanh_invert(a, squash);
    let lp = logprob_pre_squash(&out, &u, squash);
    let mut grad = vec![0.0; 2 * n];
    for d in 0..n {
        let inv_var = (-2.0 * out.log_std[d]).exp();
        let diff = u[d] - out.mu[d];
        grad[d] = diff * inv_var;
        grad[n + d] = (diff * diff * inv_var - 1.0) * log_std_clamp_grad(raw_head[n + d]);
    }
    (lp, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_d(mu: f64, log_std: f64) -> GaussianPolicyOutput {
        GaussianPolicyOutput::new(vec![mu], vec![log_std])
    }

    #[test]
    fn atanh_examples() {
        let sq = SquashConfig::unit(1);
        assert_eq!(atanh_invert(&[0.0], &sq), vec![0.0]);
        assert!((atanh_invert(&[0.5], &sq)[0] - 0.549_306_144_334_054_8).abs() < 1e-12);
        assert!(atanh_invert(&[1.0], &sq)[0].is_finite());
        assert!(atanh_invert(&[-1.0], &sq)[0].is_finite());
        let shifted = SquashConfig {
            scale: vec![2.0],
            bias: vec![3.0],
            clip_eps: 1e-6,
        };
        assert_eq!(atanh_invert(&[3.0], &shifted), vec![0.0]);
    }

    #[test]
    fn logprob_at_origin() {
        let lp = squashed_logprob(&one_d(0.0, 0.0), &[0.0], &SquashConfig::unit(1));
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn stable_log_term_matches_direct_form() {
        for u in [-3.0, -0.5, 0.0, 0.2, 1.7, 4.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(400.0).is_finite());
    }

    /// Integrates the density over the action interval by substituting
    /// `a = tanh(u)·scale + bias`, so the Jacobian is evaluated independently.
    fn integrate(out: &GaussianPolicyOutput, sq: &SquashConfig) -> f64 {
        let (lo, hi, n) = (-12.0, 12.0, 240_000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let u = lo + i as f64 * h;
            let a = u.tanh() * sq.scale[0] + sq.bias[0];
            let jac = sq.scale[0] * (1.0 - u.tanh().powi(2));
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            if jac > 0.0 {
                acc += w * squashed_logprob(out, &[a], sq).exp() * jac;
            }
        }
        acc * h
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let out = one_d(rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..0.3));
            let sq = SquashConfig {
                scale: vec![rng.gen_range(0.5..3.0)],
                bias: vec![rng.gen_range(-1.0..1.0)],
                clip_eps: 1e-6,
            };
            let total = integrate(&out, &sq);
            assert!((total - 1.0).abs() < 1e-3, "{total}");
        }
    }

    #[test]
    fn monte_carlo_entropy_matches_quadrature() {
        let out = one_d(0.4, -0.3);
        let sq = SquashConfig::unit(1);
        // Quadrature entropy in pre-squash coordinates.
        let (lo, hi, n) = (-10.0, 10.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut entropy = 0.0;
        for i in 0..n {
            let u: f64 = lo + (i as f64 + 0.5) * h;
            let jac = 1.0 - u.tanh().powi(2);
            let lp = squashed_logprob(&out, &[u.tanh()], &sq);
            entropy -= lp.exp() * jac * lp * h;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| -sample_squashed(&out, &sq, &mut rng).1)
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        assert!(
            (mean - entropy).abs() < 3.0 * se,
            "{mean} vs {entropy} (se {se})"
        );
    }

    #[test]
    fn sample_logprob_consistent_with_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sq = SquashConfig::unit(3);
        let out = GaussianPolicyOutput::new(vec![0.3, -0.8, 0.1], vec![-0.5, 0.0, -1.2]);
        for _ in 0..100 {
            let (a, lp) = sample_squashed(&out, &sq, &mut rng);
            assert!((lp - squashed_logprob(&out, &a, &sq)).abs() < 1e-9);
            assert!(a.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn vanishing_std_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = one_d(0.7, -20.0);
        let sq = SquashConfig::unit(1);
        for _ in 0..10 {
            let (a, _) = sample_squashed(&out, &sq, &mut rng);
            assert!((a[0] - 0.7f64.tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn pre_squash_mean_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = one_d(-0.6, 0.2);
        let sq = SquashConfig::unit(1);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| reparam_sample(&out, &standard_normal(1, &mut rng), &sq).pre_tanh[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean + 0.6).abs() < 3.0 * 0.2f64.exp() / (n as f64).sqrt());
    }

    #[test]
    fn same_seed_same_stream() {
        let out = one_d(0.1, -1.0);
        let sq = SquashConfig::unit(1);
        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            assert_eq!(
                sample_squashed(&out, &sq, &mut r1),
                sample_squashed(&out, &sq, &mut r2)
            );
        }
    }

    #[test]
    fn clamp_keeps_everything_finite() {
        let sq = SquashConfig::unit(1);
        for (mu, ls) in [(1e6, 1e6), (-1e6, -1e6), (0.0, f64::NAN), (3.0, 50.0)] {
            let out = one_d(mu, ls);
            assert!(squashed_logprob(&out, &[0.3], &sq).is_finite());
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let (a, lp) = sample_squashed(&out, &sq, &mut rng);
            assert!(a[0].is_finite() && lp.is_finite());
        }
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let sq = SquashConfig::unit(2);
        let raw = [0.3, -0.2, -0.4, 0.1];
        let a = [0.5, -0.7];
        let (_, g) = logprob_and_head_grad(&raw, &a, &sq);
        let h = 1e-5;
        for i in 0..4 {
            let mut p = raw;
            p[i] += h;
            let up = logprob_and_head_grad(&p, &a, &sq).0;
            p[i] -= 2.0 * h;
            let fd = (up - logprob_and_head_grad(&p, &a, &sq).0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
        // Outside the clamp the log-std gradient vanishes.
        let (_, g) = logprob_and_head_grad(&[0.0, 5.0], &[0.1], &SquashConfig::unit(1));
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn reparam_gradients_match_finite_differences() {
        let sq = SquashConfig {
            scale: vec![1.5, 0.5],
            bias: vec![0.2, 0.0],
            clip_eps: 1e-6,
        };
        let noise = [0.7, -1.1];
        let base = GaussianPolicyOutput::new(vec![0.3, -0.5], vec![-0.4, 0.2]);
        let s = reparam_sample(&base, &noise, &sq);
        let dlp_mu = s.logprob_grad_mu();
        let dlp_ls = s.logprob_grad_log_std(&base);
        let da_mu = s.action_grad_mu(&sq);
        let h = 1e-6;
        for d in 0..2 {
            let mut up = base.clone();
            up.mu[d] += h;
            let mut down = base.clone();
            down.mu[d] -= h;
            let (su, sd) = (
                reparam_sample(&up, &noise, &sq),
                reparam_sample(&down, &noise, &sq),
            );
            assert!(((su.logprob - sd.logprob) / (2.0 * h) - dlp_mu[d]).abs() < 1e-6);
            assert!(((su.action[d] - sd.action[d]) / (2.0 * h) - da_mu[d]).abs() < 1e-6);
            let mut up = base.clone();
            up.log_std[d] += h;
            let mut down = base.clone();
            down.log_std[d] -= h;
            let (su, sd) = (
                reparam_sample(&up, &noise, &sq),
                reparam_sample(&down, &noise, &sq),
            );
            assert!(((su.logprob - sd.logprob) / (2.0 * h) - dlp_ls[d]).abs() < 1e-6);
            let da_ls = da_mu[d] * base.log_std[d].exp() * noise[d];
            assert!(((su.action[d] - sd.action[d]) / (2.0 * h) - da_ls).abs() < 1e-6);
        }
    }
}
