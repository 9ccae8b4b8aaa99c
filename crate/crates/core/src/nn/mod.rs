//! Small dense-network kernel used by the agent: batched MLPs with manual
//! backprop, Adam, and the tanh-squashed Gaussian policy head.

mod adam;
mod mlp;
mod policy;

pub use adam::Adam;
pub use mlp::{Dense, Mlp, MlpCache, MlpGrads};
pub use policy::{
    atanh_invert, clamp_log_std, deterministic_action, log_one_minus_tanh_sq, log_std_clamp_grad,
    logprob_and_head_grad, reparam_sample, sample_squashed, squashed_logprob, standard_normal,
    GaussianPolicyOutput, ReparamSample, SquashConfig, LOG_STD_MAX, LOG_STD_MIN,
};
