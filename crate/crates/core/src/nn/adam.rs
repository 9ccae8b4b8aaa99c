use serde::{Deserialize, Serialize};

use super::mlp::Mlp;

/// Adam optimizer with bias correction. Moment buffers are allocated lazily
/// on the first step to match the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One descent step over matching parameter and gradient slices.
    pub fn step_slices(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(
            self.m.len(),
            grads.len(),
            "optimizer used with a different model"
        );
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn step_mlp(&mut self, params: &mut Mlp, grads: &Mlp) {
        self.step_slices(params.tensors_mut(), grads.tensors());
    }

    /// Scalar parameter convenience (temperature).
    pub fn step_scalar(&mut self, param: &mut f64, grad: f64) {
        self.step_slices(vec![std::slice::from_mut(param)], vec![&[grad][..]]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut opt = Adam::new(1e-3);
        let mut p = [1.0, 1.0];
        opt.step_slices(vec![&mut p[..]], vec![&[0.5, -3.0][..]]);
        // m̂ = g and v̂ = g² on the first step, so |Δ| = lr·|g|/(|g|+eps).
        assert!((p[0] - (1.0 - 1e-3 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (1.0 + 1e-3 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Adam::new(0.1);
        let mut p = [2.0];
        for _ in 0..5 {
            opt.step_slices(vec![&mut p[..]], vec![&[0.0][..]]);
        }
        assert_eq!(p[0], 2.0);
    }

    #[test]
    fn matches_hand_recurrence() {
        let grads = [0.3, -0.1, 0.7, 0.2, -0.5];
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let mut opt = Adam::new(lr);
        let mut p = [0.4];
        let (mut m, mut v, mut q) = (0.0f64, 0.0f64, 0.4f64);
        for (t, &g) in grads.iter().enumerate() {
            opt.step_slices(vec![&mut p[..]], vec![&[g][..]]);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let k = (t + 1) as i32;
            q -= lr * (m / (1.0 - b1.powi(k))) / ((v / (1.0 - b2.powi(k))).sqrt() + eps);
            assert!((p[0] - q).abs() < 1e-14);
        }
        assert_eq!(opt.t, 5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(0.05);
        let mut x = 3.0;
        for _ in 0..2000 {
            let g = 2.0 * (x - 1.0);
            opt.step_scalar(&mut x, g);
        }
        assert!((x - 1.0).abs() < 1e-3);
    }
}
