use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer, `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Multilayer perceptron with ReLU hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
}

/// Gradients with the same shapes as the parameters.
pub type MlpGrads = Mlp;

impl Mlp {
    /// He-uniform hidden layers; the output layer is drawn from
    /// `U(±sqrt(1/fan_in)) * output_scale`. Biases start at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = if l == last {
                    (1.0 / fan_in as f64).sqrt() * output_scale
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                Dense {
                    weight: Array2::from_shape_fn((fan_out, fan_in), |_| {
                        if bound > 0.0 {
                            rng.gen_range(-bound..bound)
                        } else {
                            0.0
                        }
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Checks that layer shapes chain and all values are finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: "at least one layer".into(),
                got: "none".into(),
            });
        }
        for (l, w) in self.layers.iter().enumerate() {
            if w.bias.len() != w.outputs() {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer {l} bias of length {}", w.outputs()),
                    got: w.bias.len().to_string(),
                });
            }
            if l > 0 && self.layers[l - 1].outputs() != w.inputs() {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer {l} with {} inputs", self.layers[l - 1].outputs()),
                    got: w.inputs().to_string(),
                });
            }
        }
        if self
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", self.input_dim()),
                got: cols.to_string(),
            });
        }
        Ok(())
    }

    /// Batched forward pass keeping the activations; rows are samples.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut h, z));
        }
        Ok((h, MlpCache { inputs }))
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        Ok(h)
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode gradients of `sum(grad_out ⊙ output)` with respect to the
    /// parameters and the input.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        let last = self.layers.len() - 1;
        let rows = cache.inputs[0].nrows();
        if grad_out.dim() != (rows, self.output_dim()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows}x{} upstream gradient", self.output_dim()),
                got: format!("{:?}", grad_out.dim()),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for l in (0..=last).rev() {
            let input = &cache.inputs[l];
            let layer = &self.layers[l];
            let weight = g.t().dot(input).as_standard_layout().into_owned();
            let bias = g.sum_axis(Axis(0));
            let mut g_in = g.dot(&layer.weight);
            if l > 0 {
                // The input of layer l is the ReLU output of layer l-1.
                g_in.zip_mut_with(input, |gi, &a| {
                    if a <= 0.0 {
                        *gi = 0.0
                    }
                });
            }
            grads.push(Dense { weight, bias });
            g = g_in;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, g))
    }

    /// Parameter tensors as flat slices, weights then bias per layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    /// `self ← (1 - tau) * self + tau * other`.
    pub fn polyak_from(&mut self, other: &Mlp, tau: f64) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in t.iter_mut().zip(o) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
    }

    /// Adds `other` into `self` (gradient accumulation).
    pub fn accumulate(&mut self, other: &Mlp) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in t.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
}
