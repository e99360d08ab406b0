//! Minimal dense feedforward network with manual backpropagation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{all_finite, Real};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply<R: Real>(self, z: R) -> R {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(R::zero()),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative<R: Real>(self, z: R, a: R) -> R {
        match self {
            Activation::Tanh => R::one() - a * a,
            Activation::Relu => {
                if z > R::zero() {
                    R::one()
                } else {
                    R::zero()
                }
            }
            Activation::Sigmoid => a * (R::one() - a),
        }
    }
}

pub fn sigmoid<R: Real>(z: R) -> R {
    if z >= R::zero() {
        R::one() / (R::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (R::one() + e)
    }
}

/// Affine layer `y = W x + b`, `W` row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<R = f32> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<R>,
    pub bias: Vec<R>,
}

impl<R: Real> Dense<R> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![R::zero(); inputs * outputs],
            bias: vec![R::zero(); outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = glorot_limit(inputs, outputs);
        let weight = (0..inputs * outputs)
            .map(|_| R::of(rng.random_range(-limit..=limit)))
            .collect();
        Dense {
            inputs,
            outputs,
            weight,
            bias: vec![R::zero(); outputs],
        }
    }

    fn forward(&self, x: &[R]) -> Vec<R> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).fold(self.bias[o], |acc, (&w, &v)| acc + w * v)
            })
            .collect()
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Hidden layers use `hidden_activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R = f32> {
    pub layers: Vec<Dense<R>>,
    pub hidden_activation: Activation,
}

/// Per-layer pre-activations and outputs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<R> {
    pub input: Vec<R>,
    pre: Vec<Vec<R>>,
    post: Vec<Vec<R>>,
}

impl<R: Real> Trace<R> {
    pub fn output(&self) -> &[R] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<R> {
    pub weight: Vec<R>,
    pub bias: Vec<R>,
}

impl<R: Real> Mlp<R> {
    /// `sizes = [input, hidden..., output]`.
    pub fn glorot(sizes: &[usize], hidden_activation: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Dense::glorot(w[0], w[1], rng))
                .collect(),
            hidden_activation,
        }
    }

    pub fn zeros(sizes: &[usize], hidden_activation: Activation) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            hidden_activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    /// Layer widths `[input, hidden..., output]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn trace(&self, x: &[R]) -> Result<Trace<R>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network input has {} entries, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<R>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(post.last().map(Vec::as_slice).unwrap_or(x));
            let a = if i == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.hidden_activation.apply(v)).collect()
            };
            if !all_finite(&a) {
                return Err(Error::NonFinite(format!("network layer {i} forward")));
            }
            pre.push(z);
            post.push(a);
        }
        Ok(Trace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    pub fn forward(&self, x: &[R]) -> Result<Vec<R>> {
        Ok(self.trace(x)?.output().to_vec())
    }

    /// Accumulate `d(upstream . output)/d(params)` into `grads` and return
    /// the gradient with respect to the input.
    pub fn backward(
        &self,
        trace: &Trace<R>,
        upstream: &[R],
        grads: &mut [DenseGrad<R>],
    ) -> Result<Vec<R>> {
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i != last {
                for ((d, &z), &a) in delta.iter_mut().zip(&trace.pre[i]).zip(&trace.post[i]) {
                    *d *= self.hidden_activation.derivative(z, a);
                }
            }
            let input = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            let g = &mut grads[i];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == R::zero() {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            let mut next = vec![R::zero(); layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == R::zero() {
                    continue;
                }
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            if !all_finite(&next) {
                return Err(Error::NonFinite(format!("network layer {i} backward")));
            }
            delta = next;
        }
        Ok(delta)
    }

    pub fn zero_grads(&self) -> Vec<DenseGrad<R>> {
        self.layers
            .iter()
            .map(|l| DenseGrad {
                weight: vec![R::zero(); l.weight.len()],
                bias: vec![R::zero(); l.bias.len()],
            })
            .collect()
    }

    pub fn cast<S: Real>(&self) -> Mlp<S> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weight: crate::real::cast_vec(&l.weight),
                    bias: crate::real::cast_vec(&l.bias),
                })
                .collect(),
            hidden_activation: self.hidden_activation,
        }
    }

    /// Parameter slices in a fixed order: per layer, weight then bias.
    pub fn segments_mut(&mut self) -> Vec<&mut [R]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn segments(&self) -> Vec<&[R]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

pub fn grad_segments<R>(grads: &[DenseGrad<R>]) -> Vec<&[R]> {
    grads
        .iter()
        .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn net(act: Activation, seed: u64) -> Mlp<f64> {
        let mut r = rng::stream(seed, "nn-test", 0);
        let mut m = Mlp::<f64>::glorot(&[3, 5, 4, 2], act, &mut r);
        for l in &mut m.layers {
            for b in &mut l.bias {
                *b = r.random_range(-0.5..0.5);
            }
        }
        m
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            let m = net(act, 1);
            let x = [0.3, -0.7, 0.2];
            let up = [0.5, -1.5];
            let objective = |m: &Mlp<f64>, x: &[f64]| -> f64 {
                m.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            let mut grads = m.zero_grads();
            let gx = m.backward(&m.trace(&x).unwrap(), &up, &mut grads).unwrap();
            let h = 1e-6;
            for (i, &g) in gx.iter().enumerate() {
                let (mut a, mut b) = (x, x);
                a[i] += h;
                b[i] -= h;
                let fd = (objective(&m, &a) - objective(&m, &b)) / (2.0 * h);
                assert!((fd - g).abs() < 1e-6, "{act:?} input {i}: {fd} vs {g}");
            }
            for l in 0..m.layers.len() {
                for j in 0..m.layers[l].weight.len() {
                    let (mut a, mut b) = (m.clone(), m.clone());
                    a.layers[l].weight[j] += h;
                    b.layers[l].weight[j] -= h;
                    let fd = (objective(&a, &x) - objective(&b, &x)) / (2.0 * h);
                    let g = grads[l].weight[j];
                    assert!((fd - g).abs() < 1e-6, "{act:?} layer {l} w{j}: {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn zero_network_outputs_bias() {
        let mut m = Mlp::<f32>::zeros(&[4, 3, 2], Activation::Tanh);
        m.layers[1].bias = vec![1.0, -2.0];
        assert_eq!(m.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, -2.0]);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!((sigmoid(1000.0f64) - 1.0).abs() < 1e-12);
    }
}
