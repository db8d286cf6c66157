//! Dense layers and multilayer perceptrons on top of the tape.
//!
//! Each layer stores `weights` as an [out × in] matrix so both the plain and
//! the recorded forward pass compute `activation(x · Wᵀ + b)`.

use rand::Rng;

use crate::error::Result;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{matmul_bt, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply_plain(self, x: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => x.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
            Activation::Softplus => x.iter_mut().for_each(|v| {
                *v = if *v > 30.0 { *v } else { v.exp().ln_1p() };
            }),
        }
    }

    fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// Uniform init in ±sqrt(6 / (fan_in + fan_out)), bias zero.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        DenseLayer {
            weights: Tensor::from_vec(&[output, input], data).expect("init shape"),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    /// activation(x · Wᵀ + b) without recording; `x` is [batch × in].
    pub fn forward_plain(&self, x: &Tensor) -> Result<Tensor> {
        let batch = x.shape()[0];
        let (out, inp) = (self.output_dim(), self.input_dim());
        if x.shape()[1] != inp {
            return Err(crate::error::Error::Dim {
                context: "dense_forward input",
                expected: inp,
                got: x.shape()[1],
            });
        }
        let mut y = matmul_bt(x.data(), self.weights.data(), batch, inp, out);
        for i in 0..batch {
            for j in 0..out {
                y[i * out + j] += self.bias.data()[j];
            }
        }
        self.activation.apply_plain(&mut y);
        Tensor::from_vec(&[batch, out], y)
    }

    /// Recorded forward through already-bound parameter leaves.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let lin = tape.matmul_bt(x, w)?;
        let biased = tape.add_row(lin, b)?;
        Ok(self.activation.apply_tape(tape, biased))
    }
}

/// Value-level dense forward; the recorded path is [`Mlp::forward_tape`].
pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    layer.forward_plain(input)
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Tape leaves for every parameter of an [`Mlp`], one pair per layer.
pub struct BoundMlp {
    pub vars: Vec<(Var, Var)>,
}

impl Mlp {
    /// `dims` = [in, hidden..., out]; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn init(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "Mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { output } else { hidden };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("nonempty mlp").input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty mlp").output_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.output_dim()));
        d
    }

    pub fn forward_plain(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = self.layers[0].forward_plain(x)?;
        for layer in &self.layers[1..] {
            cur = layer.forward_plain(&cur)?;
        }
        Ok(cur)
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| (tape.leaf(&l.weights), tape.leaf(&l.bias)))
            .collect();
        BoundMlp { vars }
    }

    pub fn forward_tape(&self, tape: &mut Tape, bound: &BoundMlp, x: Var) -> Result<Var> {
        let mut cur = x;
        for (layer, &(w, b)) in self.layers.iter().zip(&bound.vars) {
            cur = layer.forward_tape(tape, cur, w, b)?;
        }
        Ok(cur)
    }

    /// Pulls tape adjoints into the parameter gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundMlp) {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&bound.vars) {
            tape.accumulate_grad_into(w, &mut layer.weights);
            tape.accumulate_grad_into(b, &mut layer.bias);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    /// Rebuilds the binding from leaves created in `bind` order (weights,
    /// bias per layer); used by finite-difference harnesses that own the
    /// leaves.
    pub fn bound_from_slice(&self, vars: &[Var]) -> BoundMlp {
        assert_eq!(vars.len(), 2 * self.layers.len());
        BoundMlp {
            vars: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}
