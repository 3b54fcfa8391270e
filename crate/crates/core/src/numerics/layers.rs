//! Parameter initialisation and the affine layer shared by every model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, NumericsError, ParamId, ParamStore, Tensor};

pub type ModelRng = ChaCha8Rng;

pub fn init_rng(seed: u64) -> ModelRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot-uniform `[fan_in, fan_out]` matrix.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}

/// `y = x · W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = ps.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out));
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// Looks up an existing layer by name (used after loading checkpoints).
    pub fn lookup(ps: &ParamStore, name: &str) -> Option<Self> {
        let weight = ps.id_of(&format!("{name}.weight"))?;
        let bias = ps.id_of(&format!("{name}.bias"))?;
        let (fan_in, fan_out) = ps.get(weight).dims();
        Some(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId, NumericsError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.affine(x, w, b)
    }

    /// Same layer applied with weights inserted as constants, so gradients
    /// flow through to `x` but never into these weights.
    pub fn forward_frozen(&self, ps: &ParamStore, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId, NumericsError> {
        let w = g.constant(ps.get(self.weight).clone());
        let b = g.constant(ps.get(self.bias).clone());
        g.affine(x, w, b)
    }

    /// Plain evaluation outside any graph.
    pub fn apply(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let mut y = x.matmul(ps.get(self.weight));
        let b = ps.get(self.bias).data();
        let cols = y.cols();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += b[i % cols];
        }
        y
    }
}

/// Elementwise nonlinearity applied after hidden affine layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
    /// Identity; used for linear ablations.
    Linear,
}

impl Activation {
    pub fn forward(self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId, NumericsError> {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Linear => Ok(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => super::sigmoid(x),
            Activation::Linear => x,
        }
    }
}

/// Stack of dense layers; every layer but (optionally) the last is followed
/// by `activation`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub linear_output: bool,
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        linear_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(ps, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activation,
            linear_output,
        }
    }

    pub fn lookup(ps: &ParamStore, name: &str, activation: Activation, linear_output: bool) -> Option<Self> {
        let mut layers = Vec::new();
        while let Some(d) = Dense::lookup(ps, &format!("{name}.{}", layers.len())) {
            layers.push(d);
        }
        (!layers.is_empty()).then_some(Self {
            layers,
            activation,
            linear_output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    fn is_activated(&self, i: usize) -> bool {
        !(self.linear_output && i + 1 == self.layers.len())
    }

    /// Trainable forward pass; with `frozen`, weights enter as constants.
    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId, frozen: Option<&ParamStore>) -> Result<NodeId, NumericsError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = match frozen {
                Some(ps) => layer.forward_frozen(ps, g, h)?,
                None => layer.forward(g, h)?,
            };
            if self.is_activated(i) {
                h = self.activation.forward(g, h)?;
            }
        }
        Ok(h)
    }

    /// Plain evaluation of a `[rows, input_dim]` batch.
    pub fn apply(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(ps, &h);
            if self.is_activated(i) {
                let act = self.activation;
                h = h.map(|v| act.eval(v));
            }
        }
        h
    }
}
