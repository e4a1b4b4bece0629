use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{adam_step, AdamConfig, AdamState, Bindings, Gradients, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

/// Fully-connected network. Weights are stored `[fan_in, fan_out]` so a
/// batch `[n, fan_in]` maps to `[n, fan_out]` by right multiplication.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    prefix: String,
    dims: Vec<usize>,
    activations: Vec<Activation>,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. Hidden layers use relu, the last
    /// layer uses `output`.
    pub fn init(prefix: &str, dims: &[usize], output: Activation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "mlp needs at least two positive layer sizes, got {dims:?}"
            )));
        }
        let layers = dims.len() - 1;
        let mut params = Vec::with_capacity(2 * layers);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            params.push(Tensor::from_parts(vec![fan_in, fan_out], weight));
            params.push(Tensor::zeros(&[fan_out]));
        }
        let mut activations = vec![Activation::Relu; layers];
        activations[layers - 1] = output;
        Self::from_params(prefix, dims, activations, params)
    }

    pub fn from_params(
        prefix: &str,
        dims: &[usize],
        activations: Vec<Activation>,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let layers = dims.len().saturating_sub(1);
        if activations.len() != layers || params.len() != 2 * layers {
            return Err(Error::InvalidArgument(
                "mlp layer/parameter count mismatch".into(),
            ));
        }
        for (l, w) in dims.windows(2).enumerate() {
            if params[2 * l].shape() != [w[0], w[1]] || params[2 * l + 1].shape() != [w[1]] {
                return Err(Error::ShapeMismatch {
                    op: "mlp layer",
                    left: params[2 * l].shape().to_vec(),
                    right: vec![w[0], w[1]],
                });
            }
        }
        let names = (0..layers)
            .flat_map(|l| [format!("{prefix}.l{l}.w"), format!("{prefix}.l{l}.b")])
            .collect();
        Ok(Mlp {
            prefix: prefix.to_string(),
            dims: dims.to_vec(),
            activations,
            names,
            params,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param_tensors(&self) -> &[Tensor] {
        &self.params
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer + 1]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.params[2 * layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.params[2 * layer + 1]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Adds the network to `g` with trainable parameter leaves.
    pub fn build(&self, g: &mut Graph, x: NodeId) -> NodeId {
        self.build_with(g, x, true)
    }

    /// Adds the network with parameters as plain inputs: gradients still
    /// flow to `x` but never to the weights.
    pub fn build_frozen(&self, g: &mut Graph, x: NodeId) -> NodeId {
        self.build_with(g, x, false)
    }

    fn build_with(&self, g: &mut Graph, x: NodeId, trainable: bool) -> NodeId {
        let mut h = x;
        for (l, act) in self.activations.iter().enumerate() {
            let leaf = |g: &mut Graph, name: &str| {
                if trainable {
                    g.param(name)
                } else {
                    g.input(name)
                }
            };
            let w = leaf(g, &self.names[2 * l]);
            let b = leaf(g, &self.names[2 * l + 1]);
            let z = g.matmul(h, w);
            h = g.add_row_bias(z, b);
            h = match act {
                Activation::Relu => g.relu(h),
                Activation::Sigmoid => g.sigmoid(h),
                Activation::Linear => h,
            };
        }
        h
    }

    pub fn bind<'a>(&'a self, b: &mut Bindings<'a>) {
        for (name, t) in self.params() {
            b.insert(name, t);
        }
    }

    /// Plain forward pass for a `[n, input_dim]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let input = g.input("x");
        self.build_frozen(&mut g, input);
        let mut b = Bindings::new().bind("x", x);
        self.bind(&mut b);
        Ok(g.forward(&b)?.clone())
    }
}

/// Adam state for every parameter of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn for_mlp(net: &Mlp, config: AdamConfig) -> Self {
        Optimizer {
            config,
            states: net.params.iter().map(AdamState::for_param).collect(),
        }
    }

    /// Applies one Adam step to every parameter that received a gradient.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        for ((name, p), st) in net
            .names
            .iter()
            .zip(net.params.iter_mut())
            .zip(self.states.iter_mut())
        {
            if let Some(g) = grads.get(name) {
                adam_step(p, g, st, &self.config)?;
            }
        }
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, AdamState::step_count)
    }
}
