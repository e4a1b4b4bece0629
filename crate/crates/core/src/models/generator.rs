use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, Optimizer};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{
    adam::adam_update_slice, project_unit_ball_in_place, AdamConfig, AdamState, Bindings, Graph,
    NodeId, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Upper end of the generated value range; outputs lie in `[0, range]`.
    pub range: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 64,
            hidden: vec![256, 512],
            range: 1.0,
        }
    }
}

/// Maps a latent code to a non-negative sample: `range * sigmoid(mlp(z))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub net: Mlp,
    pub opt: Optimizer,
    sample_shape: Vec<usize>,
    range: f64,
}

impl GeneratorModel {
    pub fn init(
        name: &str,
        sample_shape: &[usize],
        config: &GeneratorConfig,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(config.range > 0.0) || config.latent_dim == 0 {
            return Err(Error::InvalidArgument(
                "generator needs a positive range and latent dimension".into(),
            ));
        }
        let mut dims = vec![config.latent_dim];
        dims.extend(&config.hidden);
        dims.push(sample_shape.iter().product());
        let mut r = rng::stream(seed, &format!("{name}-init"));
        let net = Mlp::init(name, &dims, Activation::Sigmoid, &mut r)?;
        let opt = Optimizer::for_mlp(&net, AdamConfig::with_lr(lr));
        Ok(GeneratorModel {
            net,
            opt,
            sample_shape: sample_shape.to_vec(),
            range: config.range,
        })
    }

    /// Wraps trained weights; the optimizer starts fresh.
    pub fn from_net(net: Mlp, sample_shape: &[usize], range: f64, lr: f64) -> Result<Self> {
        if net.output_dim() != sample_shape.iter().product::<usize>() || !(range > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "generator with output {} cannot produce samples of shape {sample_shape:?}",
                net.output_dim()
            )));
        }
        let opt = Optimizer::for_mlp(&net, AdamConfig::with_lr(lr));
        Ok(GeneratorModel {
            net,
            opt,
            sample_shape: sample_shape.to_vec(),
            range,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    /// Adds `G(z)` to a graph, trainable or frozen.
    pub fn build(&self, g: &mut Graph, z: NodeId, trainable: bool) -> NodeId {
        let s = if trainable {
            self.net.build(g, z)
        } else {
            self.net.build_frozen(g, z)
        };
        if self.range == 1.0 {
            s
        } else {
            g.scale(s, self.range)
        }
    }

    /// Generates one sample per row of a `[n, latent_dim]` code matrix.
    pub fn generate(&self, codes: &Tensor) -> Result<Vec<Tensor>> {
        let out = self.net.forward(codes)?;
        let out = if self.range == 1.0 {
            out
        } else {
            out.scale(self.range)?
        };
        out.unstack_rows(&self.sample_shape)
    }
}

/// Free per-sample latent codes, each kept inside the unit ball, with a
/// private Adam state per code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    dim: usize,
    codes: Vec<f64>,
    states: Vec<AdamState>,
    pub config: AdamConfig,
}

impl LatentTable {
    /// Codes drawn from `N(0, 0.1^2 / dim)` and projected to the unit ball.
    pub fn init(n: usize, dim: usize, lr: f64, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, 0.1 / (dim as f64).sqrt()).expect("valid std");
        let mut codes: Vec<f64> = (0..n * dim).map(|_| normal.sample(rng)).collect();
        for row in codes.chunks_mut(dim) {
            project_unit_ball_in_place(row);
        }
        LatentTable {
            dim,
            codes,
            states: (0..n).map(|_| AdamState::new(dim)).collect(),
            config: AdamConfig::with_lr(lr),
        }
    }

    /// Table holding the rows of a `[n, dim]` matrix, projected to the
    /// unit ball, with fresh optimizer state.
    pub fn from_tensor(codes: &Tensor, lr: f64) -> Result<Self> {
        let [n, dim] = *codes.shape() else {
            return Err(Error::InvalidArgument(
                "latent codes must be a matrix".into(),
            ));
        };
        codes.ensure_finite("latent codes")?;
        let mut data = codes.data().to_vec();
        for row in data.chunks_mut(dim.max(1)) {
            project_unit_ball_in_place(row);
        }
        Ok(LatentTable {
            dim,
            codes: data,
            states: (0..n).map(|_| AdamState::new(dim)).collect(),
            config: AdamConfig::with_lr(lr),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn code(&self, i: usize) -> &[f64] {
        &self.codes[i * self.dim..(i + 1) * self.dim]
    }

    /// Overwrites code `i` (projected to the unit ball).
    pub fn set_code(&mut self, i: usize, code: &[f64]) -> Result<()> {
        if code.len() != self.dim || code.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("bad latent code".into()));
        }
        let row = &mut self.codes[i * self.dim..(i + 1) * self.dim];
        row.copy_from_slice(code);
        project_unit_ball_in_place(row);
        Ok(())
    }

    /// `[idx.len(), dim]` matrix of the selected codes.
    pub fn gather(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.code(i));
        }
        Tensor::from_parts(vec![idx.len(), self.dim], data)
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.len(), self.dim], self.codes.clone())
    }

    /// Adam step on the selected rows followed by unit-ball projection.
    pub fn step(&mut self, idx: &[usize], grad: &Tensor) -> Result<()> {
        if grad.shape() != [idx.len(), self.dim] {
            return Err(Error::ShapeMismatch {
                op: "latent step",
                left: grad.shape().to_vec(),
                right: vec![idx.len(), self.dim],
            });
        }
        grad.ensure_finite("latent gradient")?;
        for (k, &i) in idx.iter().enumerate() {
            let row = &mut self.codes[i * self.dim..(i + 1) * self.dim];
            adam_update_slice(row, grad.row(k), &mut self.states[i], &self.config);
            project_unit_ball_in_place(row);
        }
        Ok(())
    }

    pub fn max_norm(&self) -> f64 {
        self.codes
            .chunks(self.dim)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Mean L1 between generated samples and targets for a batch of codes, as a
/// graph with `z` as the only trainable leaf besides (optionally) the
/// generator weights. Used by GLO training and by tests.
pub(crate) fn reconstruction_graph(gen: &GeneratorModel, train_generator: bool) -> Graph {
    let mut g = Graph::new();
    let z = g.param("z");
    let target = g.input("target");
    let out = gen.build(&mut g, z, train_generator);
    g.l1(out, target);
    g
}

pub(crate) fn bind_generator<'a>(gen: &'a GeneratorModel, b: &mut Bindings<'a>) {
    gen.net.bind(b);
}
