use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, Optimizer};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{AdamConfig, Bindings, Graph, NodeId, Tensor};

/// Power-iteration state for one weight matrix. For a weight stored as
/// `[rows, cols]`, `u` has `rows` entries and `v` has `cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIteration {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl PowerIteration {
    pub fn new(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        normalize(&mut u);
        PowerIteration {
            u,
            v: vec![0.0; cols],
        }
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Runs `iters` rounds of `v <- W^T u / |.|`, `u <- W v / |.|` and returns
    /// the estimate `u^T W v` of the largest singular value.
    pub fn refine(&mut self, w: &Tensor, iters: usize) -> Result<f64> {
        if w.rank() != 2 || w.shape()[0] != self.u.len() || w.shape()[1] != self.v.len() {
            return Err(Error::ShapeMismatch {
                op: "power iteration",
                left: w.shape().to_vec(),
                right: vec![self.u.len(), self.v.len()],
            });
        }
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let d = w.data();
        for _ in 0..iters.max(1) {
            self.v.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..rows {
                let ui = self.u[i];
                for (vj, wij) in self.v.iter_mut().zip(&d[i * cols..(i + 1) * cols]) {
                    *vj += wij * ui;
                }
            }
            normalize(&mut self.v);
            for i in 0..rows {
                self.u[i] = d[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(&self.v)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            normalize(&mut self.u);
        }
        Ok(self.sigma(w))
    }

    fn sigma(&self, w: &Tensor) -> f64 {
        let cols = w.shape()[1];
        self.u
            .iter()
            .enumerate()
            .map(|(i, ui)| {
                ui * w.data()[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(&self.v)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum()
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1e-300 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// `weight / sigma_hat`, where `sigma_hat` comes from `power_iters` rounds of
/// power iteration continuing from the persistent state `pi`.
pub fn spectral_normalize(
    weight: &Tensor,
    power_iters: usize,
    pi: &mut PowerIteration,
) -> Result<(Tensor, f64)> {
    let sigma = pi.refine(weight, power_iters)?;
    if !(sigma > 0.0) {
        return Ok((weight.clone(), sigma));
    }
    Ok((weight.scale(1.0 / sigma)?, sigma))
}

const MAX_EXTRA_ROUNDS: usize = 200;
const SETTLE_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub hidden: Vec<usize>,
    pub power_iters: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden: vec![512, 256],
            power_iters: 1,
        }
    }
}

/// Relu MLP with a linear scalar output whose weights are spectrally
/// normalized on every forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    pub net: Mlp,
    pub opt: Optimizer,
    power: Vec<PowerIteration>,
    u_names: Vec<String>,
    v_names: Vec<String>,
    power_iters: usize,
    u_tensors: Vec<Tensor>,
    v_tensors: Vec<Tensor>,
}

impl DiscriminatorModel {
    pub fn init(
        input_dim: usize,
        config: &DiscriminatorConfig,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(1);
        let mut r = rng::stream(seed, "disc-init");
        let net = Mlp::init("disc", &dims, Activation::Linear, &mut r)?;
        let power = dims
            .windows(2)
            .map(|w| PowerIteration::new(w[0], w[1], &mut r))
            .collect::<Vec<_>>();
        let layers = net.num_layers();
        let opt = Optimizer::for_mlp(&net, AdamConfig::with_lr(lr));
        let mut d = DiscriminatorModel {
            net,
            opt,
            power,
            u_names: (0..layers).map(|l| format!("disc.l{l}.u")).collect(),
            v_names: (0..layers).map(|l| format!("disc.l{l}.v")).collect(),
            power_iters: config.power_iters.max(1),
            u_tensors: Vec::new(),
            v_tensors: Vec::new(),
        };
        // converge the persistent vectors once so the first forward is
        // already normalized
        for (l, pi) in d.power.iter_mut().enumerate() {
            pi.refine(d.net.weight(l), 100)?;
        }
        d.refresh_power()?;
        Ok(d)
    }

    /// Advances each layer's power iteration against the current weights.
    /// Called once per training step before the forward pass.
    /// Runs at least `power_iters` warm-started rounds per layer, then keeps
    /// going until the estimate settles so that the normalized weights stay
    /// within the unit-norm tolerance after large updates.
    pub fn refresh_power(&mut self) -> Result<()> {
        self.u_tensors.clear();
        self.v_tensors.clear();
        for (l, pi) in self.power.iter_mut().enumerate() {
            let w = self.net.weight(l);
            let mut prev = pi.refine(w, self.power_iters)?;
            for _ in 0..MAX_EXTRA_ROUNDS {
                let s = pi.refine(w, 1)?;
                let settled = (s - prev).abs() <= SETTLE_TOL * s.abs();
                prev = s;
                if settled {
                    break;
                }
            }
            self.u_tensors
                .push(Tensor::from_parts(vec![pi.u.len(), 1], pi.u.clone()));
            self.v_tensors
                .push(Tensor::from_parts(vec![pi.v.len(), 1], pi.v.clone()));
        }
        Ok(())
    }

    /// Spectrally normalized weights exactly as used by the forward pass.
    pub fn normalized_weights(&self) -> Vec<Tensor> {
        (0..self.net.num_layers())
            .map(|l| {
                let w = self.net.weight(l);
                let s = self.power[l].sigma(w);
                w.scale(1.0 / (s + crate::tensor::SAFE_DIV_EPS))
                    .expect("finite")
            })
            .collect()
    }

    /// Adds `D(x)` to `g`. The normalization `W / (u^T W v)` is part of the
    /// graph, so gradients flow through the singular value estimate.
    pub fn build(&self, g: &mut Graph, x: NodeId, trainable: bool) -> NodeId {
        let one = g.constant(Tensor::scalar(1.0));
        let mut h = x;
        let layers = self.net.num_layers();
        for l in 0..layers {
            let (wn, bn) = (format!("disc.l{l}.w"), format!("disc.l{l}.b"));
            let (w, b) = if trainable {
                (g.param(&wn), g.param(&bn))
            } else {
                (g.input(&wn), g.input(&bn))
            };
            let u = g.input(&self.u_names[l]);
            let v = g.input(&self.v_names[l]);
            let wv = g.matmul(w, v);
            let uwv = g.mul(u, wv);
            let sigma = g.sum(uwv);
            let inv = g.div_eps(one, sigma);
            let w_sn = g.scalar_mul(inv, w);
            let z = g.matmul(h, w_sn);
            h = g.add_row_bias(z, b);
            if l + 1 < layers {
                h = g.relu(h);
            }
        }
        h
    }

    pub fn bind<'a>(&'a self, b: &mut Bindings<'a>) {
        self.net.bind(b);
        for l in 0..self.net.num_layers() {
            b.insert(&self.u_names[l], &self.u_tensors[l]);
            b.insert(&self.v_names[l], &self.v_tensors[l]);
        }
    }

    /// Scores for a `[n, input_dim]` batch.
    pub fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let input = g.input("x");
        self.build(&mut g, input, false);
        let mut b = Bindings::new().bind("x", x);
        self.bind(&mut b);
        Ok(g.forward(&b)?.data().to_vec())
    }
}
