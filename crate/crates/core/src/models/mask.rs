use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, Optimizer};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{AdamConfig, Bindings, Graph, Tensor};

/// Splits a mixture with a mask into `(b_hat, x_hat)`.
///
/// `x_hat = y - y*m` and `b_hat = y - x_hat`, which makes
/// `b_hat + x_hat == y` hold exactly in floating point and keeps both
/// estimates inside `[0, y]` for non-negative `y`.
pub fn mask_apply(y: &Tensor, m: &Tensor) -> Result<(Tensor, Tensor)> {
    y.check_same_shape("mask_apply", m)?;
    if let Some(bad) = m.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "mask value {bad} outside [0, 1]"
        )));
    }
    let x: Vec<f64> = y
        .data()
        .iter()
        .zip(m.data())
        .map(|(&y, &m)| y - y * m)
        .collect();
    let b: Vec<f64> = y.data().iter().zip(&x).map(|(&y, &x)| y - x).collect();
    Ok((
        Tensor::from_parts(y.shape().to_vec(), b),
        Tensor::from_parts(y.shape().to_vec(), x),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            hidden: vec![512, 512],
            lr: 0.001,
            batch_size: 32,
        }
    }
}

/// Masking network `m(y)`: relu MLP with a sigmoid output of the input size.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskModel {
    pub net: Mlp,
    pub opt: Optimizer,
    sample_shape: Vec<usize>,
    seed: u64,
}

const EVAL_BATCH: usize = 256;

impl MaskModel {
    pub fn init(sample_shape: &[usize], config: &MaskConfig, seed: u64) -> Result<Self> {
        let dim: usize = sample_shape.iter().product();
        let mut dims = vec![dim];
        dims.extend(&config.hidden);
        dims.push(dim);
        let mut r = rng::stream(seed, "mask-init");
        let net = Mlp::init("mask", &dims, Activation::Sigmoid, &mut r)?;
        let opt = Optimizer::for_mlp(&net, AdamConfig::with_lr(config.lr));
        Ok(MaskModel {
            net,
            opt,
            sample_shape: sample_shape.to_vec(),
            seed,
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_samples(&self, ys: &[&Tensor]) -> Result<()> {
        for y in ys {
            if y.shape() != self.sample_shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "mask model input",
                    left: y.shape().to_vec(),
                    right: self.sample_shape.clone(),
                });
            }
        }
        Ok(())
    }

    /// Masks for a set of mixtures, evaluated in batches.
    pub fn masks(&self, ys: &[&Tensor]) -> Result<Vec<Tensor>> {
        self.check_samples(ys)?;
        let mut out = Vec::with_capacity(ys.len());
        for chunk in ys.chunks(EVAL_BATCH) {
            let batch = Tensor::stack_rows(chunk)?;
            let m = self.net.forward(&batch)?;
            out.extend(m.unstack_rows(&self.sample_shape)?);
        }
        Ok(out)
    }

    pub fn mask(&self, y: &Tensor) -> Result<Tensor> {
        Ok(self.masks(&[y])?.remove(0))
    }

    /// `(b_hat, x_hat)` for every mixture.
    pub fn separate(&self, ys: &[&Tensor]) -> Result<Vec<(Tensor, Tensor)>> {
        self.masks(ys)?
            .iter()
            .zip(ys)
            .map(|(m, y)| mask_apply(y, m))
            .collect()
    }

    /// Minimizes mean `L1(y * m(y), b)` over `(y, b)` pairs with Adam,
    /// reshuffling every epoch. Returns the per-epoch mean training loss.
    pub fn train_l1(
        &mut self,
        pairs: &[(&Tensor, &Tensor)],
        epochs: usize,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no training pairs".into()));
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        for (y, b) in pairs {
            self.check_samples(&[y, b])?;
        }
        let mut g = Graph::new();
        let y = g.input("y");
        let b = g.input("b");
        let m = self.net.build(&mut g, y);
        let b_hat = g.mul(y, m);
        g.l1(b_hat, b);

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for idx in order.chunks(batch_size) {
                let ys: Vec<&Tensor> = idx.iter().map(|&i| pairs[i].0).collect();
                let bs: Vec<&Tensor> = idx.iter().map(|&i| pairs[i].1).collect();
                let (yb, bb) = (Tensor::stack_rows(&ys)?, Tensor::stack_rows(&bs)?);
                let mut bind = Bindings::new().bind("y", &yb).bind("b", &bb);
                self.net.bind(&mut bind);
                let loss = g
                    .forward(&bind)
                    .map_err(|e| diverged(epoch, e))?
                    .item()
                    .expect("scalar loss");
                let grads = g.backward().map_err(|e| diverged(epoch, e))?;
                self.opt.step(&mut self.net, &grads)?;
                total += loss * idx.len() as f64;
            }
            trace.push(total / pairs.len() as f64);
        }
        Ok(trace)
    }
}

pub(crate) fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence(format!("epoch {epoch}: {what}")),
        other => other,
    }
}
