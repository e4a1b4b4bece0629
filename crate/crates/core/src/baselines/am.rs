//! Adversarial masking: a mask network trained so that masked mixtures
//! look like observed samples to a least-squares discriminator.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DiscriminatorConfig, DiscriminatorModel, MaskConfig, MaskModel};
use crate::rng;
use crate::tensor::{Bindings, Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmConfig {
    pub mask: MaskConfig,
    pub disc: DiscriminatorConfig,
    pub disc_lr: f64,
    pub prior_weight: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AmConfig {
    fn default() -> Self {
        AmConfig {
            mask: MaskConfig::default(),
            disc: DiscriminatorConfig::default(),
            disc_lr: 0.001,
            prior_weight: 0.1,
            epochs: 25,
            seed: 0,
        }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.mask.batch_size == 0 {
            return Err(Error::Config(
                "am epochs and batch size must be positive".into(),
            ));
        }
        if !(self.mask.lr > 0.0) || !(self.disc_lr > 0.0) {
            return Err(Error::Config("am learning rates must be positive".into()));
        }
        if !(self.prior_weight >= 0.0) || !self.prior_weight.is_finite() {
            return Err(Error::Config(format!(
                "prior weight {} must be >= 0",
                self.prior_weight
            )));
        }
        Ok(())
    }
}

/// `mean(D(fake)^2) + mean((D(real) - 1)^2)`.
pub fn discriminator_loss(fake: &[f64], real: &[f64]) -> f64 {
    mean_sq(fake, 0.0) + mean_sq(real, 1.0)
}

/// `mean((D(fake) - 1)^2) + weight * mean|m - 1|`.
pub fn mask_loss(fake: &[f64], masks: &[f64], prior_weight: f64) -> f64 {
    mean_sq(fake, 1.0) + prior_weight * magnitude_prior(masks)
}

pub fn magnitude_prior(masks: &[f64]) -> f64 {
    masks.iter().map(|m| (m - 1.0).abs()).sum::<f64>() / masks.len().max(1) as f64
}

fn mean_sq(v: &[f64], target: f64) -> f64 {
    v.iter().map(|s| (s - target) * (s - target)).sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmEpoch {
    pub disc_loss: f64,
    pub mask_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmModel {
    pub mask: MaskModel,
    pub disc: DiscriminatorModel,
    pub history: Vec<AmEpoch>,
}

/// Alternates one discriminator step and one mask step per mixture batch.
/// Observed samples for the discriminator are drawn with replacement.
pub fn am_train(observed: &[&Tensor], mixtures: &[&Tensor], config: &AmConfig) -> Result<AmModel> {
    config.validate()?;
    if observed.is_empty() || mixtures.is_empty() {
        return Err(Error::InvalidArgument(
            "adversarial masking needs observed samples and mixtures".into(),
        ));
    }
    let shape = mixtures[0].shape().to_vec();
    let dim: usize = shape.iter().product();
    let mut mask = MaskModel::init(
        &shape,
        &config.mask,
        rng::stream(config.seed, "am-mask").random(),
    )?;
    let mut disc = DiscriminatorModel::init(
        dim,
        &config.disc,
        config.disc_lr,
        rng::stream(config.seed, "am-disc").random(),
    )?;
    let mut r = rng::stream(config.seed, "am-train");

    // real and fake rows share one batch: 2 * mse against 0/1 targets equals
    // the two-term loss when both halves have the same size
    let mut dg = Graph::new();
    let d_in = dg.input("x");
    let d_target = dg.input("target");
    let d_out = disc.build(&mut dg, d_in, true);
    let d_mse = dg.mse(d_out, d_target);
    dg.scale(d_mse, 2.0);

    let mut mg = Graph::new();
    let y = mg.input("y");
    let m = mask.net.build(&mut mg, y);
    let ym = mg.mul(y, m);
    let score = disc.build(&mut mg, ym, false);
    let ones_s = mg.input("ones_s");
    let ones_m = mg.input("ones_m");
    let adv = mg.mse(score, ones_s);
    let prior = mg.l1(m, ones_m);
    let weighted = mg.scale(prior, config.prior_weight);
    mg.add(adv, weighted);

    let mut order: Vec<usize> = (0..mixtures.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let (mut d_total, mut m_total) = (0.0, 0.0);
        for idx in order.chunks(config.mask.batch_size) {
            let n = idx.len();
            let ys: Vec<&Tensor> = idx.iter().map(|&i| mixtures[i]).collect();
            let yb = Tensor::stack_rows(&ys)?;

            let fake = yb.mul(&mask.net.forward(&yb)?)?;
            let reals: Vec<&Tensor> = (0..n)
                .map(|_| observed[r.random_range(0..observed.len())])
                .collect();
            let real = Tensor::stack_rows(&reals)?;
            let both = Tensor::from_parts(vec![2 * n, dim], [fake.data(), real.data()].concat());
            let target = Tensor::from_parts(
                vec![2 * n, 1],
                (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect(),
            );
            disc.refresh_power()?;
            let mut b = Bindings::new().bind("x", &both).bind("target", &target);
            disc.bind(&mut b);
            let d_loss = forward_scalar(&mut dg, &b, epoch)?;
            let grads = dg.backward().map_err(|e| diverged(epoch, e))?;
            drop(b);
            disc.opt.step(&mut disc.net, &grads)?;

            disc.refresh_power()?;
            let ones_s_t = Tensor::full(&[n, 1], 1.0);
            let ones_m_t = Tensor::full(&[n, dim], 1.0);
            let mut b = Bindings::new()
                .bind("y", &yb)
                .bind("ones_s", &ones_s_t)
                .bind("ones_m", &ones_m_t);
            mask.net.bind(&mut b);
            disc.bind(&mut b);
            let m_loss = forward_scalar(&mut mg, &b, epoch)?;
            let grads = mg.backward().map_err(|e| diverged(epoch, e))?;
            drop(b);
            mask.opt.step(&mut mask.net, &grads)?;

            d_total += d_loss * n as f64;
            m_total += m_loss * n as f64;
        }
        let count = mixtures.len() as f64;
        history.push(AmEpoch {
            disc_loss: d_total / count,
            mask_loss: m_total / count,
        });
    }
    disc.refresh_power()?;
    Ok(AmModel {
        mask,
        disc,
        history,
    })
}

fn forward_scalar(g: &mut Graph, b: &Bindings, epoch: usize) -> Result<f64> {
    let v = g
        .forward(b)
        .map_err(|e| diverged(epoch, e))?
        .item()
        .expect("scalar loss");
    if !v.is_finite() {
        return Err(Error::Divergence(format!(
            "epoch {epoch}: adversarial loss {v}"
        )));
    }
    Ok(v)
}

fn diverged(epoch: usize, e: Error) -> Error {
    crate::models::diverged(epoch, e)
}
