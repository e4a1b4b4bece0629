//! Mask trained on true source pairs: the upper bound for masking methods.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{MaskConfig, MaskModel};
use crate::nes::synthesize_pairs;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub mask: MaskConfig,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 25,
            mask: MaskConfig::default(),
            seed: 0,
        }
    }
}

/// Trains on fresh mixtures `b + x` of true samples, re-pairing every
/// `b` with a random `x` at each epoch. Returns the model and the
/// per-epoch loss.
pub fn supervised_train(
    bs: &[&Tensor],
    xs: &[Tensor],
    config: &SupervisedConfig,
) -> Result<(MaskModel, Vec<f64>)> {
    if config.epochs == 0 || config.mask.batch_size == 0 {
        return Err(Error::Config(
            "supervised epochs and batch size must be positive".into(),
        ));
    }
    let shape = bs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no clean samples".into()))?
        .shape()
        .to_vec();
    let mut model = MaskModel::init(
        &shape,
        &config.mask,
        rng::stream(config.seed, "sup-mask").random(),
    )?;
    let mut pairing = rng::stream(config.seed, "sup-pairs");
    let mut shuffle = rng::stream(config.seed, "sup-shuffle");
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let pairs = synthesize_pairs(bs, xs, &mut pairing)?;
        let refs: Vec<(&Tensor, &Tensor)> = pairs.iter().map(|p| (&p.y, bs[p.b_index])).collect();
        trace.extend(model.train_l1(&refs, 1, config.mask.batch_size, &mut shuffle)?);
    }
    Ok((model, trace))
}
