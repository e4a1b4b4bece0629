//! Comparison separators behind one fit/separate interface.

mod am;
mod nmf;
mod supervised;

pub use am::{
    am_train, discriminator_loss, magnitude_prior, mask_loss, AmConfig, AmEpoch, AmModel,
};
pub use nmf::{
    nmf_objective, nmf_project, nmf_separate, nmf_train_bases, update_activations, update_bases,
    NmfConfig, NmfModel, NmfSeparation,
};
pub use supervised::{supervised_train, SupervisedConfig};

use crate::error::{Error, Result};
use crate::models::{mask_apply, MaskModel};
use crate::signal::SeparationDataset;
use crate::tensor::Tensor;

/// Per-mixture estimates of both sources, with the masks when the method
/// is a masking method.
#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    pub b: Vec<Tensor>,
    pub x: Vec<Tensor>,
    pub masks: Option<Vec<Tensor>>,
}

impl Separation {
    pub fn from_masks(ys: &[&Tensor], masks: Vec<Tensor>) -> Result<Self> {
        let (b, x) = ys
            .iter()
            .zip(&masks)
            .map(|(y, m)| mask_apply(y, m))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Separation {
            b,
            x,
            masks: Some(masks),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub trait Separator {
    fn name(&self) -> &str;
    /// Trains on the observed samples and training mixtures of `ds`.
    fn fit(&mut self, ds: &SeparationDataset) -> Result<()>;
    fn separate(&self, ys: &[&Tensor]) -> Result<Separation>;
}

fn unfitted(name: &str) -> Error {
    Error::InvalidArgument(format!("{name} separator used before fit"))
}

/// Both estimates are the mixture itself.
#[derive(Clone, Debug, Default)]
pub struct ConstSeparator;

pub fn const_estimate(y: &Tensor) -> (Tensor, Tensor) {
    (y.clone(), y.clone())
}

impl Separator for ConstSeparator {
    fn name(&self) -> &str {
        "const"
    }

    fn fit(&mut self, _ds: &SeparationDataset) -> Result<()> {
        Ok(())
    }

    fn separate(&self, ys: &[&Tensor]) -> Result<Separation> {
        let (b, x) = ys.iter().map(|y| const_estimate(y)).unzip();
        Ok(Separation { b, x, masks: None })
    }
}

/// A trained mask network used as a separator.
#[derive(Clone, Debug)]
pub struct MaskSeparator {
    pub name: String,
    pub model: MaskModel,
}

impl Separator for MaskSeparator {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit(&mut self, _ds: &SeparationDataset) -> Result<()> {
        Ok(())
    }

    fn separate(&self, ys: &[&Tensor]) -> Result<Separation> {
        Separation::from_masks(ys, self.model.masks(ys)?)
    }
}

#[derive(Clone, Debug)]
pub struct NmfSeparator {
    pub config: NmfConfig,
    pub model: Option<NmfModel>,
}

impl NmfSeparator {
    pub fn new(config: NmfConfig) -> Self {
        NmfSeparator {
            config,
            model: None,
        }
    }
}

impl Separator for NmfSeparator {
    fn name(&self) -> &str {
        "nmf"
    }

    fn fit(&mut self, ds: &SeparationDataset) -> Result<()> {
        let flat = |ts: &[&Tensor]| -> Result<Vec<Tensor>> {
            ts.iter().map(|t| t.reshape(&[t.len()])).collect()
        };
        let bs = flat(&ds.observed_refs())?;
        let ys = flat(&ds.mixture_refs())?;
        self.model = Some(NmfModel::fit(
            &bs.iter().collect::<Vec<_>>(),
            &ys.iter().collect::<Vec<_>>(),
            &self.config,
        )?);
        Ok(())
    }

    fn separate(&self, ys: &[&Tensor]) -> Result<Separation> {
        let model = self.model.as_ref().ok_or_else(|| unfitted("nmf"))?;
        let Some(first) = ys.first() else {
            return Ok(Separation {
                b: vec![],
                x: vec![],
                masks: None,
            });
        };
        let shape = first.shape().to_vec();
        let flat: Vec<Tensor> = ys
            .iter()
            .map(|t| t.reshape(&[t.len()]))
            .collect::<Result<_>>()?;
        let sep = model.separate(&flat.iter().collect::<Vec<_>>())?;
        let restore = |v: Vec<Tensor>| -> Result<Vec<Tensor>> {
            v.iter().map(|t| t.reshape(&shape)).collect()
        };
        Ok(Separation {
            b: restore(sep.b)?,
            x: restore(sep.x)?,
            masks: None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct AmSeparator {
    pub config: AmConfig,
    pub model: Option<AmModel>,
}

impl AmSeparator {
    pub fn new(config: AmConfig) -> Self {
        AmSeparator {
            config,
            model: None,
        }
    }
}

impl Separator for AmSeparator {
    fn name(&self) -> &str {
        "am"
    }

    fn fit(&mut self, ds: &SeparationDataset) -> Result<()> {
        self.model = Some(am_train(
            &ds.observed_refs(),
            &ds.mixture_refs(),
            &self.config,
        )?);
        Ok(())
    }

    fn separate(&self, ys: &[&Tensor]) -> Result<Separation> {
        let model = self.model.as_ref().ok_or_else(|| unfitted("am"))?;
        Separation::from_masks(ys, model.mask.masks(ys)?)
    }
}

/// Needs the hidden training truth of a synthetic dataset. Clean samples
/// are the observed set plus the true observed-source components of the
/// training mixtures; they are re-paired with the true unobserved
/// components every epoch.
#[derive(Clone, Debug)]
pub struct SupervisedSeparator {
    pub config: SupervisedConfig,
    pub model: Option<MaskModel>,
    pub loss: Vec<f64>,
}

impl SupervisedSeparator {
    pub fn new(config: SupervisedConfig) -> Self {
        SupervisedSeparator {
            config,
            model: None,
            loss: Vec::new(),
        }
    }
}

impl Separator for SupervisedSeparator {
    fn name(&self) -> &str {
        "supervised"
    }

    fn fit(&mut self, ds: &SeparationDataset) -> Result<()> {
        let truth = ds.train_truth.as_ref().ok_or_else(|| {
            Error::InvalidArgument("supervised baseline needs ground-truth training pairs".into())
        })?;
        let mut bs = ds.observed_refs();
        bs.extend(truth.iter().map(|t| &t.b));
        let xs: Vec<Tensor> = truth.iter().map(|t| t.x.clone()).collect();
        let (model, loss) = supervised_train(&bs, &xs, &self.config)?;
        self.model = Some(model);
        self.loss = loss;
        Ok(())
    }

    fn separate(&self, ys: &[&Tensor]) -> Result<Separation> {
        let model = self.model.as_ref().ok_or_else(|| unfitted("supervised"))?;
        Separation::from_masks(ys, model.masks(ys)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MaskConfig;
    use crate::signal::{gen_synthetic, Family, SynthConfig};

    #[test]
    fn const_passes_mixture_through() {
        let y = Tensor::vector(&[1.0, 2.0]).unwrap();
        let sep = ConstSeparator.separate(&[&y]).unwrap();
        assert_eq!(sep.x[0].data(), &[1.0, 2.0]);
        assert_eq!(sep.b[0], y);
        assert!(sep.masks.is_none());
        let ssim = crate::metrics::ssim(
            &y.reshape(&[1, 2]).unwrap(),
            &y.reshape(&[1, 2]).unwrap(),
            &Default::default(),
        );
        assert!(ssim.map_or(true, |s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn separators_share_one_interface() {
        let ds = gen_synthetic(&SynthConfig::new(Family::Bars, 40, 40, 6, 3)).unwrap();
        let eval: Vec<&Tensor> = ds.eval.iter().map(|t| &t.y).collect();
        let mask = MaskConfig {
            hidden: vec![16],
            ..MaskConfig::default()
        };
        let mut methods: Vec<Box<dyn Separator>> = vec![
            Box::new(ConstSeparator),
            Box::new(NmfSeparator::new(NmfConfig {
                bases: 4,
                train_iters: 20,
                separate_iters: 20,
                ..NmfConfig::default()
            })),
            Box::new(AmSeparator::new(AmConfig {
                mask: mask.clone(),
                disc: crate::models::DiscriminatorConfig {
                    hidden: vec![16, 8],
                    power_iters: 1,
                },
                epochs: 2,
                ..AmConfig::default()
            })),
            Box::new(SupervisedSeparator::new(SupervisedConfig {
                epochs: 2,
                mask,
                seed: 0,
            })),
        ];
        for m in methods.iter_mut() {
            assert!(m.separate(&eval).is_err() || m.name() == "const");
            m.fit(&ds).unwrap();
            let sep = m.separate(&eval).unwrap();
            assert_eq!(sep.len(), eval.len(), "{}", m.name());
            for (t, y) in sep.x.iter().zip(&eval) {
                assert_eq!(t.shape(), y.shape());
                assert!(t.min() >= 0.0);
            }
        }
    }
}
