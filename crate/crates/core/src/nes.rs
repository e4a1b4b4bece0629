//! Neural Egg Separation: iterate between training a mask on synthetic
//! mixtures `b + x^t` and re-estimating `x` on the real mixtures.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{lambda_from_masks, median_mixed_abs_error, psnr, LambdaEstimate};
use crate::models::{mask_apply, MaskConfig, MaskModel};
use crate::rng::{self, Rng};
use crate::signal::{SeparationDataset, Triple};
use crate::tensor::{write_egt, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NesConfig {
    pub iterations: usize,
    pub epochs: usize,
    pub mask: MaskConfig,
    /// Fraction `c` of the mixture used as the constant initial estimate.
    pub init_fraction: f64,
    /// Redraw the `x^t` pairing every epoch instead of once per iteration.
    pub resample_each_epoch: bool,
    /// Continue from the previous iteration's mask instead of a fresh one.
    pub warm_start: bool,
    /// Keep per-iteration masks on the evaluation mixtures in the history.
    pub record_eval_masks: bool,
    pub seed: u64,
}

impl Default for NesConfig {
    fn default() -> Self {
        NesConfig {
            iterations: 10,
            epochs: 25,
            mask: MaskConfig::default(),
            init_fraction: 0.5,
            resample_each_epoch: false,
            warm_start: false,
            record_eval_masks: true,
            seed: 0,
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "NES needs at least one iteration and one epoch".into(),
            ));
        }
        if !(self.init_fraction > 0.0 && self.init_fraction < 1.0) {
            return Err(Error::Config(format!(
                "init fraction {} must lie in (0, 1)",
                self.init_fraction
            )));
        }
        if self.mask.batch_size == 0 || !(self.mask.lr > 0.0) {
            return Err(Error::Config(
                "mask batch size and lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Initial unobserved-source estimates.
#[derive(Clone, Debug, PartialEq)]
pub enum NesInit {
    Constant,
    /// Estimates for every training mixture and, optionally, for every
    /// evaluation mixture (needed for the generalization diagnostics).
    External {
        train: Vec<Tensor>,
        eval: Option<Vec<Tensor>>,
    },
}

/// `x^0 = c * y`.
pub fn nes_init_constant(ys: &[&Tensor], c: f64) -> Result<Vec<Tensor>> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidArgument(format!(
            "init fraction {c} outside [0, 1)"
        )));
    }
    if c == 0.0 {
        eprintln!("warning: init fraction 0 gives all-zero initial estimates");
    }
    ys.iter().map(|y| y.scale(c)).collect()
}

/// A synthetic mixture `b + x^t` with the indices it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub y: Tensor,
    pub b_index: usize,
    pub x_index: usize,
}

/// One synthetic mixture per observed `b`, each with an estimate drawn
/// uniformly with replacement.
pub fn synthesize_pairs(
    bs: &[&Tensor],
    xs: &[Tensor],
    rng: &mut Rng,
) -> Result<Vec<SyntheticPair>> {
    if bs.is_empty() || xs.is_empty() {
        return Err(Error::InvalidArgument(
            "synthesis needs observed samples and estimates".into(),
        ));
    }
    bs.iter()
        .enumerate()
        .map(|(i, b)| {
            let j = rng.random_range(0..xs.len());
            Ok(SyntheticPair {
                y: b.add(&xs[j])?,
                b_index: i,
                x_index: j,
            })
        })
        .collect()
}

fn mask_seed(seed: u64, iteration: usize) -> u64 {
    rng::stream(seed, &format!("nes-mask-{iteration}")).random()
}

/// Trains a freshly initialized mask on `(y^t, b)` pairs for the configured
/// number of epochs. Returns the model and its per-epoch loss.
pub fn nes_iteration(
    pairs: &[(&Tensor, &Tensor)],
    config: &NesConfig,
    iteration: usize,
) -> Result<(MaskModel, Vec<f64>)> {
    config.validate()?;
    let shape = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training pairs".into()))?
        .0
        .shape()
        .to_vec();
    let mut model = MaskModel::init(&shape, &config.mask, mask_seed(config.seed, iteration))?;
    let mut r = rng::stream(config.seed, &format!("nes-shuffle-{iteration}"));
    let trace = model.train_l1(pairs, config.epochs, config.mask.batch_size, &mut r)?;
    Ok((model, trace))
}

/// `x = y - y * m(y)` for every mixture.
pub fn nes_reestimate(model: &MaskModel, ys: &[&Tensor]) -> Result<Vec<Tensor>> {
    let masks = model.masks(ys)?;
    reestimate_from_masks(ys, &masks)
}

fn reestimate_from_masks(ys: &[&Tensor], masks: &[Tensor]) -> Result<Vec<Tensor>> {
    ys.iter()
        .zip(masks)
        .map(|(y, m)| {
            let (_, x) = mask_apply(y, m)?;
            debug_assert!(x.min() >= 0.0);
            Ok(x)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub psnr_x: f64,
    pub psnr_b: f64,
    /// Median `|b - m(y) y|` over active elements.
    pub median_abs_error: f64,
    /// Present when estimates for the evaluation mixtures are available.
    pub lambda: Option<LambdaEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: Vec<f64>,
    pub eval: Option<EvalPoint>,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct NesState {
    pub iteration: usize,
    /// Current estimates, one per training mixture.
    pub estimates: Vec<Tensor>,
    pub model: MaskModel,
    pub history: Vec<IterationRecord>,
    /// Initial estimates for the evaluation mixtures, when known.
    pub eval_init: Option<Vec<Tensor>>,
    /// `eval_masks[t-1][i]` is `m^t(y_i)` on evaluation mixture `i`.
    pub eval_masks: Vec<Vec<Tensor>>,
}

/// What the observer sees after each iteration.
pub struct NesStep<'a> {
    pub iteration: usize,
    pub model: &'a MaskModel,
    pub estimates: &'a [Tensor],
    pub record: &'a IterationRecord,
}

pub fn nes_run(ds: &SeparationDataset, config: &NesConfig, init: NesInit) -> Result<NesState> {
    nes_run_observed(ds, config, init, &mut |_| Ok(()))
}

/// [`nes_run`] with a callback after every iteration.
pub fn nes_run_observed(
    ds: &SeparationDataset,
    config: &NesConfig,
    init: NesInit,
    observer: &mut dyn FnMut(&NesStep<'_>) -> Result<()>,
) -> Result<NesState> {
    config.validate()?;
    ds.validate()?;
    let ys = ds.mixture_refs();
    let bs = ds.observed_refs();
    let eval_ys: Vec<&Tensor> = ds.eval.iter().map(|t| &t.y).collect();
    let (mut estimates, mut eval_est) = match init {
        NesInit::Constant => (
            nes_init_constant(&ys, config.init_fraction)?,
            Some(nes_init_constant(&eval_ys, config.init_fraction)?),
        ),
        NesInit::External { train, eval } => {
            if train.len() != ys.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} initial estimates for {} mixtures",
                    train.len(),
                    ys.len()
                )));
            }
            if eval.as_ref().is_some_and(|e| e.len() != ds.eval.len()) {
                return Err(Error::InvalidArgument(
                    "evaluation estimates count mismatch".into(),
                ));
            }
            (train, eval)
        }
    };
    let eval_init = eval_est.clone();
    let mut history = Vec::with_capacity(config.iterations);
    let mut eval_masks = Vec::new();
    let mut model: Option<MaskModel> = None;
    let mut pair_rng = rng::stream(config.seed, "nes-pairs");

    for t in 1..=config.iterations {
        let mut current = match (config.warm_start, model.take()) {
            (true, Some(m)) => m,
            _ => MaskModel::init(ds.sample_shape(), &config.mask, mask_seed(config.seed, t))?,
        };
        let mut shuffle = rng::stream(config.seed, &format!("nes-shuffle-{t}"));
        let loss = if config.resample_each_epoch {
            let mut trace = Vec::with_capacity(config.epochs);
            for _ in 0..config.epochs {
                let pairs = synthesize_pairs(&bs, &estimates, &mut pair_rng)?;
                let refs: Vec<(&Tensor, &Tensor)> =
                    pairs.iter().map(|p| (&p.y, bs[p.b_index])).collect();
                trace.extend(current.train_l1(&refs, 1, config.mask.batch_size, &mut shuffle)?);
            }
            trace
        } else {
            let pairs = synthesize_pairs(&bs, &estimates, &mut pair_rng)?;
            let refs: Vec<(&Tensor, &Tensor)> =
                pairs.iter().map(|p| (&p.y, bs[p.b_index])).collect();
            current.train_l1(&refs, config.epochs, config.mask.batch_size, &mut shuffle)?
        };
        estimates = nes_reestimate(&current, &ys)?;

        let eval = if ds.eval.is_empty() {
            None
        } else {
            let masks = current.masks(&eval_ys)?;
            let point = eval_point(&ds.eval, &masks, eval_est.as_deref(), &current)?;
            eval_est = Some(reestimate_from_masks(&eval_ys, &masks)?);
            if config.record_eval_masks {
                eval_masks.push(masks);
            }
            Some(point)
        };
        let record = IterationRecord {
            iteration: t,
            loss,
            eval,
        };
        observer(&NesStep {
            iteration: t,
            model: &current,
            estimates: &estimates,
            record: &record,
        })?;
        history.push(record);
        model = Some(current);
    }
    Ok(NesState {
        iteration: config.iterations,
        estimates,
        model: model.expect("at least one iteration"),
        history,
        eval_init,
        eval_masks,
    })
}

fn eval_point(
    triples: &[Triple],
    masks: &[Tensor],
    prev_estimates: Option<&[Tensor]>,
    model: &MaskModel,
) -> Result<EvalPoint> {
    let mut psnr_x = 0.0;
    let mut psnr_b = 0.0;
    let mut errors = Vec::with_capacity(triples.len());
    for (t, m) in triples.iter().zip(masks) {
        let (b_hat, x_hat) = mask_apply(&t.y, m)?;
        psnr_x += psnr(&x_hat, &t.x, 1.0)?;
        psnr_b += psnr(&b_hat, &t.b, 1.0)?;
        errors.push(t.b.sub(&b_hat)?.map(f64::abs)?);
    }
    let n = triples.len() as f64;
    let lambda = match prev_estimates {
        Some(prev) => {
            let synthetic: Vec<Tensor> = triples
                .iter()
                .zip(prev)
                .map(|(t, x)| t.b.add(x))
                .collect::<Result<_>>()?;
            let on_synth = model.masks(&synthetic.iter().collect::<Vec<_>>())?;
            lambda_from_masks(triples, &synthetic, masks, &on_synth).ok()
        }
        None => None,
    };
    Ok(EvalPoint {
        psnr_x: psnr_x / n,
        psnr_b: psnr_b / n,
        median_abs_error: median_mixed_abs_error(&errors, triples),
        lambda,
    })
}

/// Writes `x_estimates.egt` (stacked) and `record.json` for one iteration
/// into `dir/iter_{t:02}`.
pub fn write_snapshot(dir: impl AsRef<Path>, step: &NesStep<'_>) -> Result<()> {
    let dir = dir.as_ref().join(format!("iter_{:02}", step.iteration));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let refs: Vec<&Tensor> = step.estimates.iter().collect();
    write_egt(&Tensor::stack_rows(&refs)?, dir.join("x_estimates.egt"))?;
    let path = dir.join("record.json");
    fs::write(&path, serde_json::to_vec_pretty(step.record)?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{gen_synthetic, DatasetMeta, Family, SynthConfig};

    fn t(v: &[f64]) -> Tensor {
        Tensor::vector(v).unwrap()
    }

    #[test]
    fn constant_init() {
        let y = t(&[2.0, 4.0]);
        let x = nes_init_constant(&[&y, &y], 0.5).unwrap();
        assert_eq!(x.len(), 2);
        assert_eq!(x[0].data(), &[1.0, 2.0]);
        assert!(nes_init_constant(&[&y], 0.0).unwrap()[0].max() == 0.0);
        assert!(nes_init_constant(&[&y], 1.0).is_err());
    }

    #[test]
    fn pairs_cover_every_b_and_are_exact() {
        let bs: Vec<Tensor> = (0..7).map(|i| t(&[i as f64 * 0.125, 0.375])).collect();
        let xs: Vec<Tensor> = (0..3).map(|i| t(&[0.0625 * i as f64, 0.25])).collect();
        let brefs: Vec<&Tensor> = bs.iter().collect();
        let pairs = synthesize_pairs(&brefs, &xs, &mut rng::stream(1, "p")).unwrap();
        assert_eq!(pairs.len(), bs.len());
        for p in &pairs {
            assert_eq!(p.y.sub(&bs[p.b_index]).unwrap(), xs[p.x_index]);
        }
        let again = synthesize_pairs(&brefs, &xs, &mut rng::stream(1, "p")).unwrap();
        assert_eq!(pairs, again);
        assert!(synthesize_pairs(&brefs, &[t(&[1.0])], &mut rng::stream(1, "p")).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = NesConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        c = NesConfig::default();
        c.init_fraction = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn reestimate_identity() {
        let mut cfg = MaskConfig::default();
        cfg.hidden = vec![3];
        let model = MaskModel::init(&[4], &cfg, 2).unwrap();
        let ys = [t(&[0.5, 1.0, 1.5, 2.0]), t(&[0.1, 0.0, 1.9, 0.7])];
        let refs: Vec<&Tensor> = ys.iter().collect();
        let xs = nes_reestimate(&model, &refs).unwrap();
        for ((x, y), m) in xs.iter().zip(&ys).zip(model.masks(&refs).unwrap()) {
            let b = y.mul(&m).unwrap();
            for i in 0..4 {
                assert!(x.data()[i] >= 0.0 && x.data()[i] <= y.data()[i]);
                assert_eq!(y.data()[i] - x.data()[i] + x.data()[i], y.data()[i]);
                assert!((x.data()[i] + b.data()[i] - y.data()[i]).abs() < 1e-15);
            }
        }
    }

    fn tiny_bars(seed: u64) -> SeparationDataset {
        gen_synthetic(&SynthConfig::new(Family::Bars, 120, 120, 30, seed)).unwrap()
    }

    fn tiny_config() -> NesConfig {
        NesConfig {
            iterations: 3,
            epochs: 5,
            mask: MaskConfig {
                hidden: vec![64],
                lr: 0.003,
                batch_size: 16,
            },
            seed: 5,
            ..NesConfig::default()
        }
    }

    #[test]
    fn run_is_deterministic_and_keeps_bounds() {
        let ds = tiny_bars(1);
        let cfg = tiny_config();
        let mut seen = 0;
        let a = nes_run_observed(&ds, &cfg, NesInit::Constant, &mut |step| {
            seen += 1;
            for (x, y) in step.estimates.iter().zip(&ds.mixtures_y) {
                assert!(x.min() >= 0.0);
                assert!(x.data().iter().zip(y.data()).all(|(x, y)| x <= y));
            }
            assert!(step.record.loss.iter().all(|l| l.is_finite()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 3);
        let b = nes_run(&ds, &cfg, NesInit::Constant).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.eval_masks.len(), 3);
        assert!(a
            .history
            .iter()
            .all(|r| r.eval.as_ref().unwrap().lambda.is_some()));
    }

    #[test]
    fn flags_change_the_run() {
        let ds = tiny_bars(2);
        let base = nes_run(&ds, &tiny_config(), NesInit::Constant).unwrap();
        let mut warm = tiny_config();
        warm.warm_start = true;
        let w = nes_run(&ds, &warm, NesInit::Constant).unwrap();
        assert_eq!(w.history[0], base.history[0]);
        assert_ne!(w.history[2], base.history[2]);
        let mut resample = tiny_config();
        resample.resample_each_epoch = true;
        let r = nes_run(&ds, &resample, NesInit::Constant).unwrap();
        assert_eq!(r.history[0].loss.len(), 5);
    }

    #[test]
    fn external_init_count_is_checked() {
        let ds = tiny_bars(3);
        let init = NesInit::External {
            train: vec![Tensor::zeros(&[16, 16])],
            eval: None,
        };
        assert!(nes_run(&ds, &tiny_config(), init).is_err());
    }

    #[test]
    fn snapshot_files() {
        let ds = tiny_bars(4);
        let mut cfg = tiny_config();
        cfg.iterations = 1;
        let dir = tempfile::tempdir().unwrap();
        nes_run_observed(&ds, &cfg, NesInit::Constant, &mut |s| {
            write_snapshot(dir.path(), s)
        })
        .unwrap();
        let x = crate::tensor::read_egt(dir.path().join("iter_01/x_estimates.egt")).unwrap();
        assert_eq!(x.shape(), &[120, 256]);
        let rec: IterationRecord =
            serde_json::from_slice(&fs::read(dir.path().join("iter_01/record.json")).unwrap())
                .unwrap();
        assert_eq!(rec.iteration, 1);
    }

    /// `b = x` on every mixture, so `b / y` is the constant 1/2 and a mask
    /// network with all-zero parameters (output exactly 1/2) generalizes
    /// perfectly: one re-estimation gives the exact `x`.
    #[test]
    fn perfect_generalization_gives_zero_error() {
        let shape = [1usize, 4];
        let xs: Vec<Tensor> = (1..=6)
            .map(|k| Tensor::from_fn(&shape, |i| (k + i) as f64 / 16.0).unwrap())
            .collect();
        let bs = xs.clone();
        let triples: Vec<Triple> = xs
            .iter()
            .zip(&bs)
            .map(|(x, b)| Triple::from_sources(x.clone(), b.clone()).unwrap())
            .collect();
        let ds = SeparationDataset {
            meta: DatasetMeta {
                name: "quarter".into(),
                sample_shape: shape.to_vec(),
                value_range: [0.0, 2.0],
                seed: 0,
            },
            observed_b: bs.clone(),
            mixtures_y: triples.iter().map(|t| t.y.clone()).collect(),
            eval: triples.clone(),
            train_truth: Some(triples.clone()),
        };
        let mut model = MaskModel::init(
            &shape,
            &MaskConfig {
                hidden: vec![2],
                ..MaskConfig::default()
            },
            0,
        )
        .unwrap();
        for l in 0..model.net.num_layers() {
            model
                .net
                .weight_mut(l)
                .data_mut()
                .iter_mut()
                .for_each(|w| *w = 0.0);
        }
        let m = model.masks(&ds.mixture_refs()).unwrap();
        assert!(m.iter().all(|m| m.data().iter().all(|&v| v == 0.5)));
        let x1 = nes_reestimate(&model, &ds.mixture_refs()).unwrap();
        for (x1, t) in x1.iter().zip(&triples) {
            assert_eq!(x1, &t.x);
        }
    }
}
