//! One experiment: load the data, fit the method, separate the evaluation
//! mixtures, score both sources and write everything to a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::baselines::{
    AmSeparator, ConstSeparator, NmfSeparator, Separation, Separator, SupervisedSeparator,
};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetSource, ExperimentConfig, Method};
use crate::latent::{downsample_mean, LatentSeparator, LmModel};
use crate::metrics::{error_series, ConvergenceTrace, MetricReport};
use crate::models::mask_apply;
use crate::nes::{nes_run_observed, write_snapshot, IterationRecord, NesInit, NesState};
use crate::signal::{gen_synthetic, load_idx, save_pgm, DatasetMeta, SeparationDataset};
use crate::tensor::write_egt;
use crate::Tensor;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<SeparationDataset> {
    let ds = match &cfg.dataset {
        DatasetSource::Synthetic(s) => gen_synthetic(s)?,
        DatasetSource::Directory(p) => SeparationDataset::load(p)?,
        DatasetSource::Idx(i) => {
            let test = i.test.as_ref().map(|(a, b)| (a.as_path(), b.as_path()));
            load_idx(&i.train_images, &i.train_labels, test, &i.protocol)?
        }
    };
    ds.validate()?;
    Ok(ds)
}

/// Which source the headline numbers score.
pub fn headline_target(meta: &DatasetMeta) -> &'static str {
    if meta.name == "denoise" {
        "b"
    } else {
        "x"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Headline {
    pub target: String,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub sdr_median: f64,
}

impl Headline {
    fn of(target: &str, r: &MetricReport) -> Self {
        Headline {
            target: target.to_string(),
            psnr: r.psnr_summary.mean,
            ssim: r.ssim_summary.as_ref().map(|s| s.mean),
            sdr_median: r.sdr_summary.median,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NesReport {
    pub history: Vec<IterationRecord>,
    pub convergence: Option<ConvergenceTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    /// Effective configuration in INI form.
    pub config: String,
    pub dataset: DatasetMeta,
    pub n_observed: usize,
    pub n_mixtures: usize,
    pub n_eval: usize,
    pub headline: Headline,
    pub x: MetricReport,
    pub b: MetricReport,
    /// Largest `|b_hat + x_hat - y|` over the evaluation set.
    pub sum_residual: f64,
    pub nes: Option<NesReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timings {
    pub load_s: f64,
    pub fit_s: f64,
    pub separate_s: f64,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub separation: Separation,
    pub timings: Timings,
}

fn lm_working_dataset(ds: &SeparationDataset, shape: Option<[usize; 2]>) -> Result<SeparationDataset> {
    let Some(shape) = shape else {
        return Ok(ds.clone());
    };
    if ds.sample_shape() == shape {
        return Ok(ds.clone());
    }
    let down = |v: &[Tensor]| -> Result<Vec<Tensor>> {
        v.iter().map(|t| downsample_mean(t, shape)).collect()
    };
    let mut meta = ds.meta.clone();
    meta.sample_shape = shape.to_vec();
    Ok(SeparationDataset {
        meta,
        observed_b: down(&ds.observed_b)?,
        mixtures_y: down(&ds.mixtures_y)?,
        eval: Vec::new(),
        train_truth: None,
    })
}

fn fit_lm(cfg: &ExperimentConfig, ds: &SeparationDataset) -> Result<LmModel> {
    let work = lm_working_dataset(ds, cfg.lm_shape)?;
    LmModel::fit(&work.observed_refs(), &work.mixture_refs(), &cfg.lm)
}

fn unobserved_from_masks(ys: &[&Tensor], masks: &[Tensor]) -> Result<Vec<Tensor>> {
    ys.iter().zip(masks).map(|(y, m)| Ok(mask_apply(y, m)?.1)).collect()
}

/// Initial estimates for the training and evaluation mixtures.
fn nes_init(cfg: &ExperimentConfig, ds: &SeparationDataset) -> Result<NesInit> {
    let ys = ds.mixture_refs();
    let eval_ys: Vec<&Tensor> = ds.eval.iter().map(|t| &t.y).collect();
    let masks_of = |f: &dyn Fn(&[&Tensor]) -> Result<Vec<Tensor>>| -> Result<NesInit> {
        let train = unobserved_from_masks(&ys, &f(&ys)?)?;
        let eval = if eval_ys.is_empty() {
            None
        } else {
            Some(unobserved_from_masks(&eval_ys, &f(&eval_ys)?)?)
        };
        Ok(NesInit::External { train, eval })
    };
    match cfg.method {
        Method::AmNes => {
            let mut am = AmSeparator::new(cfg.am.clone());
            am.fit(ds)?;
            let model = am.model.expect("fitted");
            masks_of(&|v| model.mask.masks(v))
        }
        Method::LmmNes => {
            let model = fit_lm(cfg, ds)?;
            masks_of(&|v| model.masks(v))
        }
        _ => Ok(NesInit::Constant),
    }
}

fn separator(cfg: &ExperimentConfig) -> Box<dyn Separator> {
    match cfg.method {
        Method::Const => Box::new(ConstSeparator),
        Method::Nmf => Box::new(NmfSeparator::new(cfg.nmf.clone())),
        Method::Am => Box::new(AmSeparator::new(cfg.am.clone())),
        Method::Lm | Method::Lmm => {
            Box::new(LatentSeparator::new(cfg.lm.clone(), cfg.method == Method::Lmm))
        }
        Method::Supervised => Box::new(SupervisedSeparator::new(cfg.supervised.clone())),
        Method::Nes | Method::AmNes | Method::LmmNes => unreachable!("iterative methods run NES"),
    }
}

/// Runs the configured method; NES snapshots go to `snapshots` when given.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    ds: &SeparationDataset,
    snapshots: Option<&Path>,
) -> Result<RunOutcome> {
    if ds.eval.is_empty() {
        return Err(Error::Config("the dataset has no evaluation triples".into()));
    }
    let eval_ys: Vec<&Tensor> = ds.eval.iter().map(|t| &t.y).collect();
    let started = Instant::now();
    let (separation, nes, fit_s, separate_s) = if cfg.method.is_iterative() {
        let init = nes_init(cfg, ds)?;
        let mut nes_cfg = cfg.nes.clone();
        nes_cfg.record_eval_masks = true;
        let state = nes_run_observed(ds, &nes_cfg, init, &mut |step| match snapshots {
            Some(dir) => write_snapshot(dir, step),
            None => Ok(()),
        })?;
        let fit_s = started.elapsed().as_secs_f64();
        let t = Instant::now();
        let sep = Separation::from_masks(&eval_ys, state.model.masks(&eval_ys)?)?;
        let report = nes_report(ds, &state)?;
        (sep, Some(report), fit_s, t.elapsed().as_secs_f64())
    } else {
        let mut method = separator(cfg);
        let lm_work;
        let fit_on = if matches!(cfg.method, Method::Lm | Method::Lmm) {
            lm_work = lm_working_dataset(ds, cfg.lm_shape)?;
            &lm_work
        } else {
            ds
        };
        method.fit(fit_on)?;
        let fit_s = started.elapsed().as_secs_f64();
        let t = Instant::now();
        let sep = method.separate(&eval_ys)?;
        (sep, None, fit_s, t.elapsed().as_secs_f64())
    };

    let xs: Vec<&Tensor> = ds.eval.iter().map(|t| &t.x).collect();
    let bs: Vec<&Tensor> = ds.eval.iter().map(|t| &t.b).collect();
    let x = MetricReport::evaluate(&separation.x, &xs)?;
    let b = MetricReport::evaluate(&separation.b, &bs)?;
    let mut sum_residual = 0.0f64;
    for ((bh, xh), y) in separation.b.iter().zip(&separation.x).zip(&eval_ys) {
        sum_residual = sum_residual.max(bh.add(xh)?.max_abs_diff(y)?);
    }
    let target = headline_target(&ds.meta);
    let headline = Headline::of(target, if target == "b" { &b } else { &x });
    let report = RunReport {
        method: cfg.method.to_string(),
        seed: cfg.seed,
        config: cfg.to_ini().to_string(),
        dataset: ds.meta.clone(),
        n_observed: ds.observed_b.len(),
        n_mixtures: ds.mixtures_y.len(),
        n_eval: ds.eval.len(),
        headline,
        x,
        b,
        sum_residual,
        nes,
    };
    Ok(RunOutcome {
        report,
        separation,
        timings: Timings {
            load_s: 0.0,
            fit_s,
            separate_s,
        },
    })
}

fn nes_report(ds: &SeparationDataset, state: &NesState) -> Result<NesReport> {
    let convergence = match &state.eval_init {
        Some(x0) if !state.eval_masks.is_empty() => {
            Some(error_series(&state.eval_masks, &ds.eval, x0)?)
        }
        _ => None,
    };
    Ok(NesReport {
        history: state.history.clone(),
        convergence,
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn stacked(items: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = items.iter().collect();
    let flat = Tensor::stack_rows(&refs)?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    flat.reshape(&shape)
}

/// `report.json`, `metrics_x.csv`, `metrics_b.csv`, `trace.csv` (iterative
/// methods), `timings.json`, stacked estimates and image dumps.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    ds: &SeparationDataset,
    outcome: &RunOutcome,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let r = &outcome.report;
    write_file(&dir.join("report.json"), serde_json::to_vec_pretty(r)?)?;
    write_file(&dir.join("config.ini"), &r.config)?;
    write_file(&dir.join("metrics_x.csv"), r.x.to_csv())?;
    write_file(&dir.join("metrics_b.csv"), r.b.to_csv())?;
    if let Some(trace) = r.nes.as_ref().and_then(|n| n.convergence.as_ref()) {
        write_file(&dir.join("trace.csv"), trace.to_csv())?;
    }
    write_file(&dir.join("timings.json"), serde_json::to_vec_pretty(&outcome.timings)?)?;
    write_egt(&stacked(&outcome.separation.x)?, dir.join("x_hat.egt"))?;
    write_egt(&stacked(&outcome.separation.b)?, dir.join("b_hat.egt"))?;
    if cfg.dump > 0 && ds.sample_shape().len() == 2 {
        let img = dir.join("images");
        fs::create_dir_all(&img).map_err(|e| Error::io(&img, e))?;
        let sep = &outcome.separation;
        // mixtures span [0, 2]; everything is clipped to the PGM range
        let hi = ds.meta.value_range[1].max(1.0);
        let save = |t: &Tensor, scale: f64, name: String| -> Result<()> {
            save_pgm(&t.map(|v| (v * scale).clamp(0.0, 1.0))?, img.join(name))
        };
        for (i, t) in ds.eval.iter().enumerate().take(cfg.dump) {
            save(&t.y, 1.0 / hi, format!("{i:03}_y.pgm"))?;
            save(&t.x, 1.0, format!("{i:03}_x.pgm"))?;
            save(&t.b, 1.0, format!("{i:03}_b.pgm"))?;
            save(&sep.x[i], 1.0, format!("{i:03}_x_hat.pgm"))?;
            save(&sep.b[i], 1.0, format!("{i:03}_b_hat.pgm"))?;
        }
    }
    Ok(())
}

/// Loads, runs and writes; on failure leaves `failed.json` in the run
/// directory and returns the error.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    let result = (|| -> Result<RunOutcome> {
        let t = Instant::now();
        let ds = load_dataset(cfg)?;
        let load_s = t.elapsed().as_secs_f64();
        let snapshots = cfg.method.is_iterative().then(|| dir.join("snapshots"));
        let mut outcome = run_experiment(cfg, &ds, snapshots.as_deref())?;
        outcome.timings.load_s = load_s;
        write_outputs(dir, cfg, &ds, &outcome)?;
        Ok(outcome)
    })();
    if let Err(e) = &result {
        let _ = fs::create_dir_all(dir);
        let marker = serde_json::json!({
            "method": cfg.method.name(),
            "seed": cfg.seed,
            "error": e.to_string(),
        });
        let _ = fs::write(dir.join("failed.json"), serde_json::to_vec_pretty(&marker).unwrap_or_default());
    } else {
        let _ = fs::remove_file(dir.join("failed.json"));
    }
    result
}

/// The run directory: the configured one, else `runs/<method>-<seed>`.
pub fn default_run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| {
        let method = cfg.method.name().replace('+', "-");
        PathBuf::from("runs").join(format!("{method}-{}", cfg.seed))
    })
}
