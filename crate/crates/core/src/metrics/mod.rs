//! Separation quality metrics and the convergence diagnostics of the NES
//! error recurrence.

mod convergence;

pub use convergence::{
    error_series, estimate_lambda, lambda_from_masks, median_active_abs_error,
    median_mixed_abs_error, optimal_mask, ConvergenceTrace, IterationError, LambdaEstimate,
    ACTIVE_THRESHOLD,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magnitude of the dB cap applied to every ratio metric.
pub const DB_CAP: f64 = 100.0;

fn capped_db(ratio: f64) -> f64 {
    if ratio.is_nan() {
        return -DB_CAP;
    }
    (10.0 * ratio.log10()).clamp(-DB_CAP, DB_CAP)
}

pub fn psnr(est: &Tensor, gt: &Tensor, peak: f64) -> Result<f64> {
    est.check_same_shape("psnr", gt)?;
    let mse = est
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / gt.len() as f64;
    if mse == 0.0 {
        return Ok(DB_CAP);
    }
    Ok(capped_db(peak * peak / mse))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

/// Mean SSIM over every full window position, with a normalized Gaussian
/// window and biased (weighted) local moments.
pub fn ssim(est: &Tensor, gt: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    est.check_same_shape("ssim", gt)?;
    let w = cfg.window;
    if est.rank() != 2 || est.shape()[0] < w || est.shape()[1] < w {
        return Err(Error::InvalidArgument(format!(
            "ssim needs a 2-D input of at least {w}x{w}, got {:?}",
            est.shape()
        )));
    }
    let half = (w / 2) as f64;
    let g1: Vec<f64> = (0..w)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * cfg.sigma * cfg.sigma)).exp())
        .collect();
    let total: f64 = g1.iter().sum::<f64>().powi(2);
    let kernel: Vec<f64> = (0..w * w).map(|k| g1[k / w] * g1[k % w] / total).collect();
    let c1 = (cfg.k1 * cfg.range).powi(2);
    let c2 = (cfg.k2 * cfg.range).powi(2);
    let (rows, cols) = (est.shape()[0], est.shape()[1]);
    let (a, b) = (est.data(), gt.data());
    let mut acc = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - w {
        for c0 in 0..=cols - w {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..w {
                for j in 0..w {
                    let k = kernel[i * w + j];
                    let p = (r0 + i) * cols + c0 + j;
                    ma += k * a[p];
                    mb += k * b[p];
                    saa += k * a[p] * a[p];
                    sbb += k * b[p] * b[p];
                    sab += k * a[p] * b[p];
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn sdr(est: &Tensor, gt: &Tensor) -> Result<f64> {
    est.check_same_shape("sdr", gt)?;
    let signal = energy(gt.data());
    if signal == 0.0 {
        return Err(Error::InvalidArgument("sdr reference is all zero".into()));
    }
    let err: f64 = est
        .data()
        .iter()
        .zip(gt.data())
        .map(|(e, g)| (g - e) * (g - e))
        .sum();
    if err == 0.0 {
        return Ok(DB_CAP);
    }
    Ok(capped_db(signal / err))
}

pub fn si_sdr(est: &Tensor, gt: &Tensor) -> Result<f64> {
    est.check_same_shape("si_sdr", gt)?;
    let signal = energy(gt.data());
    if signal == 0.0 {
        return Err(Error::InvalidArgument(
            "si_sdr reference is all zero".into(),
        ));
    }
    let dot: f64 = est.data().iter().zip(gt.data()).map(|(e, g)| e * g).sum();
    let alpha = dot / signal;
    let target: Vec<f64> = gt.data().iter().map(|g| alpha * g).collect();
    let noise: f64 = est
        .data()
        .iter()
        .zip(&target)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    let target_energy = energy(&target);
    if noise == 0.0 {
        return Ok(if target_energy == 0.0 {
            -DB_CAP
        } else {
            DB_CAP
        });
    }
    Ok(capped_db(target_energy / noise))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median with the two middle values averaged for even lengths.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Linear-interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Self {
        Summary {
            mean: mean(v),
            median: median(v),
        }
    }
}

/// Per-sample scores of one set of estimates against references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    /// Empty when the samples are too small for the SSIM window.
    pub ssim: Vec<f64>,
    pub sdr: Vec<f64>,
    pub si_sdr: Vec<f64>,
    pub psnr_summary: Summary,
    pub ssim_summary: Option<Summary>,
    pub sdr_summary: Summary,
    pub si_sdr_summary: Summary,
}

impl MetricReport {
    pub fn evaluate(estimates: &[Tensor], references: &[&Tensor]) -> Result<Self> {
        if estimates.len() != references.len() || estimates.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} estimates for {} references",
                estimates.len(),
                references.len()
            )));
        }
        let cfg = SsimConfig::default();
        let with_ssim =
            references[0].rank() == 2 && references[0].shape().iter().all(|&d| d >= cfg.window);
        let mut r = MetricReport {
            psnr: Vec::new(),
            ssim: Vec::new(),
            sdr: Vec::new(),
            si_sdr: Vec::new(),
            psnr_summary: Summary {
                mean: 0.0,
                median: 0.0,
            },
            ssim_summary: None,
            sdr_summary: Summary {
                mean: 0.0,
                median: 0.0,
            },
            si_sdr_summary: Summary {
                mean: 0.0,
                median: 0.0,
            },
        };
        for (est, gt) in estimates.iter().zip(references) {
            r.psnr.push(psnr(est, gt, 1.0)?);
            if with_ssim {
                r.ssim.push(ssim(est, gt, &cfg)?);
            }
            r.sdr.push(sdr(est, gt)?);
            r.si_sdr.push(si_sdr(est, gt)?);
        }
        r.psnr_summary = Summary::of(&r.psnr);
        r.ssim_summary = with_ssim.then(|| Summary::of(&r.ssim));
        r.sdr_summary = Summary::of(&r.sdr);
        r.si_sdr_summary = Summary::of(&r.si_sdr);
        Ok(r)
    }

    /// `sample,psnr,ssim,sdr,si_sdr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,psnr,ssim,sdr,si_sdr\n");
        for i in 0..self.psnr.len() {
            let ssim = self.ssim.get(i).map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{i},{},{ssim},{},{}",
                self.psnr[i], self.sdr[i], self.si_sdr[i]
            );
        }
        out
    }
}
