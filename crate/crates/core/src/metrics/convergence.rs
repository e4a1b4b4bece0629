use serde::{Deserialize, Serialize};

use super::{median, quantile};
use crate::error::{Error, Result};
use crate::models::MaskModel;
use crate::signal::Triple;
use crate::tensor::Tensor;

/// Elements with mixture value at or below this are treated as silent and
/// left out of error medians and ratio statistics.
pub const ACTIVE_THRESHOLD: f64 = 1e-6;

/// `b / y` clamped to `[0, 1]`; zero where `y` is zero.
pub fn optimal_mask(b: &Tensor, y: &Tensor) -> Result<Tensor> {
    b.zip_map(y, |b, y| {
        if y > 0.0 {
            (b / y).clamp(0.0, 1.0)
        } else {
            0.0
        }
    })
}

fn abs_error(b: &Tensor, y: &Tensor, m: &Tensor) -> Result<Tensor> {
    b.check_same_shape("error", y)?;
    b.check_same_shape("error", m)?;
    let data = b
        .data()
        .iter()
        .zip(y.data())
        .zip(m.data())
        .map(|((b, y), m)| (b - m * y).abs())
        .collect();
    Tensor::new(b.shape().to_vec(), data)
}

fn masked_values(
    errors: &[Tensor],
    triples: &[Triple],
    keep: impl Fn(&Triple, usize) -> bool,
) -> Vec<f64> {
    errors
        .iter()
        .zip(triples)
        .flat_map(|(e, t)| {
            e.data()
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(t, *i))
                .map(|(_, v)| *v)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Median of `|e|` over elements whose mixture value is active.
pub fn median_active_abs_error(errors: &[Tensor], triples: &[Triple]) -> f64 {
    median(&masked_values(errors, triples, |t, i| {
        t.y.data()[i] > ACTIVE_THRESHOLD
    }))
}

/// Median of `|e|` over elements where both sources are active, falling
/// back to all active elements when no element is mixed. Elements carrying
/// only one source are separated almost perfectly after one iteration, so
/// their errors would otherwise dominate the median.
pub fn median_mixed_abs_error(errors: &[Tensor], triples: &[Triple]) -> f64 {
    let mixed = masked_values(errors, triples, |t, i| {
        t.b.data()[i] > ACTIVE_THRESHOLD && t.x.data()[i] > ACTIVE_THRESHOLD
    });
    if mixed.is_empty() {
        median_active_abs_error(errors, triples)
    } else {
        median(&mixed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationError {
    pub iteration: usize,
    /// `|e^t| = |b - m^t(y) * y|` per triple (for `t = 0`, `|x^0 - x|`).
    #[serde(skip)]
    pub abs_error: Vec<Tensor>,
    /// Over elements where both sources are active.
    pub median_abs_error: f64,
    pub median_active_abs_error: f64,
    pub mean_abs_error: f64,
    /// Median over active elements of `|b / y^{t-1}|`, the contraction
    /// factor of the locally invariant recurrence (absent for `t = 0`).
    pub median_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub iterations: Vec<IterationError>,
}

impl ConvergenceTrace {
    pub fn medians(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.median_abs_error).collect()
    }

    /// Whether the median error never grows by more than `tolerance`
    /// (relative) from one iteration to the next.
    pub fn is_non_increasing(&self, tolerance: f64) -> bool {
        self.medians()
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + tolerance))
    }

    /// One CSV row per iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iteration,median_abs_error,median_active_abs_error,mean_abs_error,median_ratio\n",
        );
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                it.iteration,
                it.median_abs_error,
                it.median_active_abs_error,
                it.mean_abs_error,
                it.median_ratio.map(|r| r.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// Error series from the initial unobserved-source estimates `x0` and the
/// per-iteration masks `masks[t-1][i] = m^t(y_i)` on the triples.
pub fn error_series(
    masks: &[Vec<Tensor>],
    triples: &[Triple],
    x0: &[Tensor],
) -> Result<ConvergenceTrace> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("no recorded masks".into()));
    }
    if x0.len() != triples.len() || masks.iter().any(|m| m.len() != triples.len()) {
        return Err(Error::InvalidArgument(
            "mask history does not match the triples".into(),
        ));
    }
    let summarize = |t: usize, errs: Vec<Tensor>, ratio: Option<f64>| {
        let total: f64 = errs.iter().map(Tensor::sum).sum();
        let count: usize = errs.iter().map(Tensor::len).sum();
        IterationError {
            iteration: t,
            median_abs_error: median_mixed_abs_error(&errs, triples),
            median_active_abs_error: median_active_abs_error(&errs, triples),
            mean_abs_error: total / count as f64,
            abs_error: errs,
            median_ratio: ratio,
        }
    };
    let e0 = x0
        .iter()
        .zip(triples)
        .map(|(x0, t)| x0.zip_map(&t.x, |a, b| (a - b).abs()))
        .collect::<Result<Vec<_>>>()?;
    let mut iterations = vec![summarize(0, e0, None)];
    let mut x_prev: Vec<Tensor> = x0.to_vec();
    for (k, ms) in masks.iter().enumerate() {
        let mut errs = Vec::with_capacity(triples.len());
        let mut ratios = Vec::new();
        let mut x_next = Vec::with_capacity(triples.len());
        for ((t, m), xp) in triples.iter().zip(ms).zip(&x_prev) {
            errs.push(abs_error(&t.b, &t.y, m)?);
            for ((b, xp), y) in t.b.data().iter().zip(xp.data()).zip(t.y.data()) {
                let yt = b + xp;
                if *y > ACTIVE_THRESHOLD && yt > 0.0 {
                    ratios.push((b / yt).abs());
                }
            }
            x_next.push(t.y.zip_map(m, |y, m| y - y * m)?);
        }
        iterations.push(summarize(k + 1, errs, Some(median(&ratios))));
        x_prev = x_next;
    }
    Ok(ConvergenceTrace { iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    /// Largest ratio among guarded elements.
    pub lambda_hat: f64,
    /// Quantiles 0.5, 0.9 and 0.99 of the elementwise ratio.
    pub quantiles: [f64; 3],
    pub elements: usize,
    /// Elements skipped because the denominator fell below the floor.
    pub floored: usize,
    /// Elements outside the convergence radius, `|b / y^t| >= 1 / lambda_hat`.
    pub outside_radius: usize,
}

pub const LAMBDA_QUANTILES: [f64; 3] = [0.5, 0.9, 0.99];

/// Ratio `|b - m(y) y| / |b - m(y^t) y|` over active elements, given masks
/// on the true mixtures and on the matched synthetic mixtures.
pub fn lambda_from_masks(
    triples: &[Triple],
    synthetic: &[Tensor],
    on_true: &[Tensor],
    on_synthetic: &[Tensor],
) -> Result<LambdaEstimate> {
    let n = triples.len();
    if n == 0 || synthetic.len() != n || on_true.len() != n || on_synthetic.len() != n {
        return Err(Error::InvalidArgument(
            "lambda inputs have mismatched counts".into(),
        ));
    }
    let active_b: Vec<f64> = triples
        .iter()
        .flat_map(|t| {
            t.b.data()
                .iter()
                .zip(t.y.data())
                .filter(|(_, y)| **y > ACTIVE_THRESHOLD)
                .map(|(b, _)| b.abs())
                .collect::<Vec<_>>()
        })
        .collect();
    let floor = 1e-6 * median(&active_b).max(0.0);
    let mut ratios = Vec::new();
    let mut contraction = Vec::new();
    let mut floored = 0;
    for (((t, ys), mt), ms) in triples.iter().zip(synthetic).zip(on_true).zip(on_synthetic) {
        t.y.check_same_shape("lambda", ys)?;
        for i in 0..t.y.len() {
            let (b, y) = (t.b.data()[i], t.y.data()[i]);
            if y <= ACTIVE_THRESHOLD {
                continue;
            }
            let num = (b - mt.data()[i] * y).abs();
            let den = (b - ms.data()[i] * y).abs();
            if den <= floor || den == 0.0 {
                floored += 1;
                continue;
            }
            ratios.push(num / den);
            let yt = ys.data()[i];
            contraction.push(if yt > 0.0 {
                (b / yt).abs()
            } else {
                f64::INFINITY
            });
        }
    }
    if ratios.is_empty() {
        return Err(Error::InvalidArgument(
            "every lambda denominator is degenerate".into(),
        ));
    }
    let lambda_hat = ratios.iter().copied().fold(0.0, f64::max);
    let outside_radius = contraction
        .iter()
        .filter(|&&c| c * lambda_hat >= 1.0)
        .count();
    Ok(LambdaEstimate {
        lambda_hat,
        quantiles: LAMBDA_QUANTILES.map(|q| quantile(&ratios, q)),
        elements: ratios.len(),
        floored,
        outside_radius,
    })
}

/// [`lambda_from_masks`] with the masks computed by `model`.
pub fn estimate_lambda(
    model: &MaskModel,
    triples: &[Triple],
    synthetic: &[Tensor],
) -> Result<LambdaEstimate> {
    let ys: Vec<&Tensor> = triples.iter().map(|t| &t.y).collect();
    let on_true = model.masks(&ys)?;
    let on_synth = model.masks(&synthetic.iter().collect::<Vec<_>>())?;
    lambda_from_masks(triples, synthetic, &on_true, &on_synth)
}
