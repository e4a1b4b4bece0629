//! Sparse non-negative matrix factorization with multiplicative updates.
//!
//! Data matrices are `[samples, features]`, activations `[samples, bases]`
//! and bases `[bases, features]`, so `data ~ H W`. The activation update
//! carries an L1 penalty; an element whose update denominator is exactly
//! zero is left unchanged.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::kernels::gemm;
use crate::tensor::{read_egt, write_egt, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    /// Bases per source.
    pub bases: usize,
    pub sparsity: f64,
    pub train_iters: usize,
    pub separate_iters: usize,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            bases: 32,
            sparsity: 0.01,
            train_iters: 200,
            separate_iters: 200,
            seed: 0,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bases == 0 || self.train_iters == 0 || self.separate_iters == 0 {
            return Err(Error::Config(
                "nmf bases and iteration counts must be positive".into(),
            ));
        }
        if !(self.sparsity >= 0.0) || !self.sparsity.is_finite() {
            return Err(Error::Config(format!(
                "nmf sparsity {} must be >= 0",
                self.sparsity
            )));
        }
        Ok(())
    }
}

fn dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::InvalidArgument(format!(
            "{what} must be a matrix, got {:?}",
            t.shape()
        ))),
    }
}

fn check_non_negative(t: &Tensor, what: &str) -> Result<()> {
    match t.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        Some(v) => Err(Error::InvalidArgument(format!(
            "{what} has entry {v}; nmf needs finite non-negative data"
        ))),
        None => Ok(()),
    }
}

fn mm(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, at, b, bt, 0.0, &mut c);
    c
}

/// `||data - H W||_F^2 + sparsity * sum(H)`.
pub fn nmf_objective(data: &Tensor, h: &Tensor, w: &Tensor, sparsity: f64) -> Result<f64> {
    let (n, d) = dims(data, "data")?;
    let (hn, l) = dims(h, "activations")?;
    let (wl, wd) = dims(w, "bases")?;
    if hn != n || wl != l || wd != d {
        return Err(Error::ShapeMismatch {
            op: "nmf objective",
            left: vec![n, d],
            right: vec![hn, l, wl, wd],
        });
    }
    let recon = mm(n, l, d, h.data(), false, w.data(), false);
    let fit: f64 = data
        .data()
        .iter()
        .zip(&recon)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(fit + sparsity * h.sum())
}

/// One multiplicative activation update `H <- H * (V W^T) / (H W W^T + s/2)`.
pub fn update_activations(data: &Tensor, h: &mut Tensor, w: &Tensor, sparsity: f64) {
    let (n, d) = (data.shape()[0], data.shape()[1]);
    let l = w.shape()[0];
    let num = mm(n, d, l, data.data(), false, w.data(), true);
    let wwt = mm(l, d, l, w.data(), false, w.data(), true);
    let den = mm(n, l, l, h.data(), false, &wwt, false);
    for ((hv, nv), dv) in h.data_mut().iter_mut().zip(&num).zip(&den) {
        let dv = dv + 0.5 * sparsity;
        if dv > 0.0 {
            *hv *= nv / dv;
        }
    }
}

/// One multiplicative basis update `W <- W * (H^T V) / (H^T H W)` applied to
/// the rows `first_free..` only.
pub fn update_bases(data: &Tensor, h: &Tensor, w: &mut Tensor, first_free: usize) {
    let (n, d) = (data.shape()[0], data.shape()[1]);
    let l = w.shape()[0];
    if first_free >= l {
        return;
    }
    let num = mm(l, n, d, h.data(), true, data.data(), false);
    let hth = mm(l, n, l, h.data(), true, h.data(), false);
    let den = mm(l, l, d, &hth, false, w.data(), false);
    let start = first_free * d;
    for ((wv, nv), dv) in w.data_mut()[start..]
        .iter_mut()
        .zip(&num[start..])
        .zip(&den[start..])
    {
        if *dv > 0.0 {
            *wv *= nv / dv;
        }
    }
}

fn random_factor(rows: usize, cols: usize, scale: f64, rng: &mut rng::Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * rng.random_range(0.05..1.0))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

fn init_scale(data: &Tensor, l: usize) -> f64 {
    let s = (data.mean() / l as f64).sqrt();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Sparse NMF of observed samples. Returns `(W_b, H_b)`.
pub fn nmf_train_bases(
    data: &Tensor,
    bases: usize,
    sparsity: f64,
    iters: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    let (n, d) = dims(data, "observed matrix")?;
    check_non_negative(data, "observed matrix")?;
    if bases == 0 || n == 0 || d == 0 {
        return Err(Error::InvalidArgument(
            "nmf needs a non-empty matrix and at least one basis".into(),
        ));
    }
    let mut r = rng::stream(seed, "nmf-bases");
    let scale = init_scale(data, bases);
    let mut w = random_factor(bases, d, scale, &mut r);
    let mut h = random_factor(n, bases, scale, &mut r);
    for _ in 0..iters {
        update_activations(data, &mut h, &w, sparsity);
        update_bases(data, &h, &mut w, 0);
    }
    Ok((w, h))
}

/// Per-sample reconstructions from the observed and unobserved blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct NmfSeparation {
    /// Stacked `[W_b; W_x]`.
    pub bases: Tensor,
    pub activations: Tensor,
    pub b: Vec<Tensor>,
    pub x: Vec<Tensor>,
}

fn split_reconstruction(
    h: &Tensor,
    w: &Tensor,
    l: usize,
    shape: &[usize],
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let (n, total) = (h.shape()[0], h.shape()[1]);
    let d = w.shape()[1];
    let block = |cols: std::ops::Range<usize>| -> Result<Vec<Tensor>> {
        let k = cols.len();
        let hs: Vec<f64> = (0..n)
            .flat_map(|i| h.row(i)[cols.clone()].to_vec())
            .collect();
        let ws = &w.data()[cols.start * d..cols.end * d];
        let rec = Tensor::from_parts(vec![n, d], mm(n, k, d, &hs, false, ws, false));
        rec.unstack_rows(shape)
    };
    Ok((block(0..l)?, block(l..total)?))
}

fn stack(samples: &[&Tensor], what: &str) -> Result<(Tensor, Vec<usize>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("no {what} samples")))?;
    let shape = first.shape().to_vec();
    let m = Tensor::stack_rows(samples)?;
    check_non_negative(&m, what)?;
    Ok((m, shape))
}

fn check_bases(w_b: &Tensor, d: usize) -> Result<usize> {
    let (l, wd) = dims(w_b, "observed bases")?;
    if wd != d {
        return Err(Error::ShapeMismatch {
            op: "nmf separate",
            left: vec![l, wd],
            right: vec![l, d],
        });
    }
    check_non_negative(w_b, "observed bases")?;
    Ok(l)
}

/// Fits activations for both blocks and `unobserved` new bases on the
/// mixtures while keeping `w_b` fixed.
pub fn nmf_separate(
    mixtures: &[&Tensor],
    w_b: &Tensor,
    unobserved: usize,
    sparsity: f64,
    iters: usize,
    seed: u64,
) -> Result<NmfSeparation> {
    let (y, shape) = stack(mixtures, "mixture")?;
    let (n, d) = (y.shape()[0], y.shape()[1]);
    let l = check_bases(w_b, d)?;
    if unobserved == 0 {
        return Err(Error::InvalidArgument(
            "need at least one unobserved basis".into(),
        ));
    }
    let total = l + unobserved;
    let mut r = rng::stream(seed, "nmf-separate");
    let scale = init_scale(&y, total);
    let w_x = random_factor(unobserved, d, scale, &mut r);
    let mut w = Tensor::stack_rows(&[w_b, &w_x])?.reshape(&[total, d])?;
    let mut h = init_activations(n, l, unobserved, scale, &mut r);
    for _ in 0..iters {
        update_activations(&y, &mut h, &w, sparsity);
        update_bases(&y, &h, &mut w, l);
    }
    let (b, x) = split_reconstruction(&h, &w, l, &shape)?;
    Ok(NmfSeparation {
        bases: w,
        activations: h,
        b,
        x,
    })
}

// unobserved activations start an two orders of magnitude below the observed ones
fn init_activations(n: usize, l: usize, unobserved: usize, scale: f64, r: &mut rng::Rng) -> Tensor {
    let total = l + unobserved;
    let mut h = random_factor(n, total, scale, r);
    for row in h.data_mut().chunks_mut(total) {
        row[l..].iter_mut().for_each(|v| *v *= 0.01);
    }
    h
}

/// Fits activations for new mixtures with all bases fixed.
pub fn nmf_project(
    mixtures: &[&Tensor],
    bases: &Tensor,
    observed: usize,
    sparsity: f64,
    iters: usize,
    seed: u64,
) -> Result<NmfSeparation> {
    let (y, shape) = stack(mixtures, "mixture")?;
    let (n, d) = (y.shape()[0], y.shape()[1]);
    let total = check_bases(bases, d)?;
    if observed == 0 || observed >= total {
        return Err(Error::InvalidArgument(
            "observed block must be a proper subset of the bases".into(),
        ));
    }
    let mut r = rng::stream(seed, "nmf-project");
    let mut h = init_activations(n, observed, total - observed, init_scale(&y, total), &mut r);
    for _ in 0..iters {
        update_activations(&y, &mut h, bases, sparsity);
    }
    let (b, x) = split_reconstruction(&h, bases, observed, &shape)?;
    Ok(NmfSeparation {
        bases: bases.clone(),
        activations: h,
        b,
        x,
    })
}

/// Trained observed and unobserved bases.
#[derive(Clone, Debug, PartialEq)]
pub struct NmfModel {
    pub config: NmfConfig,
    pub w_b: Tensor,
    pub w_x: Tensor,
}

#[derive(Serialize, Deserialize)]
struct NmfManifest {
    kind: String,
    config: NmfConfig,
}

impl NmfModel {
    /// Bases on the observed samples, then unobserved bases on the mixtures.
    pub fn fit(observed: &[&Tensor], mixtures: &[&Tensor], config: &NmfConfig) -> Result<Self> {
        config.validate()?;
        let (b, _) = stack(observed, "observed")?;
        let (w_b, _) = nmf_train_bases(
            &b,
            config.bases,
            config.sparsity,
            config.train_iters,
            config.seed,
        )?;
        let sep = nmf_separate(
            mixtures,
            &w_b,
            config.bases,
            config.sparsity,
            config.separate_iters,
            config.seed,
        )?;
        let d = w_b.shape()[1];
        let w_x = Tensor::from_parts(
            vec![config.bases, d],
            sep.bases.data()[config.bases * d..].to_vec(),
        );
        Ok(NmfModel {
            config: config.clone(),
            w_b,
            w_x,
        })
    }

    pub fn separate(&self, mixtures: &[&Tensor]) -> Result<NmfSeparation> {
        let l = self.w_b.shape()[0];
        let all = Tensor::stack_rows(&[&self.w_b, &self.w_x])?
            .reshape(&[l + self.w_x.shape()[0], self.w_b.shape()[1]])?;
        nmf_project(
            mixtures,
            &all,
            l,
            self.config.sparsity,
            self.config.separate_iters,
            self.config.seed,
        )
    }

    /// `nmf.json`, `w_b.egt` and `w_x.egt` inside `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = NmfManifest {
            kind: "nmf".into(),
            config: self.config.clone(),
        };
        let path = dir.join("nmf.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&path, e))?;
        write_egt(&self.w_b, dir.join("w_b.egt"))?;
        write_egt(&self.w_x, dir.join("w_x.egt"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("nmf.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: NmfManifest = serde_json::from_str(&text)?;
        if manifest.kind != "nmf" {
            return Err(Error::format(
                path.display().to_string(),
                0,
                format!("kind `{}` is not nmf", manifest.kind),
            ));
        }
        let w_b = read_egt(dir.join("w_b.egt"))?;
        let w_x = read_egt(dir.join("w_x.egt"))?;
        if w_b.rank() != 2 || w_x.rank() != 2 || w_b.shape()[1] != w_x.shape()[1] {
            return Err(Error::format(
                path.display().to_string(),
                0,
                "basis shapes disagree",
            ));
        }
        Ok(NmfModel {
            config: manifest.config,
            w_b,
            w_x,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "nmf-test");
        Tensor::from_parts(
            vec![n, d],
            (0..n * d).map(|_| r.random_range(0.0..1.0)).collect(),
        )
    }

    #[test]
    fn planted_rank_one_is_recovered() {
        let h: Vec<f64> = (0..12).map(|i| 0.2 + 0.1 * i as f64).collect();
        let w: Vec<f64> = (0..9).map(|j| ((j * 5) % 7) as f64 / 7.0 + 0.05).collect();
        let data = Tensor::from_parts(
            vec![12, 9],
            h.iter()
                .flat_map(|a| w.iter().map(move |b| a * b))
                .collect(),
        );
        let (wb, hb) = nmf_train_bases(&data, 1, 0.0, 500, 3).unwrap();
        let err = nmf_objective(&data, &hb, &wb, 0.0).unwrap().sqrt();
        assert!(err < 1e-6 * data.l2_norm(), "residual {err}");
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..20 {
            let data = random_matrix(15, 10, seed);
            let sparsity = 0.05;
            let mut r = rng::stream(seed, "init");
            let mut w = random_factor(4, 10, 0.5, &mut r);
            let mut h = random_factor(15, 4, 0.5, &mut r);
            let mut prev = nmf_objective(&data, &h, &w, sparsity).unwrap();
            for _ in 0..200 {
                update_activations(&data, &mut h, &w, sparsity);
                let mid = nmf_objective(&data, &h, &w, sparsity).unwrap();
                update_bases(&data, &h, &mut w, 0);
                let next = nmf_objective(&data, &h, &w, sparsity).unwrap();
                assert!(
                    mid <= prev * (1.0 + 1e-12) && next <= mid * (1.0 + 1e-12),
                    "seed {seed}"
                );
                assert!(h.min() >= 0.0 && w.min() >= 0.0);
                prev = next;
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_activations() {
        let (w, h) = nmf_train_bases(&Tensor::zeros(&[5, 4]), 3, 0.1, 50, 1).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(w.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_negative_input() {
        let mut data = random_matrix(3, 3, 1);
        data.data_mut()[4] = -0.1;
        assert!(nmf_train_bases(&data, 2, 0.0, 10, 1).is_err());
    }

    #[test]
    fn mixtures_in_observed_span_leave_little_for_the_other_source() {
        let w_b = random_matrix(4, 20, 7);
        let codes = random_matrix(30, 4, 8);
        let y = Tensor::from_parts(
            vec![30, 20],
            mm(30, 4, 20, codes.data(), false, w_b.data(), false),
        );
        let ys = y.unstack_rows(&[20]).unwrap();
        let refs: Vec<&Tensor> = ys.iter().collect();
        let sep = nmf_separate(&refs, &w_b, 4, 0.01, 300, 2).unwrap();
        let x_norm: f64 = sep
            .x
            .iter()
            .map(|t| t.l2_norm().powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(
            x_norm / y.l2_norm() < 0.05,
            "ratio {}",
            x_norm / y.l2_norm()
        );
        for t in sep.b.iter().chain(&sep.x) {
            assert!(t.min() >= 0.0);
        }
        // observed block untouched
        assert_eq!(&sep.bases.data()[..80], w_b.data());
    }

    #[test]
    fn separate_rejects_wrong_width() {
        let w_b = random_matrix(2, 5, 1);
        let y = Tensor::full(&[6], 1.0);
        assert!(nmf_separate(&[&y], &w_b, 2, 0.0, 5, 1).is_err());
    }

    #[test]
    fn model_roundtrip() {
        let bs: Vec<Tensor> = (0..6)
            .map(|i| random_matrix(1, 8, i).reshape(&[2, 4]).unwrap())
            .collect();
        let ys: Vec<Tensor> = (0..6)
            .map(|i| random_matrix(1, 8, 100 + i).reshape(&[2, 4]).unwrap())
            .collect();
        let cfg = NmfConfig {
            bases: 2,
            train_iters: 20,
            separate_iters: 20,
            ..NmfConfig::default()
        };
        let model = NmfModel::fit(
            &bs.iter().collect::<Vec<_>>(),
            &ys.iter().collect::<Vec<_>>(),
            &cfg,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(NmfModel::load(dir.path()).unwrap(), model);
        let sep = model.separate(&[&ys[0]]).unwrap();
        assert_eq!(sep.b[0].shape(), &[2, 4]);
    }

    proptest! {
        #[test]
        fn updates_keep_factors_non_negative(seed in any::<u64>(), sparsity in 0.0f64..1.0) {
            let data = random_matrix(6, 5, seed);
            let (w, h) = nmf_train_bases(&data, 3, sparsity, 30, seed).unwrap();
            prop_assert!(w.min() >= 0.0 && h.min() >= 0.0);
        }
    }
}
