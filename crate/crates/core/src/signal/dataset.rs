use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_egt, write_egt, Tensor};

/// One evaluation example with its latent sources; `y` is computed as
/// `x + b` so the identity holds exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub x: Tensor,
    pub b: Tensor,
    pub y: Tensor,
}

impl Triple {
    pub fn from_sources(x: Tensor, b: Tensor) -> Result<Self> {
        let y = x.add(&b)?;
        Ok(Triple { x, b, y })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub sample_shape: Vec<usize>,
    /// `[lo, hi]` bounds of mixture values.
    pub value_range: [f64; 2],
    pub seed: u64,
}

/// Observed clean samples of `B`, unlabelled mixtures and optional held-out
/// triples.
///
/// `train_truth` holds the latent `(x, b)` behind each entry of
/// `mixtures_y`. Separation methods never see it; only the supervised
/// upper bound and the convergence diagnostics read it.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationDataset {
    pub meta: DatasetMeta,
    pub observed_b: Vec<Tensor>,
    pub mixtures_y: Vec<Tensor>,
    pub eval: Vec<Triple>,
    pub train_truth: Option<Vec<Triple>>,
}

impl SeparationDataset {
    pub fn sample_shape(&self) -> &[usize] {
        &self.meta.sample_shape
    }

    pub fn observed_refs(&self) -> Vec<&Tensor> {
        self.observed_b.iter().collect()
    }

    pub fn mixture_refs(&self) -> Vec<&Tensor> {
        self.mixtures_y.iter().collect()
    }

    /// Checks shapes, non-negativity and exactness of every triple.
    pub fn validate(&self) -> Result<()> {
        let shape = self.meta.sample_shape.as_slice();
        let check = |what: &str, t: &Tensor| -> Result<()> {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "dataset sample",
                    left: t.shape().to_vec(),
                    right: shape.to_vec(),
                });
            }
            if t.min() < 0.0 {
                return Err(Error::InvalidArgument(format!("negative value in {what}")));
            }
            Ok(())
        };
        if self.observed_b.is_empty() || self.mixtures_y.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset needs observed samples and mixtures".into(),
            ));
        }
        self.observed_b
            .iter()
            .try_for_each(|t| check("observed_b", t))?;
        self.mixtures_y
            .iter()
            .try_for_each(|t| check("mixtures_y", t))?;
        let triples = self.eval.iter().chain(self.train_truth.iter().flatten());
        for tr in triples {
            check("x", &tr.x)?;
            check("b", &tr.b)?;
            if tr.x.add(&tr.b)? != tr.y {
                return Err(Error::InvalidArgument("triple with y != x + b".into()));
            }
        }
        if let Some(truth) = &self.train_truth {
            if truth.len() != self.mixtures_y.len()
                || truth.iter().zip(&self.mixtures_y).any(|(t, y)| &t.y != y)
            {
                return Err(Error::InvalidArgument(
                    "training truth does not match the mixtures".into(),
                ));
            }
        }
        Ok(())
    }

    /// Writes the dataset as a directory of stacked EGT1 tensors plus
    /// `dataset.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = StoredManifest {
            meta: self.meta.clone(),
            n_observed: self.observed_b.len(),
            n_mixtures: self.mixtures_y.len(),
            n_eval: self.eval.len(),
            has_train_truth: self.train_truth.is_some(),
        };
        let stack = |name: &str, items: Vec<&Tensor>| -> Result<()> {
            if items.is_empty() {
                return Ok(());
            }
            write_egt(&Tensor::stack_rows(&items)?, dir.join(name))
        };
        stack("observed_b.egt", self.observed_refs())?;
        stack("mixtures_y.egt", self.mixture_refs())?;
        stack("eval_x.egt", self.eval.iter().map(|t| &t.x).collect())?;
        stack("eval_b.egt", self.eval.iter().map(|t| &t.b).collect())?;
        if let Some(truth) = &self.train_truth {
            stack("train_x.egt", truth.iter().map(|t| &t.x).collect())?;
            stack("train_b.egt", truth.iter().map(|t| &t.b).collect())?;
        }
        let path = dir.join("dataset.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("dataset.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: StoredManifest = serde_json::from_slice(&bytes)?;
        let shape = m.meta.sample_shape.clone();
        let unstack = |name: &str, n: usize| -> Result<Vec<Tensor>> {
            if n == 0 {
                return Ok(Vec::new());
            }
            let rows = read_egt(dir.join(name))?.unstack_rows(&shape)?;
            if rows.len() != n {
                return Err(Error::format(
                    name,
                    0,
                    format!("expected {n} samples, found {}", rows.len()),
                ));
            }
            Ok(rows)
        };
        let triples = |xs: Vec<Tensor>, bs: Vec<Tensor>| -> Result<Vec<Triple>> {
            xs.into_iter()
                .zip(bs)
                .map(|(x, b)| Triple::from_sources(x, b))
                .collect()
        };
        let observed_b = unstack("observed_b.egt", m.n_observed)?;
        let mixtures_y = unstack("mixtures_y.egt", m.n_mixtures)?;
        let eval = triples(
            unstack("eval_x.egt", m.n_eval)?,
            unstack("eval_b.egt", m.n_eval)?,
        )?;
        let train_truth = if m.has_train_truth {
            Some(triples(
                unstack("train_x.egt", m.n_mixtures)?,
                unstack("train_b.egt", m.n_mixtures)?,
            )?)
        } else {
            None
        };
        let ds = SeparationDataset {
            meta: m.meta,
            observed_b,
            mixtures_y,
            eval,
            train_truth,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredManifest {
    meta: DatasetMeta,
    n_observed: usize,
    n_mixtures: usize,
    n_eval: usize,
    has_train_truth: bool,
}
