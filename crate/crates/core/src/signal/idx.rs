//! IDX archives (big-endian header, u8 payload) and the digit-split protocol.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, SeparationDataset, Triple};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_be_bytes(s.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.what,
                self.bytes.len() as u64,
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Images of an IDX3 archive as `[rows, cols]` tensors scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<Vec<Tensor>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        what,
    };
    let magic = c.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            what,
            0,
            format!("bad image magic {magic:#010x}"),
        ));
    }
    let n = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(what, 8, "zero image extent"));
    }
    let payload = c.take(n * rows * cols)?;
    Ok(payload
        .chunks(rows * cols)
        .map(|px| {
            Tensor::from_parts(
                vec![rows, cols],
                px.iter().map(|&v| v as f64 / 255.0).collect(),
            )
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        what,
    };
    let magic = c.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            what,
            0,
            format!("bad label magic {magic:#010x}"),
        ));
    }
    let n = c.u32()? as usize;
    Ok(c.take(n)?.to_vec())
}

/// Reads an image archive and its label archive, checking that the counts
/// agree.
pub fn read_idx_pair(images: &Path, labels: &Path) -> Result<(Vec<Tensor>, Vec<u8>)> {
    let ib = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let imgs = parse_idx_images(&ib, &images.display().to_string())?;
    let labs = parse_idx_labels(&lb, &labels.display().to_string())?;
    if imgs.len() != labs.len() {
        return Err(Error::format(
            &labels.display().to_string(),
            4,
            format!("{} labels for {} images", labs.len(), imgs.len()),
        ));
    }
    Ok((imgs, labs))
}

/// Which half of the digits plays the observed source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassSplit {
    /// `B` = digits 0-4, `X` = digits 5-9.
    LowObserved,
    /// `B` = digits 5-9, `X` = digits 0-4.
    HighObserved,
}

impl ClassSplit {
    fn is_observed(self, label: u8) -> bool {
        (label < 5) == (self == ClassSplit::LowObserved)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdxProtocol {
    pub split: ClassSplit,
    pub n_b: usize,
    pub n_y: usize,
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for IdxProtocol {
    fn default() -> Self {
        IdxProtocol {
            split: ClassSplit::LowObserved,
            n_b: 12_000,
            n_y: 12_000,
            n_eval: 5_000,
            seed: 0,
        }
    }
}

/// Builds the digit-split dataset: `n_b` observed `B` images, `n_y`
/// mixtures of further `B` images each paired with an `X` image, and
/// `n_eval` held-out mixtures. Evaluation comes from the test archives when
/// given, otherwise from train images not used elsewhere.
pub fn load_idx(
    images: &Path,
    labels: &Path,
    test: Option<(&Path, &Path)>,
    protocol: &IdxProtocol,
) -> Result<SeparationDataset> {
    let (imgs, labs) = read_idx_pair(images, labels)?;
    let shape = imgs
        .first()
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| Error::InvalidArgument("empty image archive".into()))?;
    let (mut pool_b, mut pool_x) = split_pools(&labs, protocol.split);
    pool_b.shuffle(&mut rng::stream(protocol.seed, "idx-b"));
    pool_x.shuffle(&mut rng::stream(protocol.seed, "idx-x"));

    let (n_b, n_y, n_eval) = (protocol.n_b, protocol.n_y, protocol.n_eval);
    let need_b = n_b + n_y + if test.is_none() { n_eval } else { 0 };
    let need_x = n_y + if test.is_none() { n_eval } else { 0 };
    if pool_b.len() < need_b || pool_x.len() < need_x {
        return Err(Error::InvalidArgument(format!(
            "archive has {} observed-class and {} unobserved-class images, protocol needs {need_b} and {need_x}",
            pool_b.len(),
            pool_x.len()
        )));
    }
    let observed_b = pool_b[..n_b].iter().map(|&i| imgs[i].clone()).collect();
    let train: Vec<Triple> = pool_b[n_b..n_b + n_y]
        .iter()
        .zip(&pool_x[..n_y])
        .map(|(&ib, &ix)| Triple::from_sources(imgs[ix].clone(), imgs[ib].clone()))
        .collect::<Result<_>>()?;

    let eval = match test {
        None => pool_b[n_b + n_y..need_b]
            .iter()
            .zip(&pool_x[n_y..need_x])
            .map(|(&ib, &ix)| Triple::from_sources(imgs[ix].clone(), imgs[ib].clone()))
            .collect::<Result<Vec<_>>>()?,
        Some((ti, tl)) => {
            let (timgs, tlabs) = read_idx_pair(ti, tl)?;
            let (mut tb, mut tx) = split_pools(&tlabs, protocol.split);
            tb.shuffle(&mut rng::stream(protocol.seed, "idx-test-b"));
            tx.shuffle(&mut rng::stream(protocol.seed, "idx-test-x"));
            if tb.len() < n_eval || tx.len() < n_eval {
                return Err(Error::InvalidArgument(format!(
                    "test archive too small for {n_eval} evaluation mixtures"
                )));
            }
            if timgs[0].shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "idx test archive",
                    left: timgs[0].shape().to_vec(),
                    right: shape,
                });
            }
            tb[..n_eval]
                .iter()
                .zip(&tx[..n_eval])
                .map(|(&ib, &ix)| Triple::from_sources(timgs[ix].clone(), timgs[ib].clone()))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(SeparationDataset {
        meta: DatasetMeta {
            name: "mnist".into(),
            sample_shape: shape,
            value_range: [0.0, 2.0],
            seed: protocol.seed,
        },
        observed_b,
        mixtures_y: train.iter().map(|t| t.y.clone()).collect(),
        eval,
        train_truth: Some(train),
    })
}

fn split_pools(labels: &[u8], split: ClassSplit) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| split.is_observed(labels[i]))
}

/// Serializes raw byte images as an IDX3 archive.
pub fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    for img in images {
        out.extend(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_images_and_scales() {
        let bytes = encode_idx_images(&[vec![0, 0, 0, 0], vec![255, 51, 0, 102]], 2, 2);
        let imgs = parse_idx_images(&bytes, "t").unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0], Tensor::zeros(&[2, 2]));
        assert_eq!(imgs[1].data(), &[1.0, 0.2, 0.0, 0.4]);
    }

    #[test]
    fn structured_errors() {
        let mut bytes = encode_idx_images(&[vec![1, 2, 3, 4]], 2, 2);
        bytes.truncate(18);
        match parse_idx_images(&bytes, "imgs") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("{other:?}"),
        }
        let labels = encode_idx_labels(&[1, 2]);
        assert!(matches!(
            parse_idx_images(&labels, "x"),
            Err(Error::Format { offset: 0, .. })
        ));
        match parse_idx_labels(&labels[..3], "l") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, encode_idx_images(&vec![vec![0; 4]; 3], 2, 2)).unwrap();
        fs::write(&lp, encode_idx_labels(&[0, 1])).unwrap();
        assert!(read_idx_pair(&ip, &lp).is_err());
    }

    #[test]
    fn full_size_protocol_counts() {
        // 60k tiny images, labels cycling through the ten digits
        let n = 60_000;
        let imgs: Vec<Vec<u8>> = (0..n).map(|i| vec![(i % 256) as u8; 4]).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, encode_idx_images(&imgs, 2, 2)).unwrap();
        fs::write(&lp, encode_idx_labels(&labels)).unwrap();
        let ds = load_idx(&ip, &lp, None, &IdxProtocol::default()).unwrap();
        assert_eq!(ds.observed_b.len(), 12_000);
        assert_eq!(ds.mixtures_y.len(), 12_000);
        assert_eq!(ds.eval.len(), 5_000);
        ds.validate().unwrap();
        assert!(ds
            .mixtures_y
            .iter()
            .all(|y| y.max() <= 2.0 && y.min() >= 0.0));
        let again = load_idx(&ip, &lp, None, &IdxProtocol::default()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn too_small_archive_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, encode_idx_images(&vec![vec![0; 4]; 10], 2, 2)).unwrap();
        fs::write(&lp, encode_idx_labels(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9])).unwrap();
        assert!(load_idx(&ip, &lp, None, &IdxProtocol::default()).is_err());
    }
}
