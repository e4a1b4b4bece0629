//! Checkpoint files: EGT1 tensors back to back, then a JSON manifest, then
//! the manifest length as a little-endian u64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::tensor::{read_egt_from, write_egt_to, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    /// Layer sizes of the network, input first.
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub activations: Vec<Activation>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    manifest: &Manifest,
    tensors: &[&Tensor],
) -> Result<()> {
    let path = path.as_ref();
    if manifest.tensors.len() != tensors.len() {
        return Err(Error::InvalidArgument(
            "manifest and tensor list disagree".into(),
        ));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for t in tensors {
        write_egt_to(t, &mut w).map_err(io)?;
    }
    let json = serde_json::to_vec_pretty(manifest)?;
    w.write_all(&json).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Manifest, Vec<Tensor>)> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(&what, 0, "file too short for a checkpoint"));
    }
    let tail = bytes.len() - 8;
    let len = u64::from_le_bytes(bytes[tail..].try_into().expect("8 bytes")) as usize;
    if len > tail {
        return Err(Error::format(
            &what,
            tail as u64,
            "manifest length out of range",
        ));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[tail - len..tail])?;
    let mut cur = Cursor::new(&bytes[..tail - len]);
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let t = read_egt_from(&mut cur, &what)?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::format(
                &what,
                cur.position(),
                format!(
                    "tensor `{}` has shape {:?}, manifest says {:?}",
                    entry.name,
                    t.shape(),
                    entry.shape
                ),
            ));
        }
        tensors.push(t);
    }
    Ok((manifest, tensors))
}

/// Manifest describing an MLP's parameters.
pub fn mlp_manifest(kind: &str, seed: u64, net: &Mlp, extra: serde_json::Value) -> Manifest {
    Manifest {
        kind: kind.to_string(),
        seed,
        dims: net.dims().to_vec(),
        activations: net.activations().to_vec(),
        tensors: net
            .params()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        extra,
    }
}

pub fn save_mlp(
    path: impl AsRef<Path>,
    kind: &str,
    seed: u64,
    net: &Mlp,
    extra: serde_json::Value,
) -> Result<()> {
    let manifest = mlp_manifest(kind, seed, net, extra);
    let tensors: Vec<&Tensor> = net.param_tensors().iter().collect();
    save_checkpoint(path, &manifest, &tensors)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<(Manifest, Mlp)> {
    let (manifest, tensors) = load_checkpoint(path)?;
    let prefix = manifest
        .tensors
        .first()
        .and_then(|t| t.name.split('.').next())
        .unwrap_or("net")
        .to_string();
    let net = Mlp::from_params(
        &prefix,
        &manifest.dims,
        manifest.activations.clone(),
        tensors,
    )?;
    Ok((manifest, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn mlp_roundtrip() {
        let net = Mlp::init(
            "mask",
            &[4, 3, 4],
            Activation::Sigmoid,
            &mut rng::stream(1, "t"),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_mlp(
            &p,
            "mask",
            1,
            &net,
            serde_json::json!({"sample_shape": [2, 2]}),
        )
        .unwrap();
        let (m, back) = load_mlp(&p).unwrap();
        assert_eq!(back, net);
        assert_eq!(m.kind, "mask");
        assert_eq!(m.extra["sample_shape"][1], 2);
        // checkpoint starts with an EGT1 tensor
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"EGT1");
    }

    #[test]
    fn corrupt_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, [1u8, 2, 3]).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
