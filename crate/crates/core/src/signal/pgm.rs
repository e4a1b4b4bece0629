//! Binary 8-bit graymaps (P5).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Round-half-up quantization of a `[0, 1]` value to a byte.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "PGM needs a 2-D tensor, got shape {:?}",
            t.shape()
        )));
    }
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "PGM value {v} outside [0, 1]"
        )));
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn save_pgm(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes a P5 graymap with `maxval <= 255` into `[0, 1]` values.
pub fn decode_pgm(bytes: &[u8], what: &str) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(what, 0, "missing P5 magic"));
    }
    pos += 2;
    for field in fields.iter_mut() {
        // whitespace and comments before each header number
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(what, start as u64, "expected a header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(
            what,
            pos as u64,
            "header must end with whitespace",
        ));
    }
    pos += 1;
    let [cols, rows, maxval] = fields;
    if cols == 0 || rows == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::format(
            what,
            0,
            format!("unsupported header {cols}x{rows} maxval {maxval}"),
        ));
    }
    let n = rows * cols;
    if bytes.len() - pos < n {
        return Err(Error::format(
            what,
            bytes.len() as u64,
            "truncated pixel data",
        ));
    }
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&v| (v as f64 / maxval as f64).min(1.0))
        .collect();
    Ok(Tensor::from_parts(vec![rows, cols], data))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_rounds_up() {
        let t = Tensor::full(&[2, 3], 0.5);
        let bytes = encode_pgm(&t).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert!(bytes[11..].iter().all(|&b| b == 128));
        let back = decode_pgm(&bytes, "t").unwrap();
        assert!(back.data().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn single_zero_pixel() {
        let bytes = encode_pgm(&Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(bytes, b"P5\n1 1\n255\n\0");
    }

    #[test]
    fn errors() {
        assert!(encode_pgm(&Tensor::full(&[2, 2], 1.5)).is_err());
        assert!(encode_pgm(&Tensor::zeros(&[4])).is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\n\0", "t").is_err());
        assert!(decode_pgm(b"P5\n1 x\n255\n\0", "t").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\0", "t").is_err());
        let commented = decode_pgm(b"P5 # note\n1 1\n255\n\xff", "t").unwrap();
        assert_eq!(commented.data(), &[1.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_within_half_step(
            (rows, cols, data) in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
                (Just(r), Just(c), prop::collection::vec(0.0f64..=1.0, r * c))
            })
        ) {
            let t = Tensor::new(vec![rows, cols], data).unwrap();
            let back = decode_pgm(&encode_pgm(&t).unwrap(), "t").unwrap();
            prop_assert!(back.max_abs_diff(&t).unwrap() <= 1.0 / 510.0 + 1e-15);
        }
    }
}
