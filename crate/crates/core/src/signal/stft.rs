//! Short-time Fourier transform with a periodic Hann window.
//!
//! Frames are centred: the signal is zero padded by half a frame on both
//! sides, so every input sample is covered by full-weight frames and the
//! inverse reconstructs the whole signal. The inverse is a weighted
//! overlap-add normalized by the summed squared window.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub frame: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame: 512,
            hop: 256,
        }
    }
}

impl StftConfig {
    fn validate(&self) -> Result<()> {
        if self.frame < 2 || !self.frame.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "frame length {} is not a power of two",
                self.frame
            )));
        }
        if self.hop == 0 || self.hop > self.frame {
            return Err(Error::InvalidArgument(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.frame
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.frame / 2 + 1
    }
}

/// Magnitude and phase, both `[bins, frames]`, plus the signal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Tensor,
    pub phase: Tensor,
    pub len: usize,
    pub config: StftConfig,
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// In-place forward DFT of a power-of-two length buffer.
pub fn fft(buf: &mut [Complex<f64>]) -> Result<()> {
    if !buf.len().is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "FFT length {} is not a power of two",
            buf.len()
        )));
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
    Ok(())
}

fn frame_count(len: usize, cfg: &StftConfig) -> usize {
    let padded = len + cfg.frame;
    1 + (padded - cfg.frame).div_ceil(cfg.hop)
}

pub fn stft(wave: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if wave.is_empty() || wave.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "stft needs a non-empty finite signal".into(),
        ));
    }
    let (n, half) = (cfg.frame, cfg.frame / 2);
    let frames = frame_count(wave.len(), cfg);
    let bins = cfg.bins();
    let window = hann(n);
    let plan = FftPlanner::new().plan_fft_forward(n);
    let mut mag = vec![0.0; bins * frames];
    let mut phase = vec![0.0; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..frames {
        for (i, c) in buf.iter_mut().enumerate() {
            // index into the unpadded signal
            let s = (f * cfg.hop + i).checked_sub(half);
            let v = s.and_then(|s| wave.get(s)).copied().unwrap_or(0.0);
            *c = Complex::new(v * window[i], 0.0);
        }
        plan.process(&mut buf);
        for k in 0..bins {
            mag[k * frames + f] = buf[k].norm();
            phase[k * frames + f] = buf[k].arg();
        }
    }
    Ok(Spectrogram {
        magnitude: Tensor::from_parts(vec![bins, frames], mag),
        phase: Tensor::from_parts(vec![bins, frames], phase),
        len: wave.len(),
        config: *cfg,
    })
}

/// Inverse of [`stft`] for a (possibly modified) magnitude with the given
/// phase.
pub fn istft(magnitude: &Tensor, phase: &Tensor, cfg: &StftConfig, len: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    magnitude.check_same_shape("istft", phase)?;
    let (n, half, bins) = (cfg.frame, cfg.frame / 2, cfg.bins());
    let frames = frame_count(len, cfg);
    if magnitude.shape() != [bins, frames] {
        return Err(Error::ShapeMismatch {
            op: "istft",
            left: magnitude.shape().to_vec(),
            right: vec![bins, frames],
        });
    }
    let window = hann(n);
    let plan = FftPlanner::new().plan_fft_inverse(n);
    let total = len + n;
    let mut acc = vec![0.0; total + n];
    let mut norm = vec![0.0; total + n];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..frames {
        for k in 0..bins {
            let c = Complex::from_polar(
                magnitude.data()[k * frames + f],
                phase.data()[k * frames + f],
            );
            buf[k] = c;
            if k > 0 && k < n - k {
                buf[n - k] = c.conj();
            }
        }
        plan.process(&mut buf);
        let start = f * cfg.hop;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    Ok((0..len)
        .map(|s| {
            let w = norm[s + half];
            if w > 1e-10 {
                acc[s + half] / w
            } else {
                0.0
            }
        })
        .collect())
}

/// Scales the mixture magnitude by `mask` and resynthesizes with the
/// mixture phase.
pub fn mask_wave(spec: &Spectrogram, mask: &Tensor) -> Result<Vec<f64>> {
    let masked = spec.magnitude.mul(mask)?;
    istft(&masked, &spec.phase, &spec.config, spec.len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_power_of_two() {
        let cfg = StftConfig {
            frame: 500,
            hop: 250,
        };
        assert!(stft(&[0.0; 1000], &cfg).is_err());
        let mut buf = vec![Complex::new(1.0, 0.0); 6];
        assert!(fft(&mut buf).is_err());
    }

    #[test]
    fn zero_signal_has_zero_magnitude() {
        let s = stft(&[0.0; 2000], &StftConfig::default()).unwrap();
        assert!(s.magnitude.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_centred_sinusoid_peaks_in_one_bin() {
        let cfg = StftConfig::default();
        let k = 32;
        let wave: Vec<f64> = (0..4096)
            .map(|t| (2.0 * std::f64::consts::PI * k as f64 * t as f64 / 512.0).sin())
            .collect();
        let s = stft(&wave, &cfg).unwrap();
        let frames = s.magnitude.shape()[1];
        // frames fully inside the signal
        for f in 2..frames - 2 {
            let col: Vec<f64> = (0..cfg.bins())
                .map(|b| s.magnitude.data()[b * frames + f])
                .collect();
            let peak = col.iter().cloned().fold(0.0, f64::max);
            assert_eq!(col[k], peak);
            // Hann main lobe: k +- 1 at half height, everything else ~0
            for (b, &v) in col.iter().enumerate() {
                if b.abs_diff(k) > 1 {
                    assert!(v < 1e-9 * peak, "bin {b}: {v}");
                } else if b != k {
                    assert!((v / peak - 0.5).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn roundtrip_random_signal() {
        let mut r = crate::rng::stream(1, "stft");
        for len in [1usize, 300, 512, 5000] {
            let wave: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
            let s = stft(&wave, &StftConfig::default()).unwrap();
            let back = istft(&s.magnitude, &s.phase, &s.config, len).unwrap();
            let err = wave
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "len {len}: {err}");
        }
    }

    #[test]
    fn unit_mask_is_identity() {
        let wave: Vec<f64> = (0..1500)
            .map(|t| ((t * 7) % 13) as f64 / 13.0 - 0.5)
            .collect();
        let s = stft(&wave, &StftConfig::default()).unwrap();
        let ones = Tensor::full(s.magnitude.shape(), 1.0);
        let back = mask_wave(&s, &ones).unwrap();
        let zeros = Tensor::zeros(s.magnitude.shape());
        assert!(mask_wave(&s, &zeros)
            .unwrap()
            .iter()
            .all(|&v| v.abs() < 1e-12));
        let err = wave
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8);
    }

    proptest! {
        #[test]
        fn parseval(log_n in 1u32..10, seed in any::<u64>()) {
            let n = 1usize << log_n;
            let mut r = crate::rng::stream(seed, "parseval");
            let x: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                .collect();
            let mut y = x.clone();
            fft(&mut y).unwrap();
            let time: f64 = x.iter().map(|c| c.norm_sqr()).sum();
            let freq: f64 = y.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            prop_assert!((time - freq).abs() <= 1e-9 * time);
        }
    }
}
