//! Synthetic two-source families at desk scale.
//!
//! Every family draws `B` and `X` samples in `[0, 1]`; mixtures are exact
//! sums and therefore lie in `[0, 2]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, SeparationDataset, Triple};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Bars,
    Blobs,
    #[serde(rename = "tones-spectrogram", alias = "tones")]
    Tones,
    Denoise,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Bars => "bars",
            Family::Blobs => "blobs",
            Family::Tones => "tones-spectrogram",
            Family::Denoise => "denoise",
        }
    }

    pub fn default_shape(self) -> [usize; 2] {
        match self {
            Family::Tones => [64, 64],
            _ => [16, 16],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bars" => Ok(Family::Bars),
            "blobs" => Ok(Family::Blobs),
            "tones" | "tones-spectrogram" => Ok(Family::Tones),
            "denoise" => Ok(Family::Denoise),
            other => Err(Error::Config(format!(
                "unknown family `{other}` (expected bars, blobs, tones-spectrogram or denoise)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub family: Family,
    /// `[rows, cols]`; `None` uses the family default.
    pub sample_shape: Option<[usize; 2]>,
    pub n_b: usize,
    pub n_y: usize,
    pub n_eval: usize,
    /// Amplitude range of the structured components.
    pub intensity: [f64; 2],
    /// Standard deviation of the clamped Gaussian noise in the denoise family.
    pub noise_sigma: f64,
    /// Clean-image family underlying the denoise family.
    pub base_family: Family,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(family: Family, n_b: usize, n_y: usize, n_eval: usize, seed: u64) -> Self {
        SynthConfig {
            family,
            sample_shape: None,
            n_b,
            n_y,
            n_eval,
            intensity: [0.3, 1.0],
            noise_sigma: 0.1,
            base_family: Family::Blobs,
            seed,
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.sample_shape
            .unwrap_or_else(|| self.family.default_shape())
    }

    pub fn validate(&self) -> Result<()> {
        let [rows, cols] = self.shape();
        let [lo, hi] = self.intensity;
        if self.n_b == 0 || self.n_y == 0 || self.n_eval == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(
                "noise sigma must be a finite value >= 0".into(),
            ));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(
                "intensity range must satisfy 0 <= lo <= hi <= 1".into(),
            ));
        }
        if rows < 4 || cols < 4 {
            return Err(Error::Config("sample shape must be at least 4x4".into()));
        }
        if self.family == Family::Denoise && self.base_family == Family::Denoise {
            return Err(Error::Config(
                "denoise base family cannot be denoise".into(),
            ));
        }
        Ok(())
    }
}

/// Draws a dataset. Observed samples, training mixtures and evaluation
/// triples come from separate RNG streams, so they are independent draws.
pub fn gen_synthetic(config: &SynthConfig) -> Result<SeparationDataset> {
    config.validate()?;
    let sampler = Sampler::new(config);
    let mut obs = rng::stream(config.seed, "synth-observed");
    let mut mix = rng::stream(config.seed, "synth-mixtures");
    let mut ev = rng::stream(config.seed, "synth-eval");
    let observed_b = (0..config.n_b).map(|_| sampler.b_only(&mut obs)).collect();
    let train: Vec<Triple> = (0..config.n_y)
        .map(|_| sampler.triple(&mut mix))
        .collect::<Result<_>>()?;
    let eval = (0..config.n_eval)
        .map(|_| sampler.triple(&mut ev))
        .collect::<Result<_>>()?;
    let ds = SeparationDataset {
        meta: DatasetMeta {
            name: config.family.name().to_string(),
            sample_shape: config.shape().to_vec(),
            value_range: [0.0, 2.0],
            seed: config.seed,
        },
        observed_b,
        mixtures_y: train.iter().map(|t| t.y.clone()).collect(),
        eval,
        train_truth: Some(train),
    };
    debug_assert!(ds.validate().is_ok());
    Ok(ds)
}

struct Sampler {
    family: Family,
    base: Family,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    noise: Option<Normal<f64>>,
}

/// Note onsets of a tones `B` sample; the paired `X` reuses them.
type Onsets = Vec<usize>;

impl Sampler {
    fn new(c: &SynthConfig) -> Self {
        let [rows, cols] = c.shape();
        Sampler {
            family: c.family,
            base: c.base_family,
            rows,
            cols,
            lo: c.intensity[0],
            hi: c.intensity[1],
            noise: (c.noise_sigma > 0.0).then(|| Normal::new(0.0, c.noise_sigma).expect("sigma")),
        }
    }

    fn image(&self, data: Vec<f64>) -> Tensor {
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Tensor::from_parts(vec![self.rows, self.cols], data)
    }

    fn amp(&self, r: &mut Rng) -> f64 {
        r.random_range(self.lo..=self.hi)
    }

    fn b_only(&self, r: &mut Rng) -> Tensor {
        self.b_with_onsets(r).0
    }

    fn b_with_onsets(&self, r: &mut Rng) -> (Tensor, Onsets) {
        match self.family {
            Family::Bars => (self.bars(r, true), Vec::new()),
            Family::Blobs => (self.bumps(r), Vec::new()),
            Family::Tones => self.harmonic_stacks(r),
            Family::Denoise => match self.base {
                Family::Bars => (self.bars(r, true), Vec::new()),
                Family::Tones => self.harmonic_stacks(r),
                _ => (self.bumps(r), Vec::new()),
            },
        }
    }

    fn triple(&self, r: &mut Rng) -> Result<Triple> {
        let (b, onsets) = self.b_with_onsets(r);
        let x = match self.family {
            Family::Bars => self.bars(r, false),
            Family::Blobs => self.rings(r),
            Family::Tones => self.bursts(r, &onsets),
            Family::Denoise => self.clamped_noise(r),
        };
        Triple::from_sources(x, b)
    }

    /// One or two full-length bars, horizontal for `B`, vertical for `X`.
    fn bars(&self, r: &mut Rng, horizontal: bool) -> Tensor {
        let (rows, cols) = (self.rows, self.cols);
        let lines = if horizontal { rows } else { cols };
        let count = r.random_range(1..=2usize);
        let picks = rand::seq::index::sample(r, lines, count).into_vec();
        let mut img = vec![0.0; rows * cols];
        for p in picks {
            let a = self.amp(r);
            for k in 0..if horizontal { cols } else { rows } {
                let idx = if horizontal {
                    p * cols + k
                } else {
                    k * cols + p
                };
                img[idx] = a;
            }
        }
        self.image(img)
    }

    /// Sum of one or two axis-aligned Gaussian bumps.
    fn bumps(&self, r: &mut Rng) -> Tensor {
        let (rows, cols) = (self.rows as f64, self.cols as f64);
        let mut img = vec![0.0; self.rows * self.cols];
        for _ in 0..r.random_range(1..=2usize) {
            let a = self.amp(r);
            let cr = r.random_range(0.15 * rows..0.85 * rows);
            let cc = r.random_range(0.15 * cols..0.85 * cols);
            let sr = r.random_range(0.06 * rows..0.16 * rows);
            let sc = r.random_range(0.06 * cols..0.16 * cols);
            for (i, v) in img.iter_mut().enumerate() {
                let dr = (i / self.cols) as f64 - cr;
                let dc = (i % self.cols) as f64 - cc;
                *v += a * (-(dr * dr) / (2.0 * sr * sr) - (dc * dc) / (2.0 * sc * sc)).exp();
            }
        }
        self.image(img)
    }

    /// A single thin ring.
    fn rings(&self, r: &mut Rng) -> Tensor {
        let (rows, cols) = (self.rows as f64, self.cols as f64);
        let size = rows.min(cols);
        let a = self.amp(r);
        let cr = r.random_range(0.25 * rows..0.75 * rows);
        let cc = r.random_range(0.25 * cols..0.75 * cols);
        let radius = r.random_range(0.12 * size..0.3 * size);
        let width = 0.04 * size;
        let img = (0..self.rows * self.cols)
            .map(|i| {
                let dr = (i / self.cols) as f64 - cr;
                let dc = (i % self.cols) as f64 - cc;
                let d = (dr * dr + dc * dc).sqrt() - radius;
                a * (-(d * d) / (2.0 * width * width)).exp()
            })
            .collect();
        self.image(img)
    }

    /// Sustained notes on a `[frequency, time]` grid: each note is a stack of
    /// harmonics with geometric roll-off and a slow exponential decay.
    fn harmonic_stacks(&self, r: &mut Rng) -> (Tensor, Onsets) {
        let (bins, frames) = (self.rows, self.cols);
        let mut img = vec![0.0; bins * frames];
        let mut onsets = Vec::new();
        for _ in 0..r.random_range(1..=3usize) {
            let a = self.amp(r);
            let f0 = r.random_range(0.05 * bins as f64..0.16 * bins as f64);
            let rolloff: f64 = r.random_range(0.5..0.85);
            let onset = r.random_range(0..frames * 3 / 4);
            let len = r.random_range(frames / 5..=frames - onset);
            let decay = r.random_range(0.5..1.25) * frames as f64;
            onsets.push(onset);
            let mut k = 1.0;
            while k * f0 < bins as f64 - 1.0 {
                let ak = a * rolloff.powf(k - 1.0);
                let centre = k * f0;
                for f in 0..bins {
                    let df = f as f64 - centre;
                    let spread = ak * (-(df * df) / (2.0 * 0.6 * 0.6)).exp();
                    if spread < 1e-6 {
                        continue;
                    }
                    for t in onset..onset + len {
                        let env = (-((t - onset) as f64) / decay).exp();
                        img[f * frames + t] += spread * env;
                    }
                }
                k += 1.0;
            }
        }
        (self.image(img), onsets)
    }

    /// Short broadband bursts at (most of) the note onsets of the paired `B`
    /// sample, plus an occasional unaligned burst; never empty. Bursts are
    /// quieter than the notes.
    fn bursts(&self, r: &mut Rng, onsets: &[usize]) -> Tensor {
        let (bins, frames) = (self.rows, self.cols);
        let mut img = vec![0.0; bins * frames];
        let mut starts: Vec<usize> = onsets
            .iter()
            .copied()
            .filter(|_| r.random_bool(0.9))
            .collect();
        if r.random_bool(0.3) || starts.is_empty() {
            starts.push(r.random_range(0..frames));
        }
        for t0 in starts {
            let level = 0.4 * self.amp(r);
            let tilt = r.random_range(0.25..0.75) * bins as f64;
            let decay = r.random_range(0.8..2.0);
            for t in t0..(t0 + 6).min(frames) {
                let env = (-((t - t0) as f64) / decay).exp();
                for f in 0..bins {
                    img[f * frames + t] += level * env * (-(f as f64) / tilt).exp();
                }
            }
        }
        self.image(img)
    }

    fn clamped_noise(&self, r: &mut Rng) -> Tensor {
        let n = self.rows * self.cols;
        let data = match &self.noise {
            Some(d) => (0..n).map(|_| d.sample(r).max(0.0)).collect(),
            None => vec![0.0; n],
        };
        self.image(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(family: Family) -> SynthConfig {
        SynthConfig::new(family, 20, 15, 10, 3)
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for f in [Family::Bars, Family::Blobs, Family::Tones, Family::Denoise] {
            let a = gen_synthetic(&small(f)).unwrap();
            let b = gen_synthetic(&small(f)).unwrap();
            assert_eq!(a, b, "{f}");
            let mut c = small(f);
            c.seed = 4;
            assert_ne!(gen_synthetic(&c).unwrap().mixtures_y, a.mixtures_y);
        }
    }

    #[test]
    fn triples_are_exact_and_in_range() {
        for f in [Family::Bars, Family::Blobs, Family::Tones, Family::Denoise] {
            let ds = gen_synthetic(&small(f)).unwrap();
            ds.validate().unwrap();
            assert_eq!(ds.sample_shape(), f.default_shape());
            for t in ds.eval.iter().chain(ds.train_truth.as_ref().unwrap()) {
                assert_eq!(t.x.add(&t.b).unwrap(), t.y);
                assert!(t.x.max() <= 1.0 && t.b.max() <= 1.0 && t.y.max() <= 2.0);
            }
            assert!(ds.observed_b.iter().all(|b| b.max() > 0.0));
        }
    }

    #[test]
    fn bars_orientation() {
        let ds = gen_synthetic(&small(Family::Bars)).unwrap();
        for t in &ds.eval {
            // every row of b is constant, every column of x is constant
            for row in t.b.data().chunks(16) {
                assert!(row.iter().all(|&v| v == row[0]));
            }
            for c in 0..16 {
                let col: Vec<f64> = (0..16).map(|r| t.x.data()[r * 16 + c]).collect();
                assert!(col.iter().all(|&v| v == col[0]));
            }
        }
    }

    #[test]
    fn denoise_noise_is_clamped_gaussian() {
        let mut cfg = SynthConfig::new(Family::Denoise, 5, 400, 5, 9);
        cfg.noise_sigma = 0.1;
        let ds = gen_synthetic(&cfg).unwrap();
        let noise: Vec<f64> = ds
            .train_truth
            .unwrap()
            .iter()
            .flat_map(|t| t.x.data().to_vec())
            .collect();
        let n = noise.len() as f64;
        let zero_frac = noise.iter().filter(|&&v| v == 0.0).count() as f64 / n;
        // half of a centred Gaussian is clamped to 0
        assert!((zero_frac - 0.5).abs() < 0.01, "{zero_frac}");
        // E[max(0, e)] = sigma / sqrt(2 pi)
        let mean = noise.iter().sum::<f64>() / n;
        let expected = 0.1 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((mean - expected).abs() < 1e-3, "{mean} vs {expected}");
        // E[max(0, e)^2] = sigma^2 / 2
        let second = noise.iter().map(|v| v * v).sum::<f64>() / n;
        assert!((second - 0.005).abs() < 2e-4, "{second}");
    }

    #[test]
    fn tones_bursts_follow_note_onsets() {
        let ds = gen_synthetic(&small(Family::Tones)).unwrap();
        let frames = 64;
        let mut aligned = 0;
        let mut total = 0;
        for t in ds.train_truth.as_ref().unwrap() {
            for c in 0..frames {
                let col_x: f64 = (0..64).map(|f| t.x.data()[f * frames + c]).sum();
                let prev_x: f64 = if c == 0 {
                    0.0
                } else {
                    (0..64).map(|f| t.x.data()[f * frames + c - 1]).sum()
                };
                if col_x > 0.0 && prev_x == 0.0 {
                    total += 1;
                    let b_now: f64 = (0..64).map(|f| t.b.data()[f * frames + c]).sum();
                    let b_prev: f64 = if c == 0 {
                        0.0
                    } else {
                        (0..64).map(|f| t.b.data()[f * frames + c - 1]).sum()
                    };
                    if b_now > b_prev {
                        aligned += 1;
                    }
                }
            }
        }
        assert!(total > 0);
        assert!(aligned as f64 >= 0.6 * total as f64, "{aligned}/{total}");
    }

    #[test]
    fn rejects_bad_configs() {
        assert!("violin".parse::<Family>().is_err());
        assert_eq!("tones".parse::<Family>().unwrap(), Family::Tones);
        let mut c = small(Family::Bars);
        c.n_eval = 0;
        assert!(gen_synthetic(&c).is_err());
        let mut c = small(Family::Denoise);
        c.noise_sigma = -1.0;
        assert!(gen_synthetic(&c).is_err());
    }
}
