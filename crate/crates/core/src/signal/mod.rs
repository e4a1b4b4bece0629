//! Datasets and file formats: synthetic source families, IDX digit
//! archives, PGM images, WAV audio and the STFT frontend.

mod dataset;
pub mod idx;
mod pgm;
mod stft;
mod synth;
mod wav;

pub use dataset::{DatasetMeta, SeparationDataset, Triple};
pub use idx::{load_idx, ClassSplit, IdxProtocol};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, quantize, save_pgm};
pub use stft::{fft, hann, istft, mask_wave, stft, Spectrogram, StftConfig};
pub use synth::{gen_synthetic, Family, SynthConfig};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, Wave};
