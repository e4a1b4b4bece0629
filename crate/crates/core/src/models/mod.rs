//! Neural components: masking networks, latent-code generators, the
//! spectrally normalized discriminator, and the masking algebra.

pub mod checkpoint;
mod discriminator;
mod generator;
mod mask;
mod mlp;

pub use discriminator::{
    spectral_normalize, DiscriminatorConfig, DiscriminatorModel, PowerIteration,
};
pub(crate) use generator::{bind_generator, reconstruction_graph};
pub use generator::{GeneratorConfig, GeneratorModel, LatentTable};
pub(crate) use mask::diverged;
pub use mask::{mask_apply, MaskConfig, MaskModel};
pub use mlp::{Activation, Mlp, Optimizer};
