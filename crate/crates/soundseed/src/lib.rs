//! soundseed: tag-conditioned latent diffusion music generation at desk scale.
//!
//! The pipeline has four trained parts and the plumbing around them:
//! a VAE codec compressing waveforms into latent sequences, a joint tag/audio
//! embedding trained contrastively, a conditional diffusion U-Net over the
//! latents with classifier-free guidance and negative prompts, and an
//! evaluation suite (Fréchet embedding distance, posterior KL, tag-audio
//! alignment). A deterministic synthetic corpus with truthful tags makes the
//! whole stack trainable and verifiable on a CPU.

pub mod audio;
pub mod cond;
pub mod dsp;
pub mod nn;
pub mod vae;
pub mod rng;
pub mod tags;

pub use rng::SeededRng;
