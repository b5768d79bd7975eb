//! VAE audio codec: compresses waveforms into a latent sequence for the
//! diffusion model and decodes latents back to audio.

pub mod spectral;

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::audio::{fit_length, read_wav, AudioClip};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::layers::{Conv1d, GroupNorm, Parameter, TransposedConv1d};
use crate::nn::stack::{Node, Stack};
use crate::nn::{Adam, CheckpointError, Tensor};
use crate::rng::SeededRng;
use crate::tags::TrackMetadata;
use spectral::spectral_l1_loss_grad;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("clip length {len} is not a multiple of the compression ratio {ratio}")]
    LengthNotDivisible { len: usize, ratio: usize },
    #[error("latent has {got} channels, model expects {want}")]
    ChannelMismatch { got: usize, want: usize },
    #[error("clip lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("dataset is empty (no readable clips)")]
    EmptyDataset,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Time-compressed multi-channel representation produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub channels: usize,
    pub n_frames: usize,
    pub data: Tensor,
}

impl LatentTensor {
    pub fn from_tensor(data: Tensor) -> Self {
        let shape = data.shape().to_vec();
        assert_eq!(shape.len(), 3, "latent tensors are [1, C, T]");
        Self {
            channels: shape[1],
            n_frames: shape[2],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    /// Waveform samples per latent frame; a power of two (one stride-2 stage
    /// per factor of two).
    pub compression_ratio: usize,
    pub latent_channels: usize,
    pub base_width: usize,
    /// Residual blocks at the bottleneck of each half.
    pub n_blocks: usize,
    pub beta_kl: f32,
    pub spectral_loss_weight: f32,
    pub spectral_frames: Vec<usize>,
    pub init_std: f32,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            compression_ratio: 64,
            latent_channels: 16,
            base_width: 32,
            n_blocks: 1,
            beta_kl: 1e-4,
            spectral_loss_weight: 0.25,
            spectral_frames: vec![128, 512],
            init_std: 0.02,
        }
    }
}

impl VaeConfig {
    pub fn n_stages(&self) -> usize {
        assert!(
            self.compression_ratio.is_power_of_two() && self.compression_ratio > 1,
            "compression_ratio must be a power of two > 1"
        );
        self.compression_ratio.trailing_zeros() as usize
    }

    /// Channel widths per resolution level, base at full rate growing toward
    /// the bottleneck (32 -> 256 with the defaults).
    pub fn widths(&self) -> Vec<usize> {
        let mult = [1.0f32, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];
        (0..=self.n_stages())
            .map(|i| {
                let m = if i < mult.len() { mult[i] } else { 8.0 };
                ((self.base_width as f32 * m) as usize).max(8)
            })
            .collect()
    }
}

/// Symmetric 1-D convolutional encoder/decoder.
#[derive(Debug, Clone)]
pub struct Vae {
    pub cfg: VaeConfig,
    encoder: Stack,
    decoder: Stack,
}

fn groups_for(channels: usize) -> usize {
    if channels % 8 == 0 {
        8
    } else {
        channels
    }
}

impl Vae {
    pub fn new(cfg: VaeConfig, rng: &mut SeededRng) -> Self {
        let widths = cfg.widths();
        let stages = cfg.n_stages();
        let std = cfg.init_std;

        let mut enc = Vec::new();
        enc.push(Node::Conv(Conv1d::new("enc.stem", 1, widths[0], 7, 1, 3, std, rng)));
        for i in 0..stages {
            let (ci, co) = (widths[i], widths[i + 1]);
            enc.push(Node::Conv(Conv1d::new(
                &format!("enc.down{i}"),
                ci,
                co,
                4,
                2,
                1,
                std,
                rng,
            )));
            enc.push(Node::Gn(GroupNorm::new(
                &format!("enc.gn{i}"),
                co,
                groups_for(co),
            )));
            enc.push(Node::Silu);
        }
        let top = widths[stages];
        for b in 0..cfg.n_blocks {
            enc.push(Node::ResConv {
                gn: GroupNorm::new(&format!("enc.res{b}.gn"), top, groups_for(top)),
                conv: Conv1d::new_zeroed(&format!("enc.res{b}.conv"), top, top, 3, 1, 1),
            });
        }
        enc.push(Node::Conv(Conv1d::new(
            "enc.head",
            top,
            2 * cfg.latent_channels,
            3,
            1,
            1,
            std,
            rng,
        )));

        let mut dec = Vec::new();
        dec.push(Node::Conv(Conv1d::new(
            "dec.stem",
            cfg.latent_channels,
            top,
            3,
            1,
            1,
            std,
            rng,
        )));
        for b in 0..cfg.n_blocks {
            dec.push(Node::ResConv {
                gn: GroupNorm::new(&format!("dec.res{b}.gn"), top, groups_for(top)),
                conv: Conv1d::new_zeroed(&format!("dec.res{b}.conv"), top, top, 3, 1, 1),
            });
        }
        for i in (0..stages).rev() {
            let (ci, co) = (widths[i + 1], widths[i]);
            dec.push(Node::TConv(TransposedConv1d::new(
                &format!("dec.up{i}"),
                ci,
                co,
                4,
                2,
                1,
                std,
                rng,
            )));
            dec.push(Node::Gn(GroupNorm::new(
                &format!("dec.gn{i}"),
                co,
                groups_for(co),
            )));
            dec.push(Node::Silu);
        }
        dec.push(Node::Conv(Conv1d::new("dec.head", widths[0], 1, 7, 1, 3, std, rng)));
        dec.push(Node::Clamp { lo: -1.0, hi: 1.0 });

        Self {
            cfg,
            encoder: Stack::new(enc),
            decoder: Stack::new(dec),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = self.encoder.params();
        out.extend(self.decoder.params());
        out
    }

    /// Encoder pass on a batch tensor [B, 1, L]; returns (mu, log_var), each
    /// [B, C, L/ratio].
    pub fn encode_batch(&self, x: &Tensor) -> (Tensor, Tensor) {
        let out = self.encoder.forward(x);
        split_channels(&out, self.cfg.latent_channels)
    }

    /// Decoder pass on [B, C, T]; returns [B, 1, T*ratio] clamped to [-1, 1].
    pub fn decode_batch(&self, z: &Tensor) -> Tensor {
        assert_eq!(
            z.shape()[1],
            self.cfg.latent_channels,
            "latent channel mismatch"
        );
        self.decoder.forward(z)
    }

    /// Encodes one clip. The clip length must be a multiple of the
    /// compression ratio; callers pad via fit_length first.
    pub fn encode(&self, clip: &AudioClip) -> Result<(LatentTensor, LatentTensor), VaeError> {
        let ratio = self.cfg.compression_ratio;
        if clip.len() == 0 || clip.len() % ratio != 0 {
            return Err(VaeError::LengthNotDivisible {
                len: clip.len(),
                ratio,
            });
        }
        let x = Tensor::from_vec(&[1, 1, clip.len()], clip.samples.clone()).unwrap();
        let (mu, logvar) = self.encode_batch(&x);
        Ok((
            LatentTensor::from_tensor(mu),
            LatentTensor::from_tensor(logvar),
        ))
    }

    /// Decodes one latent back to audio at the given rate.
    pub fn decode(&self, z: &LatentTensor, sample_rate: u32) -> Result<AudioClip, VaeError> {
        if z.channels != self.cfg.latent_channels {
            return Err(VaeError::ChannelMismatch {
                got: z.channels,
                want: self.cfg.latent_channels,
            });
        }
        let y = self.decode_batch(&z.data);
        Ok(AudioClip::new(y.into_data(), sample_rate))
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(config_hash);
        for p in self.params() {
            ck.insert(&p.name, p.value.clone());
        }
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), VaeError> {
        for p in self.params_mut() {
            p.value = ck.get(&p.name, p.value.shape())?.clone();
        }
        Ok(())
    }
}

/// Splits [B, 2C, T] into two [B, C, T] tensors (mu, log_var).
pub fn split_channels(t: &Tensor, c: usize) -> (Tensor, Tensor) {
    let s = t.shape();
    assert_eq!(s[1], 2 * c, "expected {} channels, got {}", 2 * c, s[1]);
    let (bsz, l) = (s[0], s[2]);
    let mut a = Tensor::zeros(&[bsz, c, l]);
    let mut b = Tensor::zeros(&[bsz, c, l]);
    for bi in 0..bsz {
        let src = &t.data()[bi * 2 * c * l..(bi + 1) * 2 * c * l];
        a.data_mut()[bi * c * l..(bi + 1) * c * l].copy_from_slice(&src[..c * l]);
        b.data_mut()[bi * c * l..(bi + 1) * c * l].copy_from_slice(&src[c * l..]);
    }
    (a, b)
}

fn merge_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let s = a.shape();
    let (bsz, c, l) = (s[0], s[1], s[2]);
    let mut out = Tensor::zeros(&[bsz, 2 * c, l]);
    for bi in 0..bsz {
        let dst = &mut out.data_mut()[bi * 2 * c * l..(bi + 1) * 2 * c * l];
        dst[..c * l].copy_from_slice(&a.data()[bi * c * l..(bi + 1) * c * l]);
        dst[c * l..].copy_from_slice(&b.data()[bi * c * l..(bi + 1) * c * l]);
    }
    out
}

/// z = mu + exp(0.5 * log_var) * eps with eps drawn standard normal.
pub fn reparameterize(mu: &Tensor, log_var: &Tensor, rng: &mut SeededRng) -> Tensor {
    assert_eq!(mu.shape(), log_var.shape(), "reparameterize shape mismatch");
    let eps = Tensor::randn(mu.shape(), rng);
    let mut z = mu.clone();
    for ((zv, &lv), &e) in z
        .data_mut()
        .iter_mut()
        .zip(log_var.data().iter())
        .zip(eps.data().iter())
    {
        *zv += (0.5 * lv).exp() * e;
    }
    z
}

/// Loss components: (total, recon_l2, recon_spectral, kl).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub total: f32,
    pub recon_l2: f32,
    pub recon_spectral: f32,
    pub kl: f32,
}

/// KL(q || N(0,1)) = 0.5 * mean(exp(lv) + mu^2 - 1 - lv).
pub fn kl_divergence(mu: &Tensor, log_var: &Tensor) -> f32 {
    assert_eq!(mu.shape(), log_var.shape());
    let n = mu.numel() as f64;
    let mut acc = 0.0f64;
    for (&m, &lv) in mu.data().iter().zip(log_var.data().iter()) {
        acc += (lv.exp() + m * m - 1.0 - lv) as f64;
    }
    (0.5 * acc / n) as f32
}

/// The training objective: L2 + w_s * multi-resolution log-spectral L1 +
/// beta * KL, reported per component.
pub fn vae_loss(
    x: &AudioClip,
    x_hat: &AudioClip,
    mu: &LatentTensor,
    log_var: &LatentTensor,
    cfg: &VaeConfig,
) -> Result<VaeLoss, VaeError> {
    if x.len() != x_hat.len() {
        return Err(VaeError::LengthMismatch {
            a: x.len(),
            b: x_hat.len(),
        });
    }
    let n = x.len().max(1) as f64;
    let l2 = x
        .samples
        .iter()
        .zip(x_hat.samples.iter())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / n;
    let spec = spectral::spectral_l1_loss(&x.samples, &x_hat.samples, &cfg.spectral_frames);
    let kl = kl_divergence(&mu.data, &log_var.data);
    let total = l2 as f32 + cfg.spectral_loss_weight * spec + cfg.beta_kl * kl;
    Ok(VaeLoss {
        total,
        recon_l2: l2 as f32,
        recon_spectral: spec,
        kl,
    })
}

/// Per-window training log record (means over `window` steps).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub total: f32,
    pub l2: f32,
    pub spectral: f32,
    pub kl: f32,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Per-step total loss history.
    pub steps: Vec<f32>,
    /// Window means logged every 100 steps.
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn mean_first(&self, n: usize) -> f32 {
        let k = n.min(self.steps.len()).max(1);
        self.steps[..k].iter().sum::<f32>() / k as f32
    }

    pub fn mean_last(&self, n: usize) -> f32 {
        let k = n.min(self.steps.len()).max(1);
        self.steps[self.steps.len() - k..].iter().sum::<f32>() / k as f32
    }
}

pub struct VaeTrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub clip_samples: usize,
    pub log_every: usize,
}

impl Default for VaeTrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 2,
            lr: 1e-3,
            clip_samples: 32768,
            log_every: 100,
        }
    }
}

/// In-memory pool of corpus clips. Unreadable files are skipped with a
/// warning at load time.
pub struct ClipPool {
    pub clips: Vec<(String, AudioClip)>,
}

impl ClipPool {
    pub fn load(corpus_dir: &Path, entries: &[TrackMetadata]) -> Self {
        let mut clips = Vec::with_capacity(entries.len());
        for e in entries {
            match read_wav(&corpus_dir.join(&e.path)) {
                Ok(clip) => clips.push((e.path.clone(), clip)),
                Err(err) => eprintln!("warning: skipping {}: {err}", e.path),
            }
        }
        Self { clips }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Assembles a [B, 1, L] batch by sampling clips and length-fitting each.
fn sample_batch(
    pool: &ClipPool,
    batch: usize,
    clip_samples: usize,
    rng: &mut SeededRng,
) -> Tensor {
    let mut x = Tensor::zeros(&[batch, 1, clip_samples]);
    for b in 0..batch {
        let idx = rng.below(pool.len());
        let fitted = fit_length(&pool.clips[idx].1, clip_samples, rng);
        x.data_mut()[b * clip_samples..(b + 1) * clip_samples]
            .copy_from_slice(&fitted.samples);
    }
    x
}

/// Trains the codec: fit_length -> encode -> reparameterize -> decode ->
/// loss -> Adam, deterministic for a given seed.
pub fn train_autoencoder(
    vae: &mut Vae,
    pool: &ClipPool,
    opts: &VaeTrainOptions,
    rng: &mut SeededRng,
) -> Result<TrainLog, VaeError> {
    if pool.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    let mut opt = Adam::new(opts.lr);
    let mut log = TrainLog::default();
    let mut window = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize);
    let mut batch_rng = rng.split(1);
    let mut noise_rng = rng.split(2);

    let cfg = vae.cfg.clone();
    for step in 1..=opts.steps {
        let x = sample_batch(pool, opts.batch_size, opts.clip_samples, &mut batch_rng);
        let n = x.numel() as f64;

        let (enc_out, enc_saved) = vae.encoder.forward_train(&x);
        let (mu, logvar) = split_channels(&enc_out, cfg.latent_channels);
        let eps = Tensor::randn(mu.shape(), &mut noise_rng);
        let mut z = mu.clone();
        for ((zv, &lv), &e) in z
            .data_mut()
            .iter_mut()
            .zip(logvar.data().iter())
            .zip(eps.data().iter())
        {
            *zv += (0.5 * lv).exp() * e;
        }
        let (x_hat, dec_saved) = vae.decoder.forward_train(&z);

        // Loss components.
        let l2 = x
            .data()
            .iter()
            .zip(x_hat.data().iter())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / n;
        let (spec, dspec) = spectral_l1_loss_grad(&x, &x_hat, &cfg.spectral_frames);
        let kl = kl_divergence(&mu, &logvar);
        let total = l2 as f32 + cfg.spectral_loss_weight * spec + cfg.beta_kl * kl;

        // d total / d x_hat.
        let mut dxhat = dspec;
        dxhat.scale(cfg.spectral_loss_weight);
        for ((g, &a), &b) in dxhat
            .data_mut()
            .iter_mut()
            .zip(x_hat.data().iter())
            .zip(x.data().iter())
        {
            *g += (2.0 / n as f32) * (a - b);
        }

        let dz = vae.decoder.backward(&dec_saved, &dxhat);

        // Through the reparameterization plus the KL penalty.
        let latent_n = mu.numel() as f32;
        let kscale = cfg.beta_kl * 0.5 / latent_n;
        let mut dmu = dz.clone();
        for (g, &m) in dmu.data_mut().iter_mut().zip(mu.data().iter()) {
            *g += kscale * 2.0 * m;
        }
        let mut dlogvar = Tensor::zeros(logvar.shape());
        for (((g, &d), (&lv, &e)), _) in dlogvar
            .data_mut()
            .iter_mut()
            .zip(dz.data().iter())
            .zip(logvar.data().iter().zip(eps.data().iter()))
            .zip(mu.data().iter())
        {
            *g = d * 0.5 * (0.5 * lv).exp() * e + kscale * (lv.exp() - 1.0);
        }
        let denc = merge_channels(&dmu, &dlogvar);
        vae.encoder.backward(&enc_saved, &denc);

        opt.step(&mut vae.params_mut());

        log.steps.push(total);
        window.0 += total as f64;
        window.1 += l2;
        window.2 += spec as f64;
        window.3 += kl as f64;
        window.4 += 1;
        if step % opts.log_every == 0 || step == opts.steps {
            let c = window.4 as f64;
            log.records.push(TrainRecord {
                step,
                total: (window.0 / c) as f32,
                l2: (window.1 / c) as f32,
                spectral: (window.2 / c) as f32,
                kl: (window.3 / c) as f32,
            });
            window = (0.0, 0.0, 0.0, 0.0, 0);
        }
    }
    Ok(log)
}

/// Mean per-clip reconstruction SNR in dB over `clips`, using the
/// deterministic (mu) encoding path.
pub fn reconstruction_snr_db(vae: &Vae, clips: &[&AudioClip]) -> Result<f32, VaeError> {
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for clip in clips {
        let (mu, _) = vae.encode(clip)?;
        let rec = vae.decode(&mu, clip.sample_rate)?;
        let mut sig = 0.0f64;
        let mut err = 0.0f64;
        for (&a, &b) in clip.samples.iter().zip(rec.samples.iter()) {
            sig += (a as f64) * (a as f64);
            err += ((a - b) as f64).powi(2);
        }
        if sig <= 0.0 {
            continue;
        }
        acc += 10.0 * (sig / err.max(1e-12)).log10();
        count += 1;
    }
    if count == 0 {
        return Err(VaeError::EmptyDataset);
    }
    Ok((acc / count as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> VaeConfig {
        VaeConfig {
            compression_ratio: 4,
            latent_channels: 2,
            base_width: 8,
            n_blocks: 1,
            beta_kl: 1e-4,
            spectral_loss_weight: 0.25,
            spectral_frames: vec![16],
            init_std: 0.05,
        }
    }

    #[test]
    fn shapes_round_trip_through_the_codec() {
        let mut rng = SeededRng::from_seed(0);
        let vae = Vae::new(VaeConfig::default(), &mut rng);
        let clip = AudioClip::new(vec![0.1; 32768], 8000);
        let (mu, lv) = vae.encode(&clip).unwrap();
        assert_eq!(mu.channels, 16);
        assert_eq!(mu.n_frames, 512);
        assert_eq!(lv.n_frames, 512);
        let rec = vae.decode(&mu, 8000).unwrap();
        assert_eq!(rec.len(), 32768);
        assert!(rec.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn indivisible_length_is_rejected() {
        let mut rng = SeededRng::from_seed(0);
        let vae = Vae::new(VaeConfig::default(), &mut rng);
        let clip = AudioClip::new(vec![0.0; 1000], 8000);
        assert!(matches!(
            vae.encode(&clip),
            Err(VaeError::LengthNotDivisible { .. })
        ));
    }

    #[test]
    fn zero_latent_decodes_to_bounded_audio() {
        let mut rng = SeededRng::from_seed(1);
        let vae = Vae::new(tiny_cfg(), &mut rng);
        let z = LatentTensor::from_tensor(Tensor::zeros(&[1, 2, 32]));
        let clip = vae.decode(&z, 8000).unwrap();
        assert_eq!(clip.len(), 128);
        assert!(clip.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0));
    }

    #[test]
    fn reparameterize_collapses_at_tiny_variance() {
        let mut rng = SeededRng::from_seed(2);
        let mu = Tensor::from_vec(&[1, 2, 3], vec![0.5, -0.25, 0.0, 1.0, -1.0, 0.125]).unwrap();
        let lv = Tensor::full(&[1, 2, 3], -60.0);
        let z = reparameterize(&mu, &lv, &mut rng);
        for (a, b) in z.data().iter().zip(mu.data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reparameterize_is_seed_deterministic() {
        let mu = Tensor::zeros(&[1, 2, 4]);
        let lv = Tensor::zeros(&[1, 2, 4]);
        let a = reparameterize(&mu, &lv, &mut SeededRng::from_seed(9));
        let b = reparameterize(&mu, &lv, &mut SeededRng::from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn reparameterize_moments_match_standard_normal() {
        let mu = Tensor::zeros(&[1, 1, 100_000]);
        let lv = Tensor::zeros(&[1, 1, 100_000]);
        let mut rng = SeededRng::from_seed(3);
        let z = reparameterize(&mu, &lv, &mut rng);
        let n = z.numel() as f64;
        let mean: f64 = z.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 =
            z.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn loss_components_match_closed_forms() {
        let cfg = tiny_cfg();
        let clip = AudioClip::new(vec![0.25; 256], 8000);
        let mu = LatentTensor::from_tensor(Tensor::zeros(&[1, 2, 64]));
        let lv = LatentTensor::from_tensor(Tensor::zeros(&[1, 2, 64]));
        // Perfect reconstruction: both recon terms vanish, kl is 0.
        let loss = vae_loss(&clip, &clip.clone(), &mu, &lv, &cfg).unwrap();
        assert_eq!(loss.recon_l2, 0.0);
        assert_eq!(loss.recon_spectral, 0.0);
        assert_eq!(loss.kl, 0.0);
        assert_eq!(loss.total, 0.0);

        // mu = 1, lv = 0 everywhere: kl = 0.5.
        let mu1 = LatentTensor::from_tensor(Tensor::full(&[1, 2, 64], 1.0));
        let loss = vae_loss(&clip, &clip.clone(), &mu1, &lv, &cfg).unwrap();
        assert!((loss.kl - 0.5).abs() < 1e-6, "kl {}", loss.kl);
        // Total is exactly the stated weighted sum.
        let want = loss.recon_l2 + cfg.spectral_loss_weight * loss.recon_spectral
            + cfg.beta_kl * loss.kl;
        assert!((loss.total - want).abs() < 1e-7);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_standard_normal() {
        let mut rng = SeededRng::from_seed(4);
        for _ in 0..50 {
            let mu = Tensor::randn(&[1, 2, 8], &mut rng);
            let lv = Tensor::randn(&[1, 2, 8], &mut rng);
            assert!(kl_divergence(&mu, &lv) >= 0.0);
        }
        assert_eq!(
            kl_divergence(&Tensor::zeros(&[1, 2, 4]), &Tensor::zeros(&[1, 2, 4])),
            0.0
        );
    }

    #[test]
    fn training_decreases_loss_on_a_tiny_problem() {
        let mut rng = SeededRng::from_seed(5);
        let mut vae = Vae::new(tiny_cfg(), &mut rng);
        let mut synth_rng = SeededRng::from_seed(6);
        let clips: Vec<(String, AudioClip)> = (0..4)
            .map(|i| {
                let samples: Vec<f32> = (0..256)
                    .map(|t| {
                        0.5 * (2.0 * std::f32::consts::PI * (60.0 + 20.0 * i as f32)
                            * t as f32
                            / 8000.0
                            + synth_rng.uniform())
                        .sin()
                    })
                    .collect();
                (format!("c{i}"), AudioClip::new(samples, 8000))
            })
            .collect();
        let pool = ClipPool { clips };
        let opts = VaeTrainOptions {
            steps: 60,
            batch_size: 2,
            lr: 2e-3,
            clip_samples: 256,
            log_every: 20,
        };
        let log = train_autoencoder(&mut vae, &pool, &opts, &mut rng).unwrap();
        assert!(log.mean_last(10) < log.mean_first(10), "no learning: {log:?}");
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let mut rng = SeededRng::from_seed(7);
        let mut vae = Vae::new(tiny_cfg(), &mut rng);
        let before = vae.to_checkpoint("h");
        let pool = ClipPool {
            clips: vec![("a".into(), AudioClip::new(vec![0.1; 256], 8000))],
        };
        let opts = VaeTrainOptions {
            steps: 0,
            batch_size: 1,
            lr: 1e-3,
            clip_samples: 256,
            log_every: 100,
        };
        train_autoencoder(&mut vae, &pool, &opts, &mut SeededRng::from_seed(8)).unwrap();
        let after = vae.to_checkpoint("h");
        assert_eq!(before.to_bytes(), after.to_bytes());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let run = || {
            let mut rng = SeededRng::from_seed(11);
            let mut vae = Vae::new(tiny_cfg(), &mut rng);
            let pool = ClipPool {
                clips: vec![
                    ("a".into(), AudioClip::new(vec![0.3; 256], 8000)),
                    ("b".into(), AudioClip::new(vec![-0.2; 256], 8000)),
                ],
            };
            let opts = VaeTrainOptions {
                steps: 10,
                batch_size: 2,
                lr: 1e-3,
                clip_samples: 256,
                log_every: 5,
            };
            train_autoencoder(&mut vae, &pool, &opts, &mut rng).unwrap();
            vae.to_checkpoint("h").to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut rng = SeededRng::from_seed(12);
        let mut vae = Vae::new(tiny_cfg(), &mut rng);
        let pool = ClipPool { clips: vec![] };
        assert!(matches!(
            train_autoencoder(&mut vae, &pool, &VaeTrainOptions::default(), &mut rng),
            Err(VaeError::EmptyDataset)
        ));
    }

    #[test]
    fn checkpoint_round_trip_restores_weights() {
        let mut rng = SeededRng::from_seed(13);
        let vae = Vae::new(tiny_cfg(), &mut rng);
        let ck = vae.to_checkpoint("hash");
        let mut other = Vae::new(tiny_cfg(), &mut SeededRng::from_seed(99));
        other.load_checkpoint(&ck).unwrap();
        assert_eq!(other.to_checkpoint("hash").to_bytes(), ck.to_bytes());
    }
}
