//! Joint tag/audio embedding (the text-conditioning role), timing
//! conditioning, and prompt-feature assembly.
//!
//! Both towers emit unit-norm vectors of width embed_dim - timing_dim and are
//! trained contrastively on (tag set, clip) pairs with a symmetric InfoNCE
//! objective. Prompt features are the tag embedding concatenated with a
//! sinusoidal encoding of start time and duration.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp::{log_mel_stats, DspError};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::layers::{Dense, Parameter, Silu};
use crate::nn::{Adam, CheckpointError, Tensor};
use crate::rng::SeededRng;
use crate::tags::{sample_tags, TagSet, TrackMetadata};
use crate::vae::{TrainLog, TrainRecord};

#[derive(Debug, Error)]
pub enum CondError {
    #[error("clip too short for audio embedding: need >= 1 s, got {0:.3} s")]
    ClipTooShort(f64),
    #[error("contrastive batch must have at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("timing: duration {got} s exceeds the configured maximum {max} s")]
    DurationTooLong { got: f64, max: f64 },
    #[error("timing: start must be >= 0 and duration > 0")]
    BadTiming,
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("vocabulary file: {0}")]
    Vocab(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Prompt feature width D (tag slice is D - timing_dim).
    pub embed_dim: usize,
    pub timing_dim: usize,
    /// Width of tag table rows.
    pub tag_embed_dim: usize,
    pub hidden: usize,
    pub mel_bands: usize,
    pub temperature: f32,
    pub init_std: f32,
    pub max_duration_s: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            timing_dim: 16,
            tag_embed_dim: 128,
            hidden: 256,
            mel_bands: 64,
            temperature: 0.05,
            init_std: 0.02,
            max_duration_s: 4.096,
        }
    }
}

impl EncoderConfig {
    pub fn tag_dim(&self) -> usize {
        self.embed_dim - self.timing_dim
    }
}

/// Reserved vocabulary rows.
pub const UNK_INDEX: usize = 0;
pub const UNCOND_INDEX: usize = 1;
const UNK_SENTINEL: &str = "<unk>";
const UNCOND_SENTINEL: &str = "<uncond>";

/// Tag -> row index map. Row 0 is UNK, row 1 is the unconditional anchor;
/// real tags start at row 2.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    rows: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Collects every distinct tag in the manifest, sorted case-insensitively
    /// for stable files.
    pub fn build(entries: &[TrackMetadata]) -> Self {
        let mut tags: Vec<String> = Vec::new();
        let mut seen = HashMap::new();
        for e in entries {
            for t in e.tags.iter() {
                let key = t.to_lowercase();
                if seen.insert(key, ()).is_none() {
                    tags.push(t.clone());
                }
            }
        }
        tags.sort_by(|a, b| a.to_lowercase().cmp(&b.to_lowercase()));
        Self::from_tags(tags)
    }

    fn from_tags(tags: Vec<String>) -> Self {
        let mut rows = vec![UNK_SENTINEL.to_string(), UNCOND_SENTINEL.to_string()];
        rows.extend(tags);
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, t)| (t.to_lowercase(), i))
            .collect();
        Self { rows, index }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.len() <= 2
    }

    pub fn lookup(&self, tag: &str) -> usize {
        self.index
            .get(&tag.to_lowercase())
            .copied()
            .unwrap_or(UNK_INDEX)
    }

    /// One tag per line; index = line number.
    pub fn to_text(&self) -> String {
        let mut s = self.rows.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CondError> {
        let rows: Vec<String> = text.lines().map(str::to_string).collect();
        if rows.len() < 2 || rows[0] != UNK_SENTINEL || rows[1] != UNCOND_SENTINEL {
            return Err(CondError::Vocab(format!(
                "first rows must be {UNK_SENTINEL} and {UNCOND_SENTINEL}"
            )));
        }
        Ok(Self::from_tags(rows[2..].to_vec()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CondError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| CondError::Vocab(e.to_string()))?;
            }
        }
        std::fs::write(path, self.to_text()).map_err(|e| CondError::Vocab(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CondError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CondError::Vocab(e.to_string()))?;
        Self::parse(&text)
    }
}

/// Start time and total duration of a request, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimingSpec {
    pub start_s: f64,
    pub duration_s: f64,
}

impl TimingSpec {
    pub fn validate(&self, max_duration_s: f64) -> Result<(), CondError> {
        if self.start_s < 0.0 || self.duration_s <= 0.0 {
            return Err(CondError::BadTiming);
        }
        if self.duration_s > max_duration_s + 1e-9 {
            return Err(CondError::DurationTooLong {
                got: self.duration_s,
                max: max_duration_s,
            });
        }
        Ok(())
    }
}

/// Sinusoidal timing features: four frequencies, sin and cos, for start and
/// duration each (16 values). Components are bounded in [-1, 1].
pub fn timing_embedding(t: &TimingSpec) -> Vec<f32> {
    const FREQS: [f64; 4] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];
    let mut out = Vec::with_capacity(16);
    for v in [t.start_s, t.duration_s] {
        for f in FREQS {
            let phase = 2.0 * std::f64::consts::PI * v * f;
            out.push(phase.sin() as f32);
            out.push(phase.cos() as f32);
        }
    }
    out
}

/// Fixed-width conditioning vector: tag embedding (D - 16) then timing (16).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFeatures {
    pub vector: Tensor,
}

impl PromptFeatures {
    pub fn width(&self) -> usize {
        self.vector.numel()
    }
}

/// Trainable joint encoder: tag table + text projection, and a log-mel
/// statistics MLP as the audio tower.
#[derive(Debug, Clone)]
pub struct JointEncoder {
    pub cfg: EncoderConfig,
    pub vocab: Vocabulary,
    pub table: Parameter,
    text1: Dense,
    text2: Dense,
    audio1: Dense,
    audio2: Dense,
}

fn l2_normalize_rows(x: &mut Tensor) {
    let d = *x.shape().last().unwrap();
    for row in x.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Fixed affine normalization of the log-mel statistics feature.
fn normalize_mel_stats(stats: &[f32]) -> Vec<f32> {
    stats.iter().map(|&v| (v + 5.0) / 4.0).collect()
}

struct TowerForward {
    input: Tensor,
    h1: Tensor,
    a1: Tensor,
    raw: Tensor,
    out: Tensor,
}

fn tower_forward(l1: &Dense, l2: &Dense, input: Tensor) -> TowerForward {
    let h1 = l1.forward(&input);
    let a1 = Silu.forward(&h1);
    let raw = l2.forward(&a1);
    let mut out = raw.clone();
    l2_normalize_rows(&mut out);
    TowerForward {
        input,
        h1,
        a1,
        raw,
        out,
    }
}

/// Backprop through normalize -> l2 -> silu -> l1; returns d input.
fn tower_backward(l1: &mut Dense, l2: &mut Dense, fwd: &TowerForward, dout: &Tensor) -> Tensor {
    let d = *fwd.out.shape().last().unwrap();
    let mut draw = dout.clone();
    for ((drow, orow), rrow) in draw
        .data_mut()
        .chunks_mut(d)
        .zip(fwd.out.data().chunks(d))
        .zip(fwd.raw.data().chunks(d))
    {
        let norm = rrow.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
        let inner: f32 = drow.iter().zip(orow.iter()).map(|(g, y)| g * y).sum();
        for (g, y) in drow.iter_mut().zip(orow.iter()) {
            *g = (*g - inner * y) / norm;
        }
    }
    let da1 = l2.backward(&fwd.a1, &draw);
    let dh1 = Silu.backward(&fwd.h1, &da1);
    l1.backward(&fwd.input, &dh1)
}

impl JointEncoder {
    pub fn new(cfg: EncoderConfig, vocab: Vocabulary, rng: &mut SeededRng) -> Self {
        let std = cfg.init_std;
        let table = Tensor::randn_trunc(&[vocab.len(), cfg.tag_embed_dim], std, rng);
        Self {
            text1: Dense::new("cond.text1", cfg.tag_embed_dim, cfg.hidden, std, rng),
            text2: Dense::new("cond.text2", cfg.hidden, cfg.tag_dim(), std, rng),
            audio1: Dense::new("cond.audio1", 2 * cfg.mel_bands, cfg.hidden, std, rng),
            audio2: Dense::new("cond.audio2", cfg.hidden, cfg.tag_dim(), std, rng),
            table: Parameter::new("cond.table", table),
            cfg,
            vocab,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.table,
            &mut self.text1.w,
            &mut self.text1.b,
            &mut self.text2.w,
            &mut self.text2.b,
            &mut self.audio1.w,
            &mut self.audio1.b,
            &mut self.audio2.w,
            &mut self.audio2.b,
        ]
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.table,
            &self.text1.w,
            &self.text1.b,
            &self.text2.w,
            &self.text2.b,
            &self.audio1.w,
            &self.audio1.b,
            &self.audio2.w,
            &self.audio2.b,
        ]
    }

    /// Row indices feeding the mean pool for a tag set. Sorted so the f32
    /// sum is invariant to tag order; empty sets use the UNCOND row.
    fn row_indices(&self, tags: &TagSet) -> Vec<usize> {
        if tags.is_empty() {
            return vec![UNCOND_INDEX];
        }
        let mut rows: Vec<usize> = tags.iter().map(|t| self.vocab.lookup(t)).collect();
        rows.sort_unstable();
        rows
    }

    fn pooled_rows(&self, sets: &[&TagSet]) -> (Tensor, Vec<Vec<usize>>) {
        let e = self.cfg.tag_embed_dim;
        let mut pooled = Tensor::zeros(&[sets.len(), e]);
        let mut all_rows = Vec::with_capacity(sets.len());
        let table = self.table.value.data();
        for (bi, tags) in sets.iter().enumerate() {
            let rows = self.row_indices(tags);
            let dst = &mut pooled.data_mut()[bi * e..(bi + 1) * e];
            for &r in &rows {
                for (d, &t) in dst.iter_mut().zip(table[r * e..(r + 1) * e].iter()) {
                    *d += t;
                }
            }
            let inv = 1.0 / rows.len() as f32;
            dst.iter_mut().for_each(|v| *v *= inv);
            all_rows.push(rows);
        }
        (pooled, all_rows)
    }

    /// Unit-norm tag embedding, [B, tag_dim]. Empty tag sets select the
    /// unconditional row.
    pub fn encode_tags_batch(&self, sets: &[&TagSet]) -> Tensor {
        let (pooled, _) = self.pooled_rows(sets);
        tower_forward(&self.text1, &self.text2, pooled).out
    }

    pub fn encode_tags(&self, tags: &TagSet) -> Tensor {
        self.encode_tags_batch(&[tags])
    }

    /// Unit-norm audio embedding from log-mel statistics, [B, tag_dim].
    pub fn encode_audio_stats_batch(&self, stats: &[Vec<f32>]) -> Tensor {
        let f = 2 * self.cfg.mel_bands;
        let mut input = Tensor::zeros(&[stats.len(), f]);
        for (bi, s) in stats.iter().enumerate() {
            assert_eq!(s.len(), f, "mel stats width mismatch");
            input.data_mut()[bi * f..(bi + 1) * f].copy_from_slice(&normalize_mel_stats(s));
        }
        tower_forward(&self.audio1, &self.audio2, input).out
    }

    pub fn encode_audio_features(&self, clip: &AudioClip) -> Result<Tensor, CondError> {
        if clip.duration_s() < 1.0 {
            return Err(CondError::ClipTooShort(clip.duration_s()));
        }
        let stats = log_mel_stats(clip, self.cfg.mel_bands)?;
        Ok(self.encode_audio_stats_batch(&[stats]))
    }

    /// Union of auto and user tags (user tags appended), encoded and
    /// concatenated with the timing embedding.
    pub fn assemble_prompt(
        &self,
        tags: &TagSet,
        user_tags: &TagSet,
        timing: &TimingSpec,
    ) -> Result<PromptFeatures, CondError> {
        timing.validate(self.cfg.max_duration_s)?;
        let merged = tags.union(user_tags);
        let emb = self.encode_tags(&merged);
        let timing_vec = timing_embedding(timing);
        let mut data = emb.into_data();
        data.extend_from_slice(&timing_vec);
        Ok(PromptFeatures {
            vector: Tensor::from_vec(&[self.cfg.embed_dim], data).unwrap(),
        })
    }

    /// The prompt used when conditioning is dropped or no negative tags are
    /// given: unconditional tag row plus the same timing.
    pub fn unconditional_prompt(&self, timing: &TimingSpec) -> Result<PromptFeatures, CondError> {
        self.assemble_prompt(&TagSet::new(), &TagSet::new(), timing)
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(config_hash);
        for p in self.params() {
            ck.insert(&p.name, p.value.clone());
        }
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), CondError> {
        for p in self.params_mut() {
            p.value = ck.get(&p.name, p.value.shape())?.clone();
        }
        Ok(())
    }
}

/// Symmetric InfoNCE: similarity matrix text x audio / temperature,
/// cross-entropy against the diagonal both row- и column-wise, averaged.
pub fn contrastive_loss(
    text: &Tensor,
    audio: &Tensor,
    temperature: f32,
) -> Result<f32, CondError> {
    Ok(contrastive_loss_grad(text, audio, temperature)?.0)
}

/// Loss plus gradients with respect to both embedding batches.
pub fn contrastive_loss_grad(
    text: &Tensor,
    audio: &Tensor,
    temperature: f32,
) -> Result<(f32, Tensor, Tensor), CondError> {
    assert_eq!(text.shape(), audio.shape(), "contrastive batch shape mismatch");
    let bsz = text.shape()[0];
    let d = text.shape()[1];
    if bsz < 2 {
        return Err(CondError::BatchTooSmall(bsz));
    }
    let t = text.data();
    let a = audio.data();
    let mut sim = vec![0.0f32; bsz * bsz];
    for i in 0..bsz {
        for j in 0..bsz {
            let mut s = 0.0f32;
            for k in 0..d {
                s += t[i * d + k] * a[j * d + k];
            }
            sim[i * bsz + j] = s / temperature;
        }
    }

    let mut loss = 0.0f64;
    let mut dsim = vec![0.0f32; bsz * bsz];
    // Row-wise (text -> audio retrieval).
    for i in 0..bsz {
        let row = &sim[i * bsz..(i + 1) * bsz];
        let mx = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let denom: f64 = row.iter().map(|&v| ((v - mx) as f64).exp()).sum();
        loss += 0.5 / bsz as f64 * (denom.ln() - (row[i] - mx) as f64);
        for j in 0..bsz {
            let p = (((row[j] - mx) as f64).exp() / denom) as f32;
            dsim[i * bsz + j] += 0.5 / bsz as f32 * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    // Column-wise (audio -> text retrieval).
    for j in 0..bsz {
        let col: Vec<f32> = (0..bsz).map(|i| sim[i * bsz + j]).collect();
        let mx = col.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let denom: f64 = col.iter().map(|&v| ((v - mx) as f64).exp()).sum();
        loss += 0.5 / bsz as f64 * (denom.ln() - (col[j] - mx) as f64);
        for i in 0..bsz {
            let p = (((col[i] - mx) as f64).exp() / denom) as f32;
            dsim[i * bsz + j] += 0.5 / bsz as f32 * (p - if i == j { 1.0 } else { 0.0 });
        }
    }

    let mut dtext = Tensor::zeros(text.shape());
    let mut daudio = Tensor::zeros(audio.shape());
    for i in 0..bsz {
        for j in 0..bsz {
            let g = dsim[i * bsz + j] / temperature;
            for k in 0..d {
                dtext.data_mut()[i * d + k] += g * a[j * d + k];
                daudio.data_mut()[j * d + k] += g * t[i * d + k];
            }
        }
    }
    Ok((loss as f32, dtext, daudio))
}

pub struct CondTrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub max_tags: usize,
    /// Probability of replacing a pair's tags with the empty set so the
    /// unconditional row receives training signal.
    pub uncond_prob: f32,
    pub log_every: usize,
}

impl Default for CondTrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 1e-3,
            max_tags: 8,
            uncond_prob: 0.05,
            log_every: 100,
        }
    }
}

/// Precomputed log-mel statistics per manifest entry.
pub struct MelCache {
    pub stats: Vec<Vec<f32>>,
}

impl MelCache {
    pub fn build(clips: &[(String, AudioClip)], mel_bands: usize) -> Result<Self, CondError> {
        let stats = clips
            .iter()
            .map(|(_, c)| log_mel_stats(c, mel_bands).map_err(CondError::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { stats })
    }
}

/// Contrastive training over (sampled tags, clip) pairs.
pub fn train_joint_encoder(
    enc: &mut JointEncoder,
    entries: &[&TrackMetadata],
    mel: &[&Vec<f32>],
    opts: &CondTrainOptions,
    rng: &mut SeededRng,
) -> Result<TrainLog, CondError> {
    if entries.is_empty() {
        return Err(CondError::EmptyManifest);
    }
    assert_eq!(entries.len(), mel.len(), "entries/mel cache mismatch");
    let mut opt = Adam::new(opts.lr);
    let mut log = TrainLog::default();
    let mut window = (0.0f64, 0usize);
    let mut batch_rng = rng.split(1);

    let e_dim = enc.cfg.tag_embed_dim;
    for step in 1..=opts.steps {
        let bsz = opts.batch_size.min(entries.len());
        if bsz < 2 {
            return Err(CondError::BatchTooSmall(bsz));
        }
        let picked = batch_rng.choose_indices(entries.len(), bsz);

        let tag_sets: Vec<TagSet> = picked
            .iter()
            .map(|&i| {
                if batch_rng.uniform() < opts.uncond_prob {
                    TagSet::new()
                } else {
                    sample_tags(&entries[i].tags, opts.max_tags, &mut batch_rng)
                }
            })
            .collect();
        let set_refs: Vec<&TagSet> = tag_sets.iter().collect();
        let (pooled, row_lists) = enc.pooled_rows(&set_refs);
        let text_fwd = tower_forward(&enc.text1, &enc.text2, pooled);

        let f = 2 * enc.cfg.mel_bands;
        let mut audio_in = Tensor::zeros(&[bsz, f]);
        for (bi, &i) in picked.iter().enumerate() {
            audio_in.data_mut()[bi * f..(bi + 1) * f]
                .copy_from_slice(&normalize_mel_stats(mel[i]));
        }
        let audio_fwd = tower_forward(&enc.audio1, &enc.audio2, audio_in);

        let (loss, dtext, daudio) =
            contrastive_loss_grad(&text_fwd.out, &audio_fwd.out, enc.cfg.temperature)?;

        let dpooled = tower_backward(&mut enc.text1, &mut enc.text2, &text_fwd, &dtext);
        tower_backward(&mut enc.audio1, &mut enc.audio2, &audio_fwd, &daudio);
        {
            let tg = enc.table.grad.data_mut();
            for (bi, rows) in row_lists.iter().enumerate() {
                let inv = 1.0 / rows.len() as f32;
                let src = &dpooled.data()[bi * e_dim..(bi + 1) * e_dim];
                for &r in rows {
                    for (g, &s) in tg[r * e_dim..(r + 1) * e_dim].iter_mut().zip(src.iter()) {
                        *g += inv * s;
                    }
                }
            }
        }
        opt.step(&mut enc.params_mut());

        log.steps.push(loss);
        window.0 += loss as f64;
        window.1 += 1;
        if step % opts.log_every == 0 || step == opts.steps {
            log.records.push(TrainRecord {
                step,
                total: (window.0 / window.1 as f64) as f32,
                l2: 0.0,
                spectral: 0.0,
                kl: 0.0,
            });
            window = (0.0, 0);
        }
    }
    Ok(log)
}

/// Retrieval-at-1 over batches of `batch`: for each tag set, does its own
/// clip win the similarity argmax? Returns the fraction of wins over all
/// full batches (deterministic given the seed).
pub fn retrieval_at_1(
    enc: &JointEncoder,
    entries: &[&TrackMetadata],
    mel: &[&Vec<f32>],
    batch: usize,
    max_tags: usize,
    rng: &mut SeededRng,
) -> Result<f32, CondError> {
    assert_eq!(entries.len(), mel.len());
    if entries.len() < batch {
        return Err(CondError::BatchTooSmall(entries.len()));
    }
    let order = rng.choose_indices(entries.len(), entries.len());
    let mut wins = 0usize;
    let mut total = 0usize;
    for chunk in order.chunks(batch) {
        if chunk.len() < batch {
            break;
        }
        let tag_sets: Vec<TagSet> = chunk
            .iter()
            .map(|&i| sample_tags(&entries[i].tags, max_tags, rng))
            .collect();
        let refs: Vec<&TagSet> = tag_sets.iter().collect();
        let text = enc.encode_tags_batch(&refs);
        let stats: Vec<Vec<f32>> = chunk.iter().map(|&i| mel[i].clone()).collect();
        let audio = enc.encode_audio_stats_batch(&stats);
        let d = enc.cfg.tag_dim();
        for i in 0..batch {
            let trow = &text.data()[i * d..(i + 1) * d];
            let mut best = (0usize, f32::NEG_INFINITY);
            for j in 0..batch {
                let arow = &audio.data()[j * d..(j + 1) * d];
                let sim: f32 = trow.iter().zip(arow.iter()).map(|(a, b)| a * b).sum();
                if sim > best.1 {
                    best = (j, sim);
                }
            }
            if best.0 == i {
                wins += 1;
            }
            total += 1;
        }
    }
    Ok(wins as f32 / total.max(1) as f32)
}
