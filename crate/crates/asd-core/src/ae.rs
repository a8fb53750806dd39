//! Autoencoder generative branch: training on normal context-frame vectors
//! and per-frame reconstruction-error scoring, aggregated frame -> segment
//! -> clip by arithmetic means.

use ndarray::{Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{standardize, AudioClip, Label};
use crate::dsp::{frame_context, log_mel, segment_clip, MelConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::net::{
    backward_loss, optimizer_step, Activation, AdamConfig, LossKind, MlpModel, OptimizerState,
};
use crate::parallel;

pub const SEGMENT_SECONDS: f64 = 4.0;
pub const SEGMENT_OVERLAP: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    /// Number of adjacent frames concatenated into one input vector.
    pub context: usize,
    /// Hidden layer widths; input/output dims are context * n_mels.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    /// Segments per mini-batch.
    pub batch_segments: usize,
    /// Context vectors sampled per segment per step; 0 uses all of them.
    pub context_per_segment: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            context: 5,
            hidden: vec![128, 128, 128, 128, 8, 128, 128, 128, 128],
            epochs: 60,
            batch_segments: 16,
            context_per_segment: 12,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl AeConfig {
    pub fn input_dim(&self, mel: &MelConfig) -> usize {
        self.context * mel.n_mels
    }

    fn layer_dims(&self, mel: &MelConfig) -> Vec<usize> {
        let d = self.input_dim(mel);
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(d);
        dims.extend_from_slice(&self.hidden);
        dims.push(d);
        dims
    }
}

pub struct TrainedAe {
    pub model: MlpModel,
    /// Mean training loss per epoch; entry 0 is measured before any update.
    pub loss_history: Vec<f64>,
}

/// Per-clip segment features: standardize, cut 4 s segments, log-mel each.
fn segment_spectrograms(clip: &AudioClip, mel: &MelConfig) -> Result<Vec<Spectrogram>> {
    let std = standardize(clip)?;
    let segments = segment_clip(&std, SEGMENT_SECONDS, SEGMENT_OVERLAP)?;
    segments.iter().map(|s| log_mel(s, mel)).collect()
}

/// Train the reconstruction autoencoder on normal clips.
pub fn train_ae(train_clips: &[&AudioClip], mel: &MelConfig, cfg: &AeConfig) -> Result<TrainedAe> {
    if train_clips.is_empty() {
        return Err(Error::Config("empty AE training set".into()));
    }
    if let Some(bad) = train_clips.iter().find(|c| c.meta.label != Label::Normal) {
        return Err(Error::Config(format!(
            "AE training set contains anomalous clip `{}`",
            bad.meta.clip_id
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::new(
        &cfg.layer_dims(mel),
        &layer_activations(cfg.hidden.len() + 1),
        &mut rng,
    )?;

    // Precompute all segment context matrices once; sampling below only
    // selects rows.
    let per_clip: Vec<Vec<Array2<f64>>> = parallel::try_map(train_clips, |clip| {
        let specs = segment_spectrograms(clip, mel)?;
        specs
            .iter()
            .map(|s| frame_context(s, cfg.context))
            .collect()
    })?;
    let segments: Vec<&Array2<f64>> = per_clip.iter().flatten().collect();
    if segments.is_empty() {
        return Err(Error::Config("no segments in AE training set".into()));
    }

    let mut loss_history = Vec::with_capacity(cfg.epochs + 1);
    if cfg.epochs == 0 {
        return Ok(TrainedAe {
            model,
            loss_history,
        });
    }

    let steps_per_epoch = segments.len().div_ceil(cfg.batch_segments).max(1);
    let mut state = OptimizerState::new(&model, AdamConfig::adam(cfg.learning_rate));
    for _epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _step in 0..steps_per_epoch {
            let batch = sample_batch(&segments, cfg, &mut rng);
            let (loss, grads) = backward_loss(&model, &batch, LossKind::Mse, &batch)?;
            epoch_loss += loss;
            optimizer_step(&mut model, &grads, &mut state)?;
        }
        loss_history.push(epoch_loss / steps_per_epoch as f64);
    }

    Ok(TrainedAe {
        model,
        loss_history,
    })
}

fn layer_activations(n: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::Relu; n];
    *acts.last_mut().unwrap() = Activation::Linear;
    acts
}

fn sample_batch(
    segments: &[&Array2<f64>],
    cfg: &AeConfig,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let dim = segments[0].ncols();
    let per_seg = if cfg.context_per_segment == 0 {
        segments[0].nrows()
    } else {
        cfg.context_per_segment.min(segments[0].nrows())
    };
    let mut rows = Array2::zeros((cfg.batch_segments * per_seg, dim));
    let mut r = 0;
    for _ in 0..cfg.batch_segments {
        let seg = *segments.choose(rng).unwrap();
        if cfg.context_per_segment == 0 {
            for i in 0..seg.nrows() {
                rows.row_mut(r).assign(&seg.row(i));
                r += 1;
            }
        } else {
            for _ in 0..per_seg {
                let i = rng.random_range(0..seg.nrows());
                rows.row_mut(r).assign(&seg.row(i));
                r += 1;
            }
        }
    }
    rows
}

/// Reconstruction-error score of a single context vector: `(1/D) ||v - f(v)||^2`.
pub fn score_frame(model: &MlpModel, frame: &Array1<f64>) -> Result<f64> {
    let batch = frame.view().insert_axis(Axis(0)).to_owned();
    let out = model.forward(&batch)?;
    let d = frame.len() as f64;
    Ok(frame
        .iter()
        .zip(out.row(0).iter())
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / d)
}

/// Mean per-frame score of every context vector in one batch.
fn score_matrix(model: &MlpModel, vectors: &Array2<f64>) -> Result<f64> {
    let out = model.forward(vectors)?;
    let d = vectors.ncols() as f64;
    let diff = vectors - &out;
    let total: f64 = diff.iter().map(|v| v * v).sum();
    Ok(total / (d * vectors.nrows() as f64))
}

/// Clip score: mean over segments of the mean per-frame score.
pub fn score_clip(
    model: &MlpModel,
    clip: &AudioClip,
    mel: &MelConfig,
    cfg: &AeConfig,
) -> Result<f64> {
    let specs = segment_spectrograms(clip, mel)?;
    let mut acc = 0.0;
    for spec in &specs {
        let vectors = frame_context(spec, cfg.context)?;
        acc += score_matrix(model, &vectors)?;
    }
    Ok(acc / specs.len() as f64)
}

/// Score many clips in parallel, preserving input order.
pub fn score_clips(
    model: &MlpModel,
    clips: &[&AudioClip],
    mel: &MelConfig,
    cfg: &AeConfig,
) -> Result<Vec<f64>> {
    parallel::try_map(clips, |clip| score_clip(model, clip, mel, cfg))
}
