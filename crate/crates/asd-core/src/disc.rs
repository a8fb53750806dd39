//! Discriminative branch: multi-task outlier-exposure training of the
//! feature extractor (normal-vs-pseudo-anomaly head plus per-section head),
//! clip embedding extraction, and persistence.
//!
//! Pseudo-anomalies are the normal training sounds of the other machines in
//! the corpus; section labels stand in for the product ID.

use ndarray::{Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::ae::{SEGMENT_OVERLAP, SEGMENT_SECONDS};
use crate::corpus::{standardize, AudioClip, Split};
use crate::dsp::{log_mel, segment_clip, MelConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::net::{
    loss_and_output_grad, optimizer_step, Activation, AdamConfig, LossKind, MlpModel,
    OptimizerState,
};
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub embed_dim: usize,
    /// Hidden widths of the trunk MLP over pooled spectrogram summaries.
    pub trunk_hidden: Vec<usize>,
    /// Weight of the per-section loss.
    pub lambda_id: f64,
    pub epochs: usize,
    /// Segments per mini-batch; half target machine, half pseudo-anomalies.
    pub batch_segments: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            embed_dim: 16,
            trunk_hidden: vec![256],
            lambda_id: 5.0,
            epochs: 40,
            batch_segments: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscModel {
    /// Feature extractor onto the embedding space.
    pub trunk: MlpModel,
    /// Linear map embedding -> 1 logit (target machine vs pseudo-anomaly).
    pub head_mac: MlpModel,
    /// Linear map embedding -> one logit per section class.
    pub head_id: MlpModel,
    pub machine: String,
    /// Section values present in training, in class-index order.
    pub sections: Vec<u8>,
}

pub struct TrainedDisc {
    pub model: DiscModel,
    /// Total multi-task loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Per-mel temporal mean and population standard deviation, concatenated.
pub fn pool_spectrogram(spec: &Spectrogram) -> Result<Array1<f64>> {
    let n_frames = spec.n_frames();
    if n_frames < 2 {
        return Err(Error::Size(format!(
            "pooling needs >= 2 frames, got {n_frames}"
        )));
    }
    let n_mels = spec.n_mels();
    let mut out = Array1::zeros(2 * n_mels);
    for m in 0..n_mels {
        let col = spec.values.column(m);
        let mean = col.sum() / n_frames as f64;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n_frames as f64;
        out[m] = mean;
        out[n_mels + m] = var.sqrt();
    }
    Ok(out)
}

/// Pooled per-segment feature vectors of one clip.
pub fn segment_pooled(clip: &AudioClip, mel: &MelConfig) -> Result<Vec<Array1<f64>>> {
    let std = standardize(clip)?;
    let segments = segment_clip(&std, SEGMENT_SECONDS, SEGMENT_OVERLAP)?;
    segments
        .iter()
        .map(|s| pool_spectrogram(&log_mel(s, mel)?))
        .collect()
}

struct TrainData {
    /// (pooled vector, class index) for target-machine segments.
    target: Vec<(Array1<f64>, usize)>,
    pseudo: Vec<Array1<f64>>,
    sections: Vec<u8>,
}

fn prepare(target_machine: &str, clips: &[&AudioClip], mel: &MelConfig) -> Result<TrainData> {
    let train: Vec<&&AudioClip> = clips
        .iter()
        .filter(|c| c.meta.split == Split::Train)
        .collect();
    let pooled: Vec<(bool, u8, Vec<Array1<f64>>)> = parallel::try_map(&train, |clip| {
        Ok((
            clip.meta.machine == target_machine,
            clip.meta.section,
            segment_pooled(clip, mel)?,
        ))
    })?;

    let mut sections: Vec<u8> = pooled
        .iter()
        .filter(|(is_target, ..)| *is_target)
        .map(|(_, s, _)| *s)
        .collect();
    sections.sort_unstable();
    sections.dedup();
    if sections.is_empty() {
        return Err(Error::Config(format!(
            "no training clips for target machine `{target_machine}`"
        )));
    }

    let mut target = Vec::new();
    let mut pseudo = Vec::new();
    for (is_target, section, vecs) in pooled {
        if is_target {
            let class = sections.iter().position(|&s| s == section).unwrap();
            target.extend(vecs.into_iter().map(|v| (v, class)));
        } else {
            pseudo.extend(vecs);
        }
    }
    if pseudo.is_empty() {
        return Err(Error::Config(
            "corpus has a single machine; no pseudo-anomalies available".into(),
        ));
    }
    Ok(TrainData {
        target,
        pseudo,
        sections,
    })
}

fn rows_to_matrix(rows: &[&Array1<f64>]) -> Array2<f64> {
    let dim = rows[0].len();
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    out
}

/// Multi-task training: machine loss on all rows, section loss on the
/// target-machine half only, weighted by `lambda_id`.
pub fn train_disc(
    target_machine: &str,
    clips: &[&AudioClip],
    mel: &MelConfig,
    cfg: &DiscConfig,
) -> Result<TrainedDisc> {
    if cfg.embed_dim < 2 {
        return Err(Error::Config("embed_dim must be >= 2".into()));
    }
    if cfg.lambda_id < 0.0 {
        return Err(Error::Config("lambda_id must be >= 0".into()));
    }
    let data = prepare(target_machine, clips, mel)?;
    let n_classes = data.sections.len();
    let input_dim = 2 * mel.n_mels;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trunk_dims = vec![input_dim];
    trunk_dims.extend_from_slice(&cfg.trunk_hidden);
    trunk_dims.push(cfg.embed_dim);
    let mut trunk_acts = vec![Activation::Relu; trunk_dims.len() - 1];
    *trunk_acts.last_mut().unwrap() = Activation::Linear;

    let mut trunk = MlpModel::new(&trunk_dims, &trunk_acts, &mut rng)?;
    let mut head_mac = MlpModel::new(&[cfg.embed_dim, 1], &[Activation::Linear], &mut rng)?;
    let mut head_id =
        MlpModel::new(&[cfg.embed_dim, n_classes], &[Activation::Linear], &mut rng)?;

    let adamw = AdamConfig::adamw(cfg.learning_rate, cfg.weight_decay);
    let mut trunk_opt = OptimizerState::new(&trunk, adamw);
    let mut mac_opt = OptimizerState::new(&head_mac, adamw);
    let mut id_opt = OptimizerState::new(&head_id, adamw);

    let half = (cfg.batch_segments / 2).max(1);
    let steps_per_epoch = data.target.len().div_ceil(half).max(1);
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _step in 0..steps_per_epoch {
            // 1:1 sampler over the machine label.
            let target_pick: Vec<&(Array1<f64>, usize)> =
                (0..half).map(|_| data.target.choose(&mut rng).unwrap()).collect();
            let pseudo_pick: Vec<&Array1<f64>> =
                (0..half).map(|_| data.pseudo.choose(&mut rng).unwrap()).collect();

            let rows: Vec<&Array1<f64>> = target_pick
                .iter()
                .map(|(v, _)| v)
                .chain(pseudo_pick.iter().copied())
                .collect();
            let batch = rows_to_matrix(&rows);

            let mut mac_targets = Array2::zeros((2 * half, 1));
            for i in 0..half {
                mac_targets[(i, 0)] = 1.0;
            }
            let mut id_targets = Array2::zeros((half, n_classes));
            for (i, (_, class)) in target_pick.iter().enumerate() {
                id_targets[(i, *class)] = 1.0;
            }

            let (emb, trunk_cache) = trunk.forward_cached(&batch)?;

            let (mac_out, mac_cache) = head_mac.forward_cached(&emb)?;
            let (mac_loss, mac_out_grad) =
                loss_and_output_grad(LossKind::MachineBce, &mac_out, &mac_targets)?;
            let (mac_grads, mut emb_grad) = head_mac.backward(&mac_cache, &mac_out_grad);

            let emb_target = emb.slice(ndarray::s![..half, ..]).to_owned();
            let (id_out, id_cache) = head_id.forward_cached(&emb_target)?;
            let (id_loss, id_out_grad) =
                loss_and_output_grad(LossKind::IdBce, &id_out, &id_targets)?;
            let (id_grads, id_emb_grad) = head_id.backward(&id_cache, &id_out_grad);

            let mut upper = emb_grad.slice_mut(ndarray::s![..half, ..]);
            upper += &(&id_emb_grad * cfg.lambda_id);

            let (trunk_grads, _) = trunk.backward(&trunk_cache, &emb_grad);

            epoch_loss += mac_loss + cfg.lambda_id * id_loss;
            optimizer_step(&mut trunk, &trunk_grads, &mut trunk_opt)?;
            optimizer_step(&mut head_mac, &mac_grads, &mut mac_opt)?;
            let id_grads_scaled: Vec<_> = id_grads
                .into_iter()
                .map(|g| crate::net::LayerGrad {
                    weight: g.weight * cfg.lambda_id,
                    bias: g.bias * cfg.lambda_id,
                })
                .collect();
            optimizer_step(&mut head_id, &id_grads_scaled, &mut id_opt)?;
        }
        loss_history.push(epoch_loss / steps_per_epoch as f64);
    }

    Ok(TrainedDisc {
        model: DiscModel {
            trunk,
            head_mac,
            head_id,
            machine: target_machine.to_string(),
            sections: data.sections,
        },
        loss_history,
    })
}

impl DiscModel {
    /// Clip embedding from precomputed pooled segment features: mean of
    /// per-segment trunk outputs.
    pub fn embed_pooled(&self, pooled: &[Array1<f64>]) -> Result<Array1<f64>> {
        let rows: Vec<&Array1<f64>> = pooled.iter().collect();
        let emb = self.trunk.forward(&rows_to_matrix(&rows))?;
        Ok(emb.sum_axis(Axis(0)) / emb.nrows() as f64)
    }

    /// Clip embedding: mean of per-segment trunk outputs.
    pub fn embed(&self, clip: &AudioClip, mel: &MelConfig) -> Result<Array1<f64>> {
        self.embed_pooled(&segment_pooled(clip, mel)?)
    }

    /// Target-machine probability from precomputed pooled segment features,
    /// via the machine head averaged over segments.
    pub fn machine_probability_pooled(&self, pooled: &[Array1<f64>]) -> Result<f64> {
        let rows: Vec<&Array1<f64>> = pooled.iter().collect();
        let emb = self.trunk.forward(&rows_to_matrix(&rows))?;
        let logits = self.head_mac.forward(&emb)?;
        let mean_logit = logits.sum() / logits.nrows() as f64;
        Ok(crate::net::sigmoid(mean_logit))
    }

    /// Probability that a clip comes from the target machine.
    pub fn machine_probability(&self, clip: &AudioClip, mel: &MelConfig) -> Result<f64> {
        self.machine_probability_pooled(&segment_pooled(clip, mel)?)
    }

    /// Embed many clips in parallel, preserving order.
    pub fn embed_clips(&self, clips: &[&AudioClip], mel: &MelConfig) -> Result<Vec<Array1<f64>>> {
        parallel::try_map(clips, |clip| self.embed(clip, mel))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "machine": self.machine,
            "sections": self.sections,
            "trunk": self.trunk.to_json_value(),
            "head_mac": self.head_mac.to_json_value(),
            "head_id": self.head_id.to_json_value(),
        });
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(file, &doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut doc: serde_json::Value =
            serde_json::from_reader(file).map_err(|e| Error::Parse(e.to_string()))?;
        let take = |doc: &mut serde_json::Value, key: &str| -> Result<serde_json::Value> {
            doc.get_mut(key)
                .map(serde_json::Value::take)
                .ok_or_else(|| Error::Format(format!("model document missing `{key}`")))
        };
        let machine = take(&mut doc, "machine")?
            .as_str()
            .ok_or_else(|| Error::Format("`machine` must be a string".into()))?
            .to_string();
        let sections: Vec<u8> = serde_json::from_value(take(&mut doc, "sections")?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(DiscModel {
            trunk: MlpModel::from_json_value(take(&mut doc, "trunk")?)?,
            head_mac: MlpModel::from_json_value(take(&mut doc, "head_mac")?)?,
            head_id: MlpModel::from_json_value(take(&mut doc, "head_id")?)?,
            machine,
            sections,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pool_constant_spectrogram() {
        let spec = Spectrogram {
            values: Array2::from_elem((5, 3), 2.5),
            clip_id: "c".into(),
        };
        let p = pool_spectrogram(&spec).unwrap();
        assert_eq!(p.slice(ndarray::s![..3]).to_vec(), vec![2.5, 2.5, 2.5]);
        assert_eq!(p.slice(ndarray::s![3..]).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_time_reversal_invariant() {
        let values = Array2::from_shape_fn((6, 4), |(i, j)| (i * 7 + j * 3) as f64 * 0.1);
        let mut reversed = values.clone();
        reversed.invert_axis(Axis(0));
        let a = pool_spectrogram(&Spectrogram {
            values,
            clip_id: "a".into(),
        })
        .unwrap();
        let b = pool_spectrogram(&Spectrogram {
            values: reversed,
            clip_id: "b".into(),
        })
        .unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_two_frame_closed_form() {
        let spec = Spectrogram {
            values: array![[0.0], [2.0]],
            clip_id: "c".into(),
        };
        let p = pool_spectrogram(&spec).unwrap();
        assert_eq!(p[0], 1.0); // mean
        assert_eq!(p[1], 1.0); // population std
    }

    #[test]
    fn pool_single_frame_rejected() {
        let spec = Spectrogram {
            values: Array2::zeros((1, 3)),
            clip_id: "c".into(),
        };
        assert!(matches!(pool_spectrogram(&spec), Err(Error::Size(_))));
    }

    #[test]
    fn single_machine_corpus_rejected() {
        let mut spec = crate::corpus::CorpusSpec::default_demo();
        spec.machines.truncate(1);
        spec.duration_s = 4.0;
        spec.n_train_source = 1;
        spec.n_train_target = 0;
        spec.n_test = 0;
        let clips = crate::corpus::generate_corpus(&spec).unwrap();
        let refs: Vec<&AudioClip> = clips.iter().collect();
        let cfg = DiscConfig {
            epochs: 1,
            batch_segments: 4,
            ..DiscConfig::default()
        };
        assert!(matches!(
            train_disc("rotor", &refs, &MelConfig::disc_preset(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn id_loss_invariant_to_class_relabeling_at_init() {
        // Permuting section label indices together with head rows leaves
        // the per-section loss unchanged.
        use crate::net::Layer;
        let emb = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.3 - 0.5);
        let head = MlpModel {
            layers: vec![Layer {
                weight: array![[0.2, -0.1, 0.4], [0.0, 0.3, -0.2], [0.5, 0.1, 0.0]],
                bias: array![0.1, -0.1, 0.0],
                activation: Activation::Linear,
            }],
        };
        let mut targets = Array2::zeros((4, 3));
        for (i, c) in [0usize, 2, 1, 0].iter().enumerate() {
            targets[(i, *c)] = 1.0;
        }
        let out = head.forward(&emb).unwrap();
        let (loss, _) = loss_and_output_grad(LossKind::IdBce, &out, &targets).unwrap();

        // Permutation (0 1 2) -> (2 0 1) applied to head rows and labels.
        let perm = [2usize, 0, 1];
        let mut pw = head.layers[0].weight.clone();
        let mut pb = head.layers[0].bias.clone();
        for (new, &old) in perm.iter().enumerate() {
            pw.row_mut(new).assign(&head.layers[0].weight.row(old));
            pb[new] = head.layers[0].bias[old];
        }
        let permuted_head = MlpModel {
            layers: vec![Layer {
                weight: pw,
                bias: pb,
                activation: Activation::Linear,
            }],
        };
        let mut permuted_targets = Array2::zeros((4, 3));
        for i in 0..4 {
            for (new, &old) in perm.iter().enumerate() {
                permuted_targets[(i, new)] = targets[(i, old)];
            }
        }
        let pout = permuted_head.forward(&emb).unwrap();
        let (ploss, _) = loss_and_output_grad(LossKind::IdBce, &pout, &permuted_targets).unwrap();
        assert!((loss - ploss).abs() < 1e-12);
    }
}
