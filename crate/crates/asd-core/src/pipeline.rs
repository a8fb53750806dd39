//! End-to-end orchestration: corpus synthesis, per-machine training of the
//! generative and discriminative models, the inlier-model baseline, score
//! smoothing, and the experiment reports.
//!
//! Stages operate on the on-disk layout under one output directory:
//!
//! ```text
//! out/
//!   corpus/manifest.csv, corpus/audio/*.wav
//!   models/ae_<machine>.json, disc_<machine>.json, gmm_<machine>.json
//!   scores.csv          score_gen, score_gmm, score_smooth
//!   embeddings.csv
//!   sweep.json, subsample.csv, run.json
//! ```
//!
//! Clips are loaded from WAV on demand so full corpora never sit in memory.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::ae::{self, AeConfig, TrainedAe};
use crate::config::RunConfig;
use crate::corpus::{
    generate_clip, load_wav, read_manifest, save_wav, write_manifest, AudioClip, ClipMeta,
    CorpusSpec, ManifestEntry, Split,
};
use crate::disc::{self, segment_pooled, DiscConfig, DiscModel};
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, SectionSplit, SubsampleRow, SweepResult};
use crate::gmm::{fit_gmm, gmm_score, GmmModel};
use crate::net::MlpModel;
use crate::parallel;
use crate::smooth::{self, SmoothConfig};
use crate::table::{EmbeddingTable, RowMeta, ScoreTable};

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("corpus").join("manifest.csv")
}

pub fn models_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("models")
}

pub fn scores_path(out_dir: &Path) -> PathBuf {
    out_dir.join("scores.csv")
}

pub fn embeddings_path(out_dir: &Path) -> PathBuf {
    out_dir.join("embeddings.csv")
}

pub fn ae_model_path(models: &Path, machine: &str) -> PathBuf {
    models.join(format!("ae_{machine}.json"))
}

pub fn disc_model_path(models: &Path, machine: &str) -> PathBuf {
    models.join(format!("disc_{machine}.json"))
}

pub fn gmm_model_path(models: &Path, machine: &str, section: u8) -> PathBuf {
    models.join(format!("gmm_{machine}_s{section}.json"))
}

/// Synthesize every clip of the corpus into `dir/audio` and write the
/// manifest. Clips are generated and saved one at a time.
pub fn stage_synth(spec: &CorpusSpec, dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio)?;
    let plan = spec.plan()?;
    let entries: Vec<(ClipMeta, PathBuf)> = parallel::try_map(&plan, |meta| {
        let clip = generate_clip(spec, meta)?;
        let path = audio.join(format!("{}.wav", meta.clip_id));
        save_wav(&path, &clip)?;
        Ok((meta.clone(), path))
    })?;
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

pub fn load_entry(entry: &ManifestEntry) -> Result<AudioClip> {
    load_wav(&entry.path, entry.meta.clone())
}

/// Distinct machine names, ascending.
pub fn machine_list(entries: &[ManifestEntry]) -> Vec<String> {
    let mut machines: Vec<String> = entries.iter().map(|e| e.meta.machine.clone()).collect();
    machines.sort();
    machines.dedup();
    machines
}

/// Test-split entries ordered by clip_id; every table in the pipeline uses
/// this row order.
pub fn test_entries(entries: &[ManifestEntry]) -> Vec<ManifestEntry> {
    let mut test: Vec<ManifestEntry> = entries
        .iter()
        .filter(|e| e.meta.split == Split::Test)
        .cloned()
        .collect();
    test.sort_by(|a, b| a.meta.clip_id.cmp(&b.meta.clip_id));
    test
}

fn load_subset(entries: &[ManifestEntry], pred: impl Fn(&ClipMeta) -> bool) -> Result<Vec<AudioClip>> {
    let subset: Vec<&ManifestEntry> = entries.iter().filter(|e| pred(&e.meta)).collect();
    parallel::try_map(&subset, |e| load_entry(e))
}

/// Train one autoencoder per machine on its normal training clips and save
/// each model under `models_dir`.
pub fn stage_train_ae(
    entries: &[ManifestEntry],
    mel: &MelConfig,
    cfg: &AeConfig,
    models_dir: &Path,
) -> Result<Vec<(String, TrainedAe)>> {
    std::fs::create_dir_all(models_dir)?;
    let mut out = Vec::new();
    for machine in machine_list(entries) {
        let clips = load_subset(entries, |m| m.machine == machine && m.split == Split::Train)?;
        let refs: Vec<&AudioClip> = clips.iter().collect();
        let trained = ae::train_ae(&refs, mel, cfg)?;
        trained.model.save_json(&ae_model_path(models_dir, &machine))?;
        log::info!(
            "ae[{machine}]: final epoch loss {:.6}",
            trained.loss_history.last().copied().unwrap_or(f64::NAN)
        );
        out.push((machine, trained));
    }
    Ok(out)
}

pub fn load_ae_models(entries: &[ManifestEntry], models_dir: &Path) -> Result<Vec<(String, MlpModel)>> {
    machine_list(entries)
        .into_iter()
        .map(|m| {
            let model = MlpModel::load_json(&ae_model_path(models_dir, &m))?;
            Ok((m, model))
        })
        .collect()
}

fn model_for<'a, T>(models: &'a [(String, T)], machine: &str) -> Result<&'a T> {
    models
        .iter()
        .find(|(m, _)| m == machine)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Config(format!("no model for machine `{machine}`")))
}

/// Score every test clip with its machine's autoencoder; returns a table
/// with a `score_gen` column.
pub fn stage_score_gen(
    entries: &[ManifestEntry],
    models: &[(String, MlpModel)],
    mel: &MelConfig,
    cfg: &AeConfig,
) -> Result<ScoreTable> {
    let test = test_entries(entries);
    let scores = parallel::try_map(&test, |e| {
        let clip = load_entry(e)?;
        ae::score_clip(model_for(models, &e.meta.machine)?, &clip, mel, cfg)
    })?;
    let mut table = ScoreTable::new(test.iter().map(|e| RowMeta::from(&e.meta)).collect());
    table.add_column("score_gen", scores)?;
    Ok(table)
}

/// Train one discriminative embedder per machine; the other machines'
/// training clips serve as pseudo-anomalies.
pub fn stage_train_disc(
    entries: &[ManifestEntry],
    mel: &MelConfig,
    cfg: &DiscConfig,
    models_dir: &Path,
) -> Result<Vec<(String, DiscModel)>> {
    std::fs::create_dir_all(models_dir)?;
    let train = load_subset(entries, |m| m.split == Split::Train)?;
    let refs: Vec<&AudioClip> = train.iter().collect();
    let mut out = Vec::new();
    for machine in machine_list(entries) {
        let trained = disc::train_disc(&machine, &refs, mel, cfg)?;
        trained.model.save_json(&disc_model_path(models_dir, &machine))?;
        log::info!(
            "disc[{machine}]: final epoch loss {:.6}",
            trained.loss_history.last().copied().unwrap_or(f64::NAN)
        );
        out.push((machine, trained.model));
    }
    Ok(out)
}

pub fn load_disc_models(entries: &[ManifestEntry], models_dir: &Path) -> Result<Vec<(String, DiscModel)>> {
    machine_list(entries)
        .into_iter()
        .map(|m| {
            let model = DiscModel::load_json(&disc_model_path(models_dir, &m))?;
            Ok((m, model))
        })
        .collect()
}

/// Per-clip embedding plus machine classification, from one front-end pass.
pub struct EmbedOutcome {
    pub table: EmbeddingTable,
    /// Fraction of test clips whose machine head argmax matches the truth.
    pub machine_accuracy: f64,
}

/// Embed every test clip with its own machine's model and classify it with
/// all machine heads.
pub fn stage_embed(
    entries: &[ManifestEntry],
    models: &[(String, DiscModel)],
    mel: &MelConfig,
) -> Result<EmbedOutcome> {
    let test = test_entries(entries);
    let per_clip: Vec<(Array1<f64>, bool)> = parallel::try_map(&test, |e| {
        let clip = load_entry(e)?;
        let pooled = segment_pooled(&clip, mel)?;
        let embedding = model_for(models, &e.meta.machine)?.embed_pooled(&pooled)?;
        let mut best: Option<(&str, f64)> = None;
        for (machine, model) in models {
            let p = model.machine_probability_pooled(&pooled)?;
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((machine, p));
            }
        }
        Ok((embedding, best.unwrap().0 == e.meta.machine))
    })?;

    let dim = per_clip[0].0.len();
    let mut features = Array2::zeros((per_clip.len(), dim));
    let mut correct = 0usize;
    for (i, (emb, hit)) in per_clip.iter().enumerate() {
        features.row_mut(i).assign(emb);
        correct += usize::from(*hit);
    }
    Ok(EmbedOutcome {
        table: EmbeddingTable {
            clip_ids: test.iter().map(|e| e.meta.clip_id.clone()).collect(),
            features,
        },
        machine_accuracy: correct as f64 / per_clip.len() as f64,
    })
}

/// Fit one GMM per (machine, section) on the embeddings of that cell's
/// training clips and save each model.
pub fn stage_fit_gmm(
    entries: &[ManifestEntry],
    models: &[(String, DiscModel)],
    mel: &MelConfig,
    n_components: usize,
    seed: u64,
    models_dir: &Path,
) -> Result<Vec<((String, u8), GmmModel)>> {
    std::fs::create_dir_all(models_dir)?;
    let mut cells: Vec<(String, u8)> = entries
        .iter()
        .filter(|e| e.meta.split == Split::Train)
        .map(|e| (e.meta.machine.clone(), e.meta.section))
        .collect();
    cells.sort();
    cells.dedup();

    let mut out = Vec::new();
    for (machine, section) in cells {
        let model = model_for(models, &machine)?;
        let train: Vec<&ManifestEntry> = entries
            .iter()
            .filter(|e| {
                e.meta.machine == machine
                    && e.meta.section == section
                    && e.meta.split == Split::Train
            })
            .collect();
        let embeddings: Vec<Array1<f64>> =
            parallel::try_map(&train, |e| model.embed(&load_entry(e)?, mel))?;
        let dim = embeddings[0].len();
        let mut data = Array2::zeros((embeddings.len(), dim));
        for (i, e) in embeddings.iter().enumerate() {
            data.row_mut(i).assign(e);
        }
        let fit = fit_gmm(&data, n_components, seed)?;
        fit.model.save_json(&gmm_model_path(models_dir, &machine, section))?;
        out.push(((machine, section), fit.model));
    }
    Ok(out)
}

/// Negative log-likelihood of each table row's embedding under its
/// (machine, section) inlier model, appended as `score_gmm`.
pub fn stage_score_gmm(
    table: &mut ScoreTable,
    embeddings: &EmbeddingTable,
    gmms: &[((String, u8), GmmModel)],
) -> Result<()> {
    let scores: Result<Vec<f64>> = table
        .rows
        .iter()
        .map(|r| {
            let feature = embeddings.feature_of(&r.clip_id).ok_or_else(|| {
                Error::DataIntegrity(format!("no embedding for clip `{}`", r.clip_id))
            })?;
            let gmm = gmms
                .iter()
                .find(|((m, s), _)| *m == r.machine && *s == r.section)
                .map(|(_, g)| g)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no inlier model for machine `{}` section {}",
                        r.machine, r.section
                    ))
                })?;
            gmm_score(gmm, &feature)
        })
        .collect();
    table.add_column("score_gmm", scores?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodScores {
    pub hmean_auc: f64,
    pub hmean_pauc: f64,
    pub hmean_all: f64,
}

impl From<&EvalReport> for MethodScores {
    fn from(r: &EvalReport) -> Self {
        MethodScores {
            hmean_auc: r.hmean_auc,
            hmean_pauc: r.hmean_pauc,
            hmean_all: r.hmean_all,
        }
    }
}

/// Everything a full run produces, serialized as `run.json`. Contains no
/// timestamps or host details so repeated runs are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoSummary {
    pub config: RunConfig,
    pub sweep: SweepResult,
    /// Smoothing configuration picked on validation sections.
    pub chosen: SmoothConfig,
    pub disc_machine_accuracy: f64,
    /// Evaluation-section reports per scoring method.
    pub report_gen: EvalReport,
    pub report_smooth: EvalReport,
    pub report_gmm: EvalReport,
    pub subsample: Vec<SubsampleRow>,
}

pub fn write_subsample_csv(path: &Path, rows: &[SubsampleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["fraction", "trial", "score"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record([
            format!("{:.2}", r.fraction),
            r.trial.to_string(),
            crate::table::fmt_f64(r.score),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_subsample_csv(path: &Path) -> Result<Vec<SubsampleRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    for record in r.records() {
        let rec = record.map_err(|e| Error::Format(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        out.push(SubsampleRow {
            fraction: field(0)
                .parse()
                .map_err(|_| Error::Parse(format!("bad fraction `{}`", field(0))))?,
            trial: field(1)
                .parse()
                .map_err(|_| Error::Parse(format!("bad trial `{}`", field(1))))?,
            score: field(2)
                .parse()
                .map_err(|_| Error::Parse(format!("bad score `{}`", field(2))))?,
        });
    }
    Ok(out)
}

/// Run the whole experiment under `cfg.out_dir`.
pub fn run_demo(cfg: &RunConfig) -> Result<DemoSummary> {
    cfg.validate()?;
    let out_dir = &cfg.out_dir;
    std::fs::create_dir_all(out_dir)?;
    let models = models_dir(out_dir);

    let manifest = stage_synth(&cfg.corpus, &out_dir.join("corpus"))?;
    let entries = read_manifest(&manifest)?;
    log::info!("corpus: {} clips", entries.len());

    let ae_models: Vec<(String, MlpModel)> = stage_train_ae(&entries, &cfg.mel_ae, &cfg.ae, &models)?
        .into_iter()
        .map(|(m, t)| (m, t.model))
        .collect();
    let mut table = stage_score_gen(&entries, &ae_models, &cfg.mel_ae, &cfg.ae)?;

    let disc_models = stage_train_disc(&entries, &cfg.mel_disc, &cfg.disc, &models)?;
    let embed = stage_embed(&entries, &disc_models, &cfg.mel_disc)?;
    log::info!("disc machine accuracy: {:.3}", embed.machine_accuracy);

    let gmms = stage_fit_gmm(
        &entries,
        &disc_models,
        &cfg.mel_disc,
        cfg.gmm_components,
        cfg.corpus.seed,
        &models,
    )?;
    stage_score_gmm(&mut table, &embed.table, &gmms)?;

    let sweep = eval::sweep(&table, &embed.table, &cfg.sweep_ks, cfg.smooth.metric)?;
    let chosen = SmoothConfig {
        k: sweep.chosen_entry().k,
        domain_filter: sweep.chosen_entry().domain_filter,
        metric: cfg.smooth.metric,
    };
    let smoothed = smooth::batch_smooth_table(&table, &embed.table, &chosen)?;

    let report_gen = eval::evaluate(&smoothed, "score_gen", Some(SectionSplit::Evaluation))?;
    let report_smooth = eval::evaluate(&smoothed, "score_smooth", Some(SectionSplit::Evaluation))?;
    let report_gmm = eval::evaluate(&smoothed, "score_gmm", Some(SectionSplit::Evaluation))?;

    let subsample = eval::subsample_experiment(
        &table,
        &embed.table,
        &chosen,
        &cfg.subsample_fractions,
        cfg.subsample_trials,
        cfg.corpus.seed,
    )?;

    smoothed.write_csv(&scores_path(out_dir))?;
    embed.table.write_csv(&embeddings_path(out_dir))?;
    write_subsample_csv(&out_dir.join("subsample.csv"), &subsample)?;
    let summary = DemoSummary {
        config: cfg.clone(),
        sweep,
        chosen,
        disc_machine_accuracy: embed.machine_accuracy,
        report_gen,
        report_smooth,
        report_gmm,
        subsample,
    };
    write_json(&out_dir.join("sweep.json"), &summary.sweep)?;
    write_json(&out_dir.join("run.json"), &summary)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Fixed-width comparison of the three scoring methods on the evaluation
/// sections.
pub fn summary_text(summary: &DemoSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "chosen smoothing: K={} pool={}\n",
        summary.chosen.k,
        summary.chosen.domain_filter.as_str()
    ));
    out.push_str(&format!(
        "disc machine accuracy: {:.3}\n\n",
        summary.disc_machine_accuracy
    ));
    out.push_str(&format!(
        "{:<18} {:>10} {:>10} {:>10}\n",
        "method", "hm-AUC", "hm-pAUC", "hm-all"
    ));
    for (name, report) in [
        ("reconstruction", &summary.report_gen),
        ("inlier-gmm", &summary.report_gmm),
        ("smoothed", &summary.report_smooth),
    ] {
        out.push_str(&format!(
            "{:<18} {:>10.2} {:>10.2} {:>10.2}\n",
            name, report.hmean_auc, report.hmean_pauc, report.hmean_all
        ));
    }
    out
}
