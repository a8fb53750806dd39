//! Command line front end. Every stage reads and writes files under one
//! output directory so a full run can be driven step by step or all at once
//! with `demo`.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 1 anything else.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use asd_core::config::{load_config, RunConfig};
use asd_core::corpus::{read_manifest, CorpusSpec};
use asd_core::error::Error;
use asd_core::eval::{self, SectionSplit};
use asd_core::pipeline::{self, embeddings_path, manifest_path, models_dir, scores_path};
use asd_core::smooth::{self, DomainFilter};
use asd_core::table::{EmbeddingTable, ScoreTable};

#[derive(Parser)]
#[command(name = "asd", about = "Anomalous sound detection with score smoothing", version)]
struct Cli {
    /// JSON config file; omitted or empty means built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config file and ASD_OUT_DIR).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; 0 uses all available cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    SourceOnly,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Validation,
    Evaluation,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the corpus WAVs and manifest.
    Synth {
        /// Use the corpus variant whose section-5 target normals drift far
        /// from the training distribution.
        #[arg(long)]
        reversal: bool,
    },
    /// Train one autoencoder per machine.
    TrainAe,
    /// Score test clips with the autoencoders (writes scores.csv).
    Score,
    /// Train one discriminative embedder per machine.
    TrainDisc,
    /// Embed test clips and report machine classification accuracy.
    Embed,
    /// Fit per-section GMM inlier models and append score_gmm.
    BaselineGmm,
    /// Append the neighborhood-smoothed score column.
    Smooth {
        /// Ensemble size; defaults to the config value.
        #[arg(long)]
        k: Option<usize>,
        /// Neighbor pool domain filter; defaults to the config value.
        #[arg(long, value_enum)]
        pool: Option<PoolArg>,
    },
    /// Grid-search K and the pool filter on validation sections.
    Sweep,
    /// Evaluate one score column.
    Eval {
        #[arg(long, default_value = "score_smooth")]
        column: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Evaluation)]
        split: SplitArg,
    },
    /// Observed-set subsampling robustness experiment.
    Subsample,
    /// Full pipeline: synth, train, score, sweep, smooth, evaluate.
    Demo {
        #[arg(long)]
        reversal: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn reversal_corpus(base: &CorpusSpec) -> CorpusSpec {
    let mut spec = CorpusSpec::default_reversal();
    spec.n_train_source = base.n_train_source;
    spec.n_train_target = base.n_train_target;
    spec.n_test = base.n_test;
    spec.duration_s = base.duration_s;
    spec
}

fn run(cli: Cli) -> asd_core::Result<()> {
    asd_core::parallel::init_thread_pool(cli.threads);
    let mut cfg: RunConfig = load_config(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let out = cfg.out_dir.clone();

    match cli.command {
        Command::Synth { reversal } => {
            if reversal {
                cfg.corpus = reversal_corpus(&cfg.corpus);
            }
            std::fs::create_dir_all(&out)?;
            let manifest = pipeline::stage_synth(&cfg.corpus, &out.join("corpus"))?;
            println!("wrote {}", manifest.display());
        }
        Command::TrainAe => {
            let entries = read_manifest(&manifest_path(&out))?;
            let trained = pipeline::stage_train_ae(&entries, &cfg.mel_ae, &cfg.ae, &models_dir(&out))?;
            for (machine, t) in &trained {
                println!(
                    "{machine}: final loss {:.6}",
                    t.loss_history.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Score => {
            let entries = read_manifest(&manifest_path(&out))?;
            let models = pipeline::load_ae_models(&entries, &models_dir(&out))?;
            let table = pipeline::stage_score_gen(&entries, &models, &cfg.mel_ae, &cfg.ae)?;
            table.write_csv(&scores_path(&out))?;
            println!("wrote {} ({} rows)", scores_path(&out).display(), table.len());
        }
        Command::TrainDisc => {
            let entries = read_manifest(&manifest_path(&out))?;
            let models =
                pipeline::stage_train_disc(&entries, &cfg.mel_disc, &cfg.disc, &models_dir(&out))?;
            println!("trained {} embedders", models.len());
        }
        Command::Embed => {
            let entries = read_manifest(&manifest_path(&out))?;
            let models = pipeline::load_disc_models(&entries, &models_dir(&out))?;
            let outcome = pipeline::stage_embed(&entries, &models, &cfg.mel_disc)?;
            outcome.table.write_csv(&embeddings_path(&out))?;
            println!("machine accuracy: {:.3}", outcome.machine_accuracy);
        }
        Command::BaselineGmm => {
            let entries = read_manifest(&manifest_path(&out))?;
            let models = pipeline::load_disc_models(&entries, &models_dir(&out))?;
            let gmms = pipeline::stage_fit_gmm(
                &entries,
                &models,
                &cfg.mel_disc,
                cfg.gmm_components,
                cfg.corpus.seed,
                &models_dir(&out),
            )?;
            let mut table = ScoreTable::read_csv(&scores_path(&out))?;
            let embeddings = EmbeddingTable::read_csv(&embeddings_path(&out))?;
            pipeline::stage_score_gmm(&mut table, &embeddings, &gmms)?;
            table.write_csv(&scores_path(&out))?;
            println!("appended score_gmm for {} section models", gmms.len());
        }
        Command::Smooth { k, pool } => {
            let mut scfg = cfg.smooth;
            if let Some(k) = k {
                scfg.k = k;
            }
            if let Some(pool) = pool {
                scfg.domain_filter = match pool {
                    PoolArg::SourceOnly => DomainFilter::SourceOnly,
                    PoolArg::All => DomainFilter::All,
                };
            }
            let table = ScoreTable::read_csv(&scores_path(&out))?;
            let embeddings = EmbeddingTable::read_csv(&embeddings_path(&out))?;
            let smoothed = smooth::batch_smooth_table(&table, &embeddings, &scfg)?;
            smoothed.write_csv(&scores_path(&out))?;
            println!("smoothed with K={} pool={}", scfg.k, scfg.domain_filter.as_str());
        }
        Command::Sweep => {
            let table = ScoreTable::read_csv(&scores_path(&out))?;
            let embeddings = EmbeddingTable::read_csv(&embeddings_path(&out))?;
            let result = eval::sweep(&table, &embeddings, &cfg.sweep_ks, cfg.smooth.metric)?;
            let text =
                serde_json::to_string_pretty(&result).map_err(|e| Error::Parse(e.to_string()))?;
            std::fs::write(out.join("sweep.json"), text + "\n")?;
            let chosen = result.chosen_entry();
            println!(
                "chosen: K={} pool={} (validation {:.2}, evaluation {:.2})",
                chosen.k,
                chosen.domain_filter.as_str(),
                chosen.validation_score,
                chosen.evaluation_score
            );
        }
        Command::Eval { column, split } => {
            let table = ScoreTable::read_csv(&scores_path(&out))?;
            let split = match split {
                SplitArg::Validation => Some(SectionSplit::Validation),
                SplitArg::Evaluation => Some(SectionSplit::Evaluation),
                SplitArg::Both => None,
            };
            let report = eval::evaluate(&table, &column, split)?;
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
            println!("{text}");
        }
        Command::Subsample => {
            let table = ScoreTable::read_csv(&scores_path(&out))?;
            let embeddings = EmbeddingTable::read_csv(&embeddings_path(&out))?;
            let rows = eval::subsample_experiment(
                &table,
                &embeddings,
                &cfg.smooth,
                &cfg.subsample_fractions,
                cfg.subsample_trials,
                cfg.corpus.seed,
            )?;
            pipeline::write_subsample_csv(&out.join("subsample.csv"), &rows)?;
            println!("wrote {} ({} rows)", out.join("subsample.csv").display(), rows.len());
        }
        Command::Demo { reversal } => {
            if reversal {
                cfg.corpus = reversal_corpus(&cfg.corpus);
            }
            let summary = pipeline::run_demo(&cfg)?;
            print!("{}", pipeline::summary_text(&summary));
        }
    }
    Ok(())
}
