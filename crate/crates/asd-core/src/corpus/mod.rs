//! Synthetic labeled machine-sound corpora plus WAV/manifest ingestion.
//!
//! The generator mirrors the structure of a condition-monitoring benchmark:
//! per-machine sections, source/target domains, normal-only training data and
//! labeled test data. Every clip is a pure function of `(spec, clip_id)`, so
//! generation order and parallel schedule never affect the output.

mod manifest;
mod synth;
mod wav;

pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use wav::{load_wav, save_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Section index carrying the single-section discrepancy in `Reversal` mode.
pub const REVERSAL_SECTION: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Parse(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            other => Err(Error::Parse(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
}

/// Metadata of one audio observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub machine: String,
    pub section: u8,
    pub domain: Domain,
    pub label: Label,
    pub split: Split,
}

/// One observation: metadata plus raw amplitudes.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub meta: ClipMeta,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Acoustic character of one synthetic machine type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub name: String,
    /// Per-section fundamental frequency in Hz; length = section count (max 6).
    pub fundamentals_hz: Vec<f64>,
    pub n_harmonics: usize,
    /// Harmonic amplitude rolloff exponent: amp_h = h^-rolloff.
    pub harmonic_rolloff: f64,
    /// RMS level of the filtered noise floor relative to the harmonic stack.
    pub noise_level: f64,
    /// One-pole lowpass coefficient in [0, 1) shaping the noise floor.
    pub noise_lowpass: f64,
}

/// Perturbations applied to the target domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    pub gain_db: f64,
    /// Extra background noise level added in the target domain.
    pub noise_level: f64,
    pub noise_lowpass: f64,
    /// Relative fundamental detune, e.g. 0.02 for +2 %.
    pub detune: f64,
}

/// Perturbations that turn a normal clip into an anomalous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyModel {
    /// Relative detune applied to a subset of harmonics.
    pub harmonic_detune: f64,
    /// Fraction of harmonics that get detuned.
    pub detune_fraction: f64,
    /// Level of fault resonance tones relative to the harmonic stack.
    pub extra_tone_level: f64,
    /// Fixed resonance frequencies excited by the fault, chosen above the
    /// harmonic stacks of every section so no normal clip has energy there.
    pub extra_tone_hz: Vec<f64>,
    /// Peak amplitude of broadband bursts relative to the harmonic stack.
    pub burst_energy: f64,
    pub burst_count: usize,
    /// Amplitude-modulation depth in [0, 1].
    pub am_depth: f64,
    pub am_rate_hz: f64,
}

/// Label-independent impulsive contamination present on every clip: short
/// broadband bursts whose count and strength vary per clip. They inject
/// clip-level score noise that summary statistics over 4 s segments barely
/// register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientModel {
    /// Per-clip burst count is drawn uniformly from 0..=burst_count_max.
    pub burst_count_max: usize,
    /// Peak amplitude relative to the harmonic stack.
    pub burst_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscrepancyMode {
    /// No engineered train/test discrepancy.
    None,
    /// Target-domain normal test clips of section [`REVERSAL_SECTION`] are
    /// shifted far away from the training statistics while the anomalous
    /// clips of the same cell stay source-like, inverting inlier-model
    /// score orderings.
    Reversal,
}

/// Full description of a synthetic corpus. Identical `(spec, seed)` pairs
/// reproduce byte-identical sample sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub machines: Vec<MachineSpec>,
    /// Training clips per (machine, section) in the source domain.
    pub n_train_source: usize,
    /// Training clips per (machine, section) in the target domain.
    pub n_train_target: usize,
    /// Test clips per (machine, section, domain, label).
    pub n_test: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub domain_shift: DomainShift,
    pub ambient: AmbientModel,
    pub anomaly: AnomalyModel,
    pub discrepancy_mode: DiscrepancyMode,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.machines.is_empty() {
            return Err(Error::Config("corpus spec has zero machines".into()));
        }
        for m in &self.machines {
            if m.fundamentals_hz.is_empty() || m.fundamentals_hz.len() > 6 {
                return Err(Error::Config(format!(
                    "machine `{}` must have 1..=6 sections, got {}",
                    m.name,
                    m.fundamentals_hz.len()
                )));
            }
            if m.n_harmonics == 0 {
                return Err(Error::Config(format!(
                    "machine `{}` needs at least one harmonic",
                    m.name
                )));
            }
        }
        if self.duration_s <= 0.0 {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic enumeration of every clip in the corpus.
    pub fn plan(&self) -> Result<Vec<ClipMeta>> {
        self.validate()?;
        let mut metas = Vec::new();
        for machine in &self.machines {
            for section in 0..machine.fundamentals_hz.len() as u8 {
                for (domain, count) in [
                    (Domain::Source, self.n_train_source),
                    (Domain::Target, self.n_train_target),
                ] {
                    for i in 0..count {
                        metas.push(self.meta(
                            &machine.name,
                            section,
                            domain,
                            Label::Normal,
                            Split::Train,
                            i,
                        ));
                    }
                }
                for domain in [Domain::Source, Domain::Target] {
                    for label in [Label::Normal, Label::Anomalous] {
                        for i in 0..self.n_test {
                            metas.push(self.meta(
                                &machine.name,
                                section,
                                domain,
                                label,
                                Split::Test,
                                i,
                            ));
                        }
                    }
                }
            }
        }
        Ok(metas)
    }

    fn meta(
        &self,
        machine: &str,
        section: u8,
        domain: Domain,
        label: Label,
        split: Split,
        index: usize,
    ) -> ClipMeta {
        let clip_id = format!(
            "{machine}_sec{section}_{}_{}_{}_{index:03}",
            domain.as_str(),
            label.as_str(),
            split.as_str()
        );
        ClipMeta {
            clip_id,
            machine: machine.to_string(),
            section,
            domain,
            label,
            split,
        }
    }

    /// Default desk-scale demo corpus: two machine types, six sections each.
    pub fn default_demo() -> Self {
        CorpusSpec {
            machines: vec![
                MachineSpec {
                    name: "rotor".into(),
                    fundamentals_hz: vec![110.0, 132.0, 155.0, 180.0, 205.0, 230.0],
                    n_harmonics: 12,
                    harmonic_rolloff: 0.8,
                    noise_level: 0.25,
                    noise_lowpass: 0.9,
                },
                MachineSpec {
                    name: "slider".into(),
                    fundamentals_hz: vec![260.0, 290.0, 320.0, 355.0, 390.0, 425.0],
                    n_harmonics: 8,
                    harmonic_rolloff: 0.5,
                    noise_level: 0.35,
                    noise_lowpass: 0.7,
                },
            ],
            n_train_source: 6,
            n_train_target: 2,
            n_test: 10,
            duration_s: 10.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            domain_shift: DomainShift {
                gain_db: 3.0,
                noise_level: 0.10,
                noise_lowpass: 0.5,
                detune: 0.02,
            },
            ambient: AmbientModel {
                burst_count_max: 12,
                burst_energy: 1.2,
            },
            anomaly: AnomalyModel {
                harmonic_detune: 0.02,
                detune_fraction: 0.4,
                extra_tone_level: 0.08,
                extra_tone_hz: vec![4200.0, 6300.0],
                burst_energy: 0.0,
                burst_count: 0,
                am_depth: 0.0,
                am_rate_hz: 3.0,
            },
            discrepancy_mode: DiscrepancyMode::None,
            seed: 7,
        }
    }

    /// Demo corpus with the engineered section-5 target-domain discrepancy.
    pub fn default_reversal() -> Self {
        CorpusSpec {
            discrepancy_mode: DiscrepancyMode::Reversal,
            ..Self::default_demo()
        }
    }
}

/// Generate one clip. Pure in `(spec, meta.clip_id)`.
pub fn generate_clip(spec: &CorpusSpec, meta: &ClipMeta) -> Result<AudioClip> {
    let machine = spec
        .machines
        .iter()
        .find(|m| m.name == meta.machine)
        .ok_or_else(|| Error::Config(format!("unknown machine `{}`", meta.machine)))?;
    Ok(synth::synthesize(spec, machine, meta))
}

/// Generate the whole corpus in memory. Parallel over clips; output order
/// follows [`CorpusSpec::plan`].
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<AudioClip>> {
    let plan = spec.plan()?;
    parallel::try_map(&plan, |meta| generate_clip(spec, meta))
}

/// Rescale to zero mean and unit (population) variance.
pub fn standardize(clip: &AudioClip) -> Result<AudioClip> {
    let n = clip.samples.len();
    if n == 0 {
        return Err(Error::Degenerate("empty clip".into()));
    }
    let mean = clip.samples.iter().sum::<f64>() / n as f64;
    let var = clip
        .samples
        .iter()
        .map(|&s| (s - mean) * (s - mean))
        .sum::<f64>()
        / n as f64;
    if var <= 1e-12 {
        return Err(Error::Degenerate(format!(
            "clip `{}` is (near-)constant, variance {var:.3e}",
            clip.meta.clip_id
        )));
    }
    let std = var.sqrt();
    Ok(AudioClip {
        meta: clip.meta.clone(),
        samples: clip.samples.iter().map(|&s| (s - mean) / std).collect(),
        sample_rate: clip.sample_rate,
    })
}
