//! Top-level run configuration: one JSON document covering corpus synthesis,
//! both front ends, both models, smoothing, and the experiment grids.
//! Unknown keys are rejected so typos fail loudly.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::ae::AeConfig;
use crate::corpus::CorpusSpec;
use crate::disc::DiscConfig;
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::smooth::SmoothConfig;

/// Environment variable that overrides `out_dir` without touching the file.
pub const OUT_DIR_ENV: &str = "ASD_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub mel_ae: MelConfig,
    pub mel_disc: MelConfig,
    pub ae: AeConfig,
    pub disc: DiscConfig,
    pub gmm_components: usize,
    pub smooth: SmoothConfig,
    /// Ensemble sizes tried by the sweep, ascending.
    pub sweep_ks: Vec<usize>,
    pub subsample_fractions: Vec<f64>,
    pub subsample_trials: u32,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusSpec::default_demo(),
            mel_ae: MelConfig::ae_preset(),
            mel_disc: MelConfig::disc_preset(),
            ae: AeConfig::default(),
            disc: DiscConfig::default(),
            gmm_components: 1,
            smooth: SmoothConfig::default(),
            sweep_ks: vec![1, 2, 4, 8, 16],
            subsample_fractions: (1..=20).map(|i| i as f64 / 20.0).collect(),
            subsample_trials: 20,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.mel_ae.validate(self.corpus.sample_rate)?;
        self.mel_disc.validate(self.corpus.sample_rate)?;
        if self.gmm_components == 0 {
            return Err(Error::Config("gmm_components must be >= 1".into()));
        }
        if self.smooth.k == 0 {
            return Err(Error::Config("smooth.k must be >= 1".into()));
        }
        if self.sweep_ks.is_empty() || self.sweep_ks.contains(&0) {
            return Err(Error::Config("sweep_ks must be non-empty with every K >= 1".into()));
        }
        if !self.sweep_ks.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("sweep_ks must be strictly ascending".into()));
        }
        if self.subsample_fractions.is_empty()
            || self.subsample_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(Error::Config(
                "subsample_fractions must be non-empty with every value in (0, 1]".into(),
            ));
        }
        if self.subsample_trials == 0 {
            return Err(Error::Config("subsample_trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Load a config file; `None` or an empty/whitespace file means defaults.
/// `ASD_OUT_DIR`, when set, overrides `out_dir` either way.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            if text.trim().is_empty() {
                RunConfig::default()
            } else {
                serde_json::from_str(&text).map_err(|e| {
                    Error::Parse(format!("config {}: {e}", p.display()))
                })?
            }
        }
    };
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.out_dir = PathBuf::from(dir);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn empty_file_is_defaults() {
        let f = NamedTempFile::new().unwrap();
        let cfg = load_config(Some(f.path())).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_file_overrides_one_field() {
        let mut f = NamedTempFile::new().unwrap();
        write!(f, "{{\"gmm_components\": 3}}").unwrap();
        let cfg = load_config(Some(f.path())).unwrap();
        assert_eq!(cfg.gmm_components, 3);
        assert_eq!(cfg.sweep_ks, RunConfig::default().sweep_ks);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut f = NamedTempFile::new().unwrap();
        write!(f, "{{\"gmm_component\": 3}}").unwrap();
        assert!(matches!(load_config(Some(f.path())), Err(Error::Parse(_))));
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.sweep_ks = vec![4, 2];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.subsample_fractions = vec![0.0];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.smooth.k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
