//! Single JSON configuration for the whole pipeline.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::evalharness::EvalConfig;
use crate::nnet::TrainConfig;
use crate::screen::{CorpusOptions, ScreenThresholds};
use crate::synthppg::SynthConfig;

/// A group of records drawn from one generator template. Heart rate and PVC
/// rate are drawn uniformly per record from the given closed ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub label: String,
    pub n_records: usize,
    pub hr_range_bpm: [f64; 2],
    pub pvc_rate_range_per_min: [f64; 2],
    pub template: SynthConfig,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            label: "default".into(),
            n_records: 10,
            hr_range_bpm: [40.0, 170.0],
            pvc_rate_range_per_min: [0.0, 0.0],
            template: SynthConfig::default(),
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() || self.label.contains(['/', '\\', ',', '\n']) {
            return Err(Error::config(
                "populations.label",
                format!("unusable label {:?}", self.label),
            ));
        }
        let [lo, hi] = self.hr_range_bpm;
        if !(lo <= hi) {
            return Err(Error::config("populations.hr_range_bpm", "low must not exceed high"));
        }
        let [plo, phi] = self.pvc_rate_range_per_min;
        if !(0.0 <= plo && plo <= phi && phi.is_finite()) {
            return Err(Error::config(
                "populations.pvc_rate_range_per_min",
                "need 0 <= low <= high",
            ));
        }
        // The extremes of the ranges must themselves be valid generator configs.
        for (hr, pvc) in [(lo, plo), (hi, phi)] {
            SynthConfig {
                base_hr_bpm: hr,
                pvc_rate_per_min: pvc,
                ..self.template.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Per-record generator configs; a pure function of `global_seed` and the label.
    pub fn record_configs(&self, global_seed: u64) -> Vec<SynthConfig> {
        let digest = Sha256::new()
            .chain_update(global_seed.to_le_bytes())
            .chain_update(self.label.as_bytes())
            .finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        let draw = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        (0..self.n_records)
            .map(|_| SynthConfig {
                seed: rng.gen(),
                base_hr_bpm: draw(&mut rng, self.hr_range_bpm),
                pvc_rate_per_min: draw(&mut rng, self.pvc_rate_range_per_min),
                ..self.template.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub populations: Vec<PopulationSpec>,
    pub screen: ScreenThresholds,
    pub corpus: CorpusOptions,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            populations: vec![
                PopulationSpec {
                    label: "clean".into(),
                    ..PopulationSpec::default()
                },
                PopulationSpec {
                    label: "pvc".into(),
                    pvc_rate_range_per_min: [1.0, 4.0],
                    ..PopulationSpec::default()
                },
            ],
            screen: ScreenThresholds::default(),
            corpus: CorpusOptions::default(),
            train: TrainConfig::default(),
            detector: DetectorConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.populations.is_empty() {
            return Err(Error::config("populations", "at least one population is required"));
        }
        for (i, p) in self.populations.iter().enumerate() {
            p.validate()?;
            if self.populations[..i].iter().any(|q| q.label == p.label) {
                return Err(Error::config(
                    "populations.label",
                    format!("duplicate label {:?}", p.label),
                ));
            }
        }
        self.screen.validate()?;
        self.train.validate()?;
        self.detector.validate()?;
        self.eval.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
