//! FFT screen that admits only clean, regular segments into the training corpus.
//!
//! The screen is unsupervised: it looks at spectra only, never at labels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, fft_magnitude, Segment};
use crate::error::{Error, Result};
use crate::par;
use crate::synthppg::LabeledRecord;

/// Pulse band, 35–180 bpm.
pub const PULSE_BAND_HZ: (f64, f64) = (35.0 / 60.0, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralFeatures {
    pub dominant_freq_hz: f64,
    /// Power in the dominant bin ±1 over all non-DC power.
    pub dominant_power_fraction: f64,
    /// Power around twice the dominant frequency over power around the dominant.
    pub harmonic_ratio: f64,
    /// Normalized Shannon entropy of the non-DC power distribution.
    pub spectral_entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenThresholds {
    pub min_dominant_power_fraction: f64,
    pub max_spectral_entropy: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
}

impl Default for ScreenThresholds {
    fn default() -> Self {
        ScreenThresholds {
            min_dominant_power_fraction: 0.35,
            max_spectral_entropy: 0.51,
            band_low_hz: PULSE_BAND_HZ.0,
            band_high_hz: PULSE_BAND_HZ.1,
        }
    }
}

impl ScreenThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_dominant_power_fraction) {
            return Err(Error::config("min_dominant_power_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.max_spectral_entropy) {
            return Err(Error::config("max_spectral_entropy", "must lie in [0, 1]"));
        }
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz) {
            return Err(Error::config("band_low_hz", "band must satisfy 0 < low < high"));
        }
        Ok(())
    }
}

fn band_power(power: &[f64], center: usize) -> f64 {
    let lo = center.saturating_sub(1).max(1);
    let hi = (center + 1).min(power.len() - 1);
    if lo > hi {
        return 0.0;
    }
    power[lo..=hi].iter().sum()
}

/// Spectral features of a normalized segment sampled at `rate_hz`.
pub fn spectral_features(seg: &Segment, rate_hz: f64) -> Result<SpectralFeatures> {
    spectral_features_in_band(seg, rate_hz, PULSE_BAND_HZ)
}

pub fn spectral_features_in_band(seg: &Segment, rate_hz: f64, band: (f64, f64)) -> Result<SpectralFeatures> {
    if seg.flat {
        return Err(Error::InvalidInput(format!(
            "flat segment {}@{} has no spectrum",
            seg.source_record_id, seg.start_s
        )));
    }
    let mag = fft_magnitude(&seg.samples)?;
    let n = seg.samples.len();
    let bin_hz = rate_hz / n as f64;
    let power: Vec<f64> = mag.iter().map(|m| m * m).collect();
    let total: f64 = power[1..].iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("segment has no non-DC power".into()));
    }

    let first = (band.0 / bin_hz).ceil().max(1.0) as usize;
    let last = ((band.1 / bin_hz).floor() as usize).min(power.len() - 1);
    if first > last {
        return Err(Error::InvalidInput("pulse band contains no FFT bin".into()));
    }
    let dom = (first..=last)
        .max_by(|&a, &b| power[a].total_cmp(&power[b]).then(b.cmp(&a)))
        .expect("non-empty band");

    let dom_power = band_power(&power, dom);
    let harmonic = if 2 * dom < power.len() {
        band_power(&power, 2 * dom)
    } else {
        0.0
    };
    let m = power.len() - 1;
    let entropy = -power[1..]
        .iter()
        .map(|p| p / total)
        .filter(|p| *p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
        / (m as f64).ln();

    Ok(SpectralFeatures {
        dominant_freq_hz: dom as f64 * bin_hz,
        dominant_power_fraction: (dom_power / total).clamp(0.0, 1.0),
        harmonic_ratio: if dom_power > 0.0 { harmonic / dom_power } else { 0.0 },
        spectral_entropy: entropy.clamp(0.0, 1.0),
    })
}

pub fn passes(f: &SpectralFeatures, t: &ScreenThresholds) -> bool {
    f.dominant_freq_hz >= t.band_low_hz
        && f.dominant_freq_hz <= t.band_high_hz
        && f.dominant_power_fraction >= t.min_dominant_power_fraction
        && f.spectral_entropy <= t.max_spectral_entropy
}

/// Clean-and-regular decision. Flat or otherwise unanalysable segments are rejected.
pub fn is_clean(seg: &Segment, rate_hz: f64, t: &ScreenThresholds) -> bool {
    spectral_features_in_band(seg, rate_hz, (t.band_low_hz, t.band_high_hz))
        .map(|f| passes(&f, t))
        .unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub thresholds: ScreenThresholds,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub n_records: usize,
    pub n_candidates: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn train_slices(&self) -> Vec<&[f64]> {
        self.train.iter().map(|s| s.samples.as_slice()).collect()
    }

    pub fn val_slices(&self) -> Vec<&[f64]> {
        self.val.iter().map(|s| s.samples.as_slice()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusOptions {
    pub min_segments: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            min_segments: 1000,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Normalized 8 s segments of a raw record after the standard conditioning chain.
pub fn record_segments(record: &LabeledRecord) -> Result<Vec<Segment>> {
    let w = dsp::preprocess(&record.waveform)?;
    dsp::normalized_segments(&w, &record.record_id)
}

/// Screens every segment of `records`, shuffles the survivors and splits them.
pub fn build_training_corpus(
    records: &[LabeledRecord],
    thresholds: &ScreenThresholds,
    opts: &CorpusOptions,
) -> Result<Corpus> {
    thresholds.validate()?;
    if records.is_empty() {
        return Err(Error::InsufficientData(
            "no records supplied to the corpus builder".into(),
        ));
    }
    if !(opts.val_fraction > 0.0 && opts.val_fraction < 1.0) {
        return Err(Error::config("val_fraction", "must lie in (0, 1)"));
    }
    let per_record = par::map(records, |rec| -> Result<(usize, Vec<Segment>)> {
        let segs = record_segments(rec)?;
        let n = segs.len();
        let kept = segs
            .into_iter()
            .filter(|s| is_clean(s, dsp::PIPELINE_RATE_HZ, thresholds))
            .collect();
        Ok((n, kept))
    });
    let mut candidates = 0;
    let mut clean = Vec::new();
    for r in per_record {
        let (n, kept) = r?;
        candidates += n;
        clean.extend(kept);
    }
    if clean.len() < opts.min_segments {
        return Err(Error::InsufficientData(format!(
            "{} clean segments, below min_segments = {}",
            clean.len(),
            opts.min_segments
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    clean.shuffle(&mut rng);
    let n_val = ((clean.len() as f64 * opts.val_fraction).round() as usize).clamp(1, clean.len() - 1);
    let train = clean.split_off(n_val);
    let val = clean;
    Ok(Corpus {
        manifest: CorpusManifest {
            thresholds: *thresholds,
            n_train: train.len(),
            n_val: val.len(),
            seed: opts.seed,
            n_records: records.len(),
            n_candidates: candidates,
        },
        train,
        val,
    })
}

/// Writes `manifest.json`, `train.jsonl` and `val.jsonl` into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&corpus.manifest).map_err(|e| Error::malformed(&p, e))?;
    std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    dsp::write_segments_jsonl(&dir.join("train.jsonl"), &corpus.train)?;
    dsp::write_segments_jsonl(&dir.join("val.jsonl"), &corpus.val)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let p = dir.join("manifest.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::malformed(&p, e))?;
    let train = dsp::read_segments_jsonl(&dir.join("train.jsonl"))?;
    let val = dsp::read_segments_jsonl(&dir.join("val.jsonl"))?;
    if train.len() != manifest.n_train || val.len() != manifest.n_val {
        return Err(Error::malformed(dir, "segment counts disagree with manifest"));
    }
    Ok(Corpus { train, val, manifest })
}
