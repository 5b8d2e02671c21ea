//! Seeded end-to-end fixture shared by the integration suites: a training
//! corpus, a model trained on it (cached under the cargo target dir) and a
//! held-out evaluation population.

#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;

use pulseguard::config::PopulationSpec;
use pulseguard::detector::{detect, Detection, DetectorConfig};
use pulseguard::dsp;
use pulseguard::nnet::{load_model, save_model, train_with_progress, EpochStats, ModelParams, TrainConfig};
use pulseguard::par;
use pulseguard::screen::{build_training_corpus, Corpus, CorpusOptions, ScreenThresholds};
use pulseguard::synthppg::{synthesize_record, LabeledRecord, SynthConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bump when anything that changes the trained weights changes.
const FIXTURE_VERSION: u32 = 1;

pub const CORPUS_RECORDS: usize = 200;
pub const EVAL_RECORDS_PER_GROUP: usize = 30;
pub const EVAL_DURATION_S: f64 = 45.0 * 60.0;

/// Writes straight to stderr so the line shows up even for passing tests.
pub fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

pub fn corpus_population() -> PopulationSpec {
    PopulationSpec {
        label: "corpus".into(),
        n_records: CORPUS_RECORDS,
        hr_range_bpm: [40.0, 170.0],
        pvc_rate_range_per_min: [0.0, 0.0],
        template: SynthConfig::default(),
    }
}

pub fn eval_populations() -> Vec<PopulationSpec> {
    let template = SynthConfig {
        duration_s: EVAL_DURATION_S,
        ..SynthConfig::default()
    };
    vec![
        PopulationSpec {
            label: "eval-clean".into(),
            n_records: EVAL_RECORDS_PER_GROUP,
            hr_range_bpm: [40.0, 170.0],
            pvc_rate_range_per_min: [0.0, 0.0],
            template: template.clone(),
        },
        PopulationSpec {
            label: "eval-pvc".into(),
            n_records: EVAL_RECORDS_PER_GROUP,
            hr_range_bpm: [40.0, 170.0],
            pvc_rate_range_per_min: [1.0, 4.0],
            template,
        },
    ]
}

pub fn train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 30,
        seed: 0,
        ..TrainConfig::default()
    }
}

pub fn synth_all(spec: &PopulationSpec, seed: u64) -> Vec<LabeledRecord> {
    let cfgs = spec.record_configs(seed);
    par::map(&cfgs, |c| synthesize_record(c).expect("valid config"))
}

pub struct Fixture {
    pub corpus: Corpus,
    pub model: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub train_seconds: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CachedHistory {
    history: Vec<(usize, f64, f64)>,
    best_epoch: usize,
    train_seconds: f64,
}

fn cache_dir() -> PathBuf {
    let key = serde_json::json!({
        "version": FIXTURE_VERSION,
        "corpus": corpus_population(),
        "screen": ScreenThresholds::default(),
        "corpus_opts": CorpusOptions::default(),
        "train": train_config(),
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("pulseguard-fixture-{hex}"))
}

fn build() -> Fixture {
    let records = synth_all(&corpus_population(), 1);
    let corpus = build_training_corpus(&records, &ScreenThresholds::default(), &CorpusOptions::default())
        .expect("corpus builds");
    let dir = cache_dir();
    let model_path = dir.join("model.json");
    let hist_path = dir.join("history.json");
    if let (Ok(model), Ok(text)) = (load_model(&model_path), std::fs::read_to_string(&hist_path)) {
        if let Ok(h) = serde_json::from_str::<CachedHistory>(&text) {
            report(&format!("fixture: using cached model from {}", dir.display()));
            return Fixture {
                corpus,
                model,
                history: h
                    .history
                    .into_iter()
                    .map(|(epoch, train_loss, val_loss)| EpochStats {
                        epoch,
                        train_loss,
                        val_loss,
                    })
                    .collect(),
                best_epoch: h.best_epoch,
                train_seconds: Some(h.train_seconds),
            };
        }
    }
    report(&format!(
        "fixture: training on {} segments ({} validation), this takes a while",
        corpus.train.len(),
        corpus.val.len()
    ));
    let start = std::time::Instant::now();
    let out = train_with_progress(&corpus.train_slices(), &corpus.val_slices(), &train_config(), |s| {
        report(&format!(
            "  epoch {:>2}: train {:.5} val {:.5} ({:.0} s)",
            s.epoch,
            s.train_loss,
            s.val_loss,
            start.elapsed().as_secs_f64()
        ))
    })
    .expect("training succeeds");
    let secs = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&dir).expect("cache dir");
    save_model(&out.model, &model_path).expect("model saves");
    let cached = CachedHistory {
        history: out
            .history
            .iter()
            .map(|s| (s.epoch, s.train_loss, s.val_loss))
            .collect(),
        best_epoch: out.best_epoch,
        train_seconds: secs,
    };
    std::fs::write(&hist_path, serde_json::to_string_pretty(&cached).unwrap()).expect("history saves");
    Fixture {
        corpus,
        model: out.model,
        history: out.history,
        best_epoch: out.best_epoch,
        train_seconds: Some(secs),
    }
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(build)
}

pub struct EvalSet {
    /// `(population label, record, detection)`
    pub items: Vec<(String, LabeledRecord, Detection)>,
}

impl EvalSet {
    pub fn hours(&self) -> f64 {
        self.items.iter().map(|(_, r, _)| r.waveform.duration_s()).sum::<f64>() / 3600.0
    }
}

pub fn eval_set() -> &'static EvalSet {
    static E: OnceLock<EvalSet> = OnceLock::new();
    E.get_or_init(|| {
        let model = &fixture().model;
        let cfg = DetectorConfig::default();
        let mut items = Vec::new();
        for spec in eval_populations() {
            let records = synth_all(&spec, 2);
            let dets = par::map(&records, |r| {
                let w = dsp::preprocess(&r.waveform).expect("preprocess");
                detect(model, &w, &r.record_id, &cfg).expect("detect")
            });
            for (r, d) in records.into_iter().zip(dets) {
                items.push((spec.label.clone(), r, d));
            }
        }
        EvalSet { items }
    })
}
