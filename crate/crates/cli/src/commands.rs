//! Subcommand implementations. Each writes its artifacts under `--out` and
//! stamps them with the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use pulseguard::config::PipelineConfig;
use pulseguard::detector::{self, segment_svg, Detection};
use pulseguard::dsp;
use pulseguard::error::Error;
use pulseguard::evalharness::{self, EvalReport, GsRow};
use pulseguard::nnet;
use pulseguard::par;
use pulseguard::screen;
use pulseguard::synthppg::{self, LabeledRecord};
use serde::{Deserialize, Serialize};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_MODEL: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn model(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_MODEL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            Error::Io { .. } => EXIT_IO,
            Error::VersionMismatch { .. } => EXIT_MODEL,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

/// `path` itself when it is a file, else `path/name`.
fn file_or_in_dir(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            PipelineConfig::from_json(&text).map_err(|e| CliError::config(e.to_string()))
        }
    }
}

pub fn validate(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate().map_err(|e| CliError::config(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordEntry {
    record_id: String,
    population: String,
    duration_s: f64,
    base_hr_bpm: f64,
    pvc_rate_per_min: f64,
    pvc_total: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct SynthManifest {
    config_hash: String,
    records: Vec<RecordEntry>,
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    validate(cfg)?;
    let records_dir = out.join("records");
    mkdir(&records_dir)?;
    let mut entries = Vec::new();
    let mut gs: Vec<GsRow> = Vec::new();
    for pop in &cfg.populations {
        let configs = pop.record_configs(cfg.seed);
        let records = par::map(&configs, synthppg::synthesize_record);
        for rec in records {
            let rec = rec?;
            synthppg::save_record(&rec, Some(&pop.label), &records_dir.join(&rec.record_id))?;
            gs.extend(evalharness::gs_rows(&rec.record_id, &rec.gs_minutes));
            entries.push(RecordEntry {
                record_id: rec.record_id.clone(),
                population: pop.label.clone(),
                duration_s: rec.config.duration_s,
                base_hr_bpm: rec.config.base_hr_bpm,
                pvc_rate_per_min: rec.config.pvc_rate_per_min,
                pvc_total: rec.pvc_total(),
            });
        }
    }
    evalharness::write_gs_csv(&out.join("gs.csv"), &gs)?;
    write_text(&out.join("config.json"), &(cfg.to_json() + "\n"))?;
    let n = entries.len();
    write_json(
        &out.join("manifest.json"),
        &SynthManifest {
            config_hash: cfg.hash(),
            records: entries,
        },
    )?;
    eprintln!("synthesized {n} records into {}", out.display());
    Ok(())
}

/// Loads every record under `path/records` (or `path` itself), sorted by id.
fn load_records(path: &Path) -> Result<Vec<(LabeledRecord, String)>> {
    let dir = if path.join("records").is_dir() {
        path.join("records")
    } else {
        path.to_path_buf()
    };
    let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("record.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError {
            code: EXIT_DATA,
            message: format!("no records found under {}", dir.display()),
        });
    }
    let loaded = par::map(&dirs, |d| synthppg::load_record(d));
    loaded
        .into_iter()
        .map(|r| {
            let (rec, pop) = r?;
            Ok((rec, pop.unwrap_or_else(|| "unlabelled".into())))
        })
        .collect()
}

pub fn build_corpus(cfg: &PipelineConfig, records: &Path, out: &Path) -> Result<()> {
    validate(cfg)?;
    let records: Vec<LabeledRecord> = load_records(records)?.into_iter().map(|(r, _)| r).collect();
    let corpus = screen::build_training_corpus(&records, &cfg.screen, &cfg.corpus)?;
    screen::save_corpus(&corpus, out)?;
    write_text(&out.join("config.json"), &(cfg.to_json() + "\n"))?;
    let m = &corpus.manifest;
    eprintln!(
        "kept {} of {} segments ({} train, {} validation)",
        m.n_train + m.n_val,
        m.n_candidates,
        m.n_train,
        m.n_val
    );
    Ok(())
}

/// History CSV path for a model file: `model.json` -> `model.history.csv`.
pub fn history_path(model: &Path) -> PathBuf {
    model.with_extension("history.csv")
}

pub fn train(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<()> {
    validate(cfg)?;
    let corpus = screen::load_corpus(corpus)?;
    let train_set = corpus.train_slices();
    let val_set = corpus.val_slices();
    eprintln!(
        "training on {} segments ({} validation)",
        train_set.len(),
        val_set.len()
    );
    let outcome = nnet::train_with_progress(&train_set, &val_set, &cfg.train, |e| {
        eprintln!("epoch {:3}: train {:.5} val {:.5}", e.epoch, e.train_loss, e.val_loss);
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    nnet::save_model(&outcome.model, out)?;
    let mut csv = format!("# config_hash={}\nepoch,train_loss,val_loss\n", cfg.hash());
    for e in &outcome.history {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
    }
    write_text(&history_path(out), &csv)?;
    eprintln!("best epoch {}; model written to {}", outcome.best_epoch, out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelledDetection {
    pub population: String,
    pub detection: Detection,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub config_hash: String,
    pub threshold: f64,
    pub records: Vec<LabelledDetection>,
}

pub fn detect(cfg: &PipelineConfig, model: &Path, records: &Path, out: &Path, plot: bool) -> Result<()> {
    let model = nnet::load_model(model).map_err(CliError::model)?;
    let records = load_records(records)?;
    let regions_dir = out.join("regions");
    mkdir(&regions_dir)?;
    let plots_dir = out.join("plots");
    if plot {
        mkdir(&plots_dir)?;
    }
    let per_record = par::map(&records, |(rec, _)| -> pulseguard::error::Result<_> {
        let w = dsp::preprocess(&rec.waveform)?;
        detector::detect_segments(&model, &w, &rec.record_id, &cfg.detector)
    });
    let mut out_records = Vec::with_capacity(records.len());
    let mut n_regions = 0;
    for ((rec, pop), segs) in records.iter().zip(per_record) {
        let segs = segs?;
        let det = detector::summarize(&rec.record_id, &segs, &cfg.detector);
        detector::write_regions_jsonl(&regions_dir.join(format!("{}.jsonl", rec.record_id)), &det.regions)?;
        if plot {
            for sd in segs.iter().filter(|s| !s.regions.is_empty()) {
                let name = format!("{}_{:08.1}.svg", rec.record_id, sd.segment.start_s);
                write_text(&plots_dir.join(name), &segment_svg(sd, cfg.detector.threshold))?;
            }
        }
        n_regions += det.regions.len();
        out_records.push(LabelledDetection {
            population: pop.clone(),
            detection: det,
        });
    }
    write_json(
        &out.join("detections.json"),
        &DetectionsFile {
            config_hash: cfg.hash(),
            threshold: cfg.detector.threshold,
            records: out_records,
        },
    )?;
    eprintln!("{n_regions} anomalous regions across {} records", records.len());
    Ok(())
}

pub fn eval(cfg: &PipelineConfig, detections: &Path, gs: &Path, out: &Path) -> Result<()> {
    let dets: DetectionsFile = read_json(&file_or_in_dir(detections, "detections.json"))?;
    let gs = evalharness::read_gs_csv(&file_or_in_dir(gs, "gs.csv"))?;
    let hash = cfg.hash();
    if dets.config_hash != hash {
        eprintln!(
            "warning: detections were produced under config {} but evaluating under {}",
            dets.config_hash, hash
        );
    }
    let plain: Vec<Detection> = dets.records.iter().map(|r| r.detection.clone()).collect();
    let observations = evalharness::align_all(&plain, &gs, &cfg.eval);
    let labelled: Vec<(String, Detection)> = dets.records.into_iter().map(|r| (r.population, r.detection)).collect();
    let stats = evalharness::population_stats(&labelled)?;
    let report = EvalReport::build(&hash, &observations, &cfg.eval.min_pvc, stats)?;
    mkdir(out)?;
    write_json(&out.join("eval.json"), &report)?;
    let text = report.render_text();
    write_text(&out.join("eval.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    config_hashes: Vec<String>,
    hash_conflict: bool,
    reports: Vec<EvalReport>,
}

pub fn report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut reports = Vec::with_capacity(inputs.len());
    for p in inputs {
        let r: EvalReport = read_json(&file_or_in_dir(p, "eval.json"))?;
        reports.push(r);
    }
    let mut hashes: Vec<String> = reports.iter().map(|r| r.config_hash.clone()).collect();
    hashes.sort();
    hashes.dedup();
    let conflict = hashes.len() > 1;
    if conflict {
        eprintln!("warning: reports come from different configs: {}", hashes.join(", "));
    }
    let mut text = String::new();
    for (p, r) in inputs.iter().zip(&reports) {
        text.push_str(&format!("== {} (config {}) ==\n", p.display(), r.config_hash));
        text.push_str(&r.render_text());
        text.push('\n');
    }
    mkdir(out)?;
    write_json(
        &out.join("summary.json"),
        &Summary {
            config_hashes: hashes,
            hash_conflict: conflict,
            reports,
        },
    )?;
    write_text(&out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}
