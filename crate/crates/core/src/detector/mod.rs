//! Flags anomalous regions by windowed Pearson correlation between a
//! segment and its autoencoder reconstruction.

mod plot;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, Segment, Waveform};
use crate::error::{Error, Result};
use crate::nnet::{reconstruct_batch, ModelParams};

pub use plot::segment_svg;

const FLAT_SD: f64 = 1e-8;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub window_len_s: f64,
    pub stride_s: f64,
    /// Windows with r strictly below this are anomalous.
    pub threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window_len_s: 0.5,
            stride_s: 0.25,
            threshold: 0.6,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_len_s > 0.0 && self.window_len_s <= dsp::SEGMENT_LEN_S) {
            return Err(Error::config("window_len_s", "must lie in (0, segment length]"));
        }
        if !(self.stride_s > 0.0) {
            return Err(Error::config("stride_s", "must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold", "must lie in [-1, 1]"));
        }
        Ok(())
    }
}

/// Pearson correlation with fixed rules for flat inputs: two flat series
/// correlate perfectly (1.0), one flat series not at all (0.0).
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "pearson_r: {} vs {} values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("pearson_r needs at least two values".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let flat_x = (sxx / n).sqrt() < FLAT_SD;
    let flat_y = (syy / n).sqrt() < FLAT_SD;
    Ok(match (flat_x, flat_y) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
    })
}

/// Windowed metric values, one point per window start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTrace {
    pub window_len_s: f64,
    pub stride_s: f64,
    /// `(window_start_s, value)`.
    pub points: Vec<(f64, f64)>,
}

impl CorrelationTrace {
    /// Same trace with every window start moved by `offset_s`.
    pub fn shifted(&self, offset_s: f64) -> Self {
        CorrelationTrace {
            points: self.points.iter().map(|&(t, r)| (t + offset_s, r)).collect(),
            ..self.clone()
        }
    }
}

/// Windowed mean absolute error; kept for comparison, not used for flagging.
pub type ErrorTrace = CorrelationTrace;

fn whole_samples(seconds: f64, rate: f64, what: &str) -> Result<usize> {
    let n = seconds * rate;
    if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{what} of {seconds} s is not a whole number of samples at {rate} Hz"
        )));
    }
    Ok(n.round() as usize)
}

fn windowed(
    seg: &[f64],
    recon: &[f64],
    window_len_s: f64,
    stride_s: f64,
    rate_hz: f64,
    metric: impl Fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<CorrelationTrace> {
    if seg.len() != recon.len() {
        return Err(Error::Dimension(format!(
            "segment {} vs reconstruction {}",
            seg.len(),
            recon.len()
        )));
    }
    let win = whole_samples(window_len_s, rate_hz, "window")?;
    let stride = whole_samples(stride_s, rate_hz, "stride")?;
    if win > seg.len() {
        return Err(Error::InvalidInput(format!(
            "window of {win} samples longer than segment of {}",
            seg.len()
        )));
    }
    let mut points = Vec::new();
    let mut start = 0;
    while start + win <= seg.len() {
        let v = metric(&seg[start..start + win], &recon[start..start + win])?;
        points.push((start as f64 / rate_hz, v));
        start += stride;
    }
    Ok(CorrelationTrace {
        window_len_s,
        stride_s,
        points,
    })
}

/// Pearson r over sliding windows; times are relative to the segment start.
pub fn correlation_trace(
    seg: &[f64],
    recon: &[f64],
    window_len_s: f64,
    stride_s: f64,
    rate_hz: f64,
) -> Result<CorrelationTrace> {
    windowed(seg, recon, window_len_s, stride_s, rate_hz, pearson_r)
}

pub fn abs_error_trace(
    seg: &[f64],
    recon: &[f64],
    window_len_s: f64,
    stride_s: f64,
    rate_hz: f64,
) -> Result<ErrorTrace> {
    windowed(seg, recon, window_len_s, stride_s, rate_hz, |a, b| {
        Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRegion {
    pub record_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub min_r: f64,
}

impl AnomalyRegion {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Merges `next` into the last region when the gap is at most `max_gap`.
fn push_merged(out: &mut Vec<AnomalyRegion>, next: AnomalyRegion, max_gap: f64) {
    if let Some(last) = out.last_mut() {
        if next.start_s - last.end_s <= max_gap + TIME_EPS {
            last.end_s = last.end_s.max(next.end_s);
            last.min_r = last.min_r.min(next.min_r);
            return;
        }
    }
    out.push(next);
}

/// Every window with `r < threshold` contributes `[start, start + window)`;
/// contributions closer than one stride are merged.
pub fn flag_regions(trace: &CorrelationTrace, threshold: f64, record_id: &str) -> Vec<AnomalyRegion> {
    let mut out = Vec::new();
    for &(start, r) in &trace.points {
        if r < threshold {
            push_merged(
                &mut out,
                AnomalyRegion {
                    record_id: record_id.to_owned(),
                    start_s: start,
                    end_s: start + trace.window_len_s,
                    min_r: r,
                },
                trace.stride_s,
            );
        }
    }
    out
}

/// Per-segment detection detail, used for plotting.
#[derive(Debug, Clone)]
pub struct SegmentDetection {
    pub segment: Segment,
    pub reconstruction: Vec<f64>,
    /// Window starts in record time.
    pub trace: CorrelationTrace,
    pub regions: Vec<AnomalyRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub record_id: String,
    pub regions: Vec<AnomalyRegion>,
    /// `[start, end)` spans of the segments that were analysed.
    pub coverage: Vec<(f64, f64)>,
    pub usable_segments: usize,
    pub flagged_segments: usize,
    pub no_coverage: bool,
}

/// Runs the detector on every usable segment of a preprocessed waveform.
pub fn detect_segments(
    model: &ModelParams,
    waveform: &Waveform,
    record_id: &str,
    cfg: &DetectorConfig,
) -> Result<Vec<SegmentDetection>> {
    cfg.validate()?;
    let seg_len_s = model.normalization.segment_len_s;
    let segments: Vec<Segment> = dsp::segmentize(waveform, record_id, seg_len_s, seg_len_s)?
        .iter()
        .map(dsp::normalize)
        .collect();
    let inputs: Vec<&[f64]> = segments.iter().map(|s| s.samples.as_slice()).collect();
    let recon = reconstruct_batch(model, &inputs)?;
    segments
        .into_iter()
        .zip(recon)
        .map(|(segment, reconstruction)| {
            let trace = correlation_trace(
                &segment.samples,
                &reconstruction,
                cfg.window_len_s,
                cfg.stride_s,
                waveform.sample_rate_hz,
            )?
            .shifted(segment.start_s);
            let regions = flag_regions(&trace, cfg.threshold, record_id);
            Ok(SegmentDetection {
                segment,
                reconstruction,
                trace,
                regions,
            })
        })
        .collect()
}

/// Flags anomalous regions in record time; regions from consecutive
/// segments separated by at most one stride are merged.
pub fn detect(model: &ModelParams, waveform: &Waveform, record_id: &str, cfg: &DetectorConfig) -> Result<Detection> {
    let per_segment = detect_segments(model, waveform, record_id, cfg)?;
    Ok(summarize(record_id, &per_segment, cfg))
}

pub fn summarize(record_id: &str, per_segment: &[SegmentDetection], cfg: &DetectorConfig) -> Detection {
    let mut regions = Vec::new();
    for sd in per_segment {
        for r in &sd.regions {
            push_merged(&mut regions, r.clone(), cfg.stride_s);
        }
    }
    Detection {
        record_id: record_id.to_owned(),
        regions,
        coverage: per_segment
            .iter()
            .map(|s| (s.segment.start_s, s.segment.start_s + s.segment.duration_s))
            .collect(),
        usable_segments: per_segment.len(),
        flagged_segments: per_segment.iter().filter(|s| !s.regions.is_empty()).count(),
        no_coverage: per_segment.is_empty(),
    }
}

/// Writes regions as JSON lines `{record_id, start_s, end_s, min_r}`.
pub fn write_regions_jsonl(path: &Path, regions: &[AnomalyRegion]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in regions {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::malformed(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_regions_jsonl(path: &Path) -> Result<Vec<AnomalyRegion>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
