//! Signal conditioning: filtering, decimation, normalization and segmentation.

mod fft;
mod filter;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fft::{fft_in_place, fft_magnitude, fft_real};
pub use filter::{bandpass, Biquad};

/// Rate every segment is processed at.
pub const PIPELINE_RATE_HZ: f64 = 32.0;
/// Segment length in seconds (256 samples at the pipeline rate).
pub const SEGMENT_LEN_S: f64 = 8.0;
/// Initial filter transient excluded from segmentation.
pub const SETTLING_S: f64 = 5.0;
pub const BAND_LOW_HZ: f64 = 0.4;
pub const BAND_HIGH_HZ: f64 = 8.0;

const FLAT_SD: f64 = 1e-8;

/// Uniformly sampled signal with a per-sample usability mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    pub quality_mask: Vec<bool>,
}

impl Waveform {
    /// Waveform with every sample marked usable.
    pub fn new(sample_rate_hz: f64, samples: Vec<f64>) -> Result<Self> {
        let mask = vec![true; samples.len()];
        Self::with_mask(sample_rate_hz, samples, mask)
    }

    pub fn with_mask(sample_rate_hz: f64, samples: Vec<f64>, quality_mask: Vec<bool>) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform has no samples".into()));
        }
        if quality_mask.len() != samples.len() {
            return Err(Error::Dimension(format!(
                "quality mask length {} != sample count {}",
                quality_mask.len(),
                samples.len()
            )));
        }
        Ok(Waveform {
            sample_rate_hz,
            samples,
            quality_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn time_of(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate_hz
    }
}

/// Fixed-length window of a waveform; the autoencoder's unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub source_record_id: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub samples: Vec<f64>,
    pub normalized: bool,
    /// Set when the segment was (near-)constant before normalization.
    pub flat: bool,
    /// Affine map back to source units: `source = value * scale + offset`.
    pub offset: f64,
    pub scale: f64,
}

impl Segment {
    pub fn raw(source_record_id: impl Into<String>, start_s: f64, duration_s: f64, samples: Vec<f64>) -> Self {
        Segment {
            source_record_id: source_record_id.into(),
            start_s,
            duration_s,
            samples,
            normalized: false,
            flat: false,
            offset: 0.0,
            scale: 1.0,
        }
    }

    /// Samples mapped back to the units of the source waveform.
    pub fn denormalized(&self) -> Vec<f64> {
        self.samples.iter().map(|v| v * self.scale + self.offset).collect()
    }
}

/// Population mean and standard deviation.
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores a segment using the population standard deviation.
///
/// Segments with sd below 1e-8 become all zeros and are marked flat.
pub fn normalize(seg: &Segment) -> Segment {
    let (mean, sd) = mean_sd(&seg.samples);
    let mut out = seg.clone();
    out.normalized = true;
    if sd < FLAT_SD || !sd.is_finite() {
        out.samples = vec![0.0; seg.samples.len()];
        out.flat = true;
        out.offset = seg.offset + mean * seg.scale;
        out.scale = 0.0;
        return out;
    }
    out.samples = seg.samples.iter().map(|v| (v - mean) / sd).collect();
    out.flat = false;
    out.offset = seg.offset + mean * seg.scale;
    out.scale = seg.scale * sd;
    out
}

/// Keeps every k-th sample where `k = rate / target_hz`; the mask is AND-ed per group.
pub fn downsample(w: &Waveform, target_hz: f64) -> Result<Waveform> {
    let ratio = w.sample_rate_hz / target_hz;
    let k = ratio.round();
    if !(target_hz > 0.0) || k < 1.0 || (ratio - k).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "downsample ratio {} / {} is not a positive integer",
            w.sample_rate_hz, target_hz
        )));
    }
    let k = k as usize;
    let n = w.samples.len() / k;
    if n == 0 {
        return Err(Error::InvalidInput("waveform shorter than one decimation group".into()));
    }
    let samples = (0..n).map(|i| w.samples[i * k]).collect();
    let quality_mask = (0..n)
        .map(|i| w.quality_mask[i * k..(i + 1) * k].iter().all(|&m| m))
        .collect();
    Ok(Waveform {
        sample_rate_hz: target_hz,
        samples,
        quality_mask,
    })
}

/// Cuts a waveform into windows of `len_s`, stepping by `stride_s`.
///
/// A window is emitted only when every sample in it is usable; a trailing
/// partial window is dropped. Segments are returned unnormalized.
pub fn segmentize(w: &Waveform, record_id: &str, len_s: f64, stride_s: f64) -> Result<Vec<Segment>> {
    let len = samples_for(len_s, w.sample_rate_hz)?;
    let stride = samples_for(stride_s, w.sample_rate_hz)?;
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= w.samples.len() {
        if w.quality_mask[start..start + len].iter().all(|&m| m) {
            out.push(Segment::raw(
                record_id,
                w.time_of(start),
                len_s,
                w.samples[start..start + len].to_vec(),
            ));
        }
        start += stride;
    }
    Ok(out)
}

fn samples_for(seconds: f64, rate: f64) -> Result<usize> {
    let n = seconds * rate;
    if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{seconds} s at {rate} Hz is not a whole number of samples"
        )));
    }
    Ok(n.round() as usize)
}

/// Standard conditioning chain: band-pass, decimate to the pipeline rate and
/// mask the filter settling transient.
pub fn preprocess(w: &Waveform) -> Result<Waveform> {
    let filtered = bandpass(w, BAND_LOW_HZ, BAND_HIGH_HZ)?;
    let mut out = downsample(&filtered, PIPELINE_RATE_HZ)?;
    let settle = (SETTLING_S * PIPELINE_RATE_HZ) as usize;
    for m in out.quality_mask.iter_mut().take(settle) {
        *m = false;
    }
    Ok(out)
}

/// Default 8 s non-overlapping segmentation followed by normalization.
pub fn normalized_segments(w: &Waveform, record_id: &str) -> Result<Vec<Segment>> {
    Ok(segmentize(w, record_id, SEGMENT_LEN_S, SEGMENT_LEN_S)?
        .iter()
        .map(normalize)
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct SegmentLine {
    record_id: String,
    start_s: f64,
    samples: Vec<f64>,
}

/// Writes segments as JSON lines `{record_id, start_s, samples}`.
pub fn write_segments_jsonl(path: &Path, segments: &[Segment]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for s in segments {
        let line = SegmentLine {
            record_id: s.source_record_id.clone(),
            start_s: s.start_s,
            samples: s.samples.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::malformed(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads segments written by [`write_segments_jsonl`]; they are taken as normalized.
pub fn read_segments_jsonl(path: &Path) -> Result<Vec<Segment>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SegmentLine =
            serde_json::from_str(&line).map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1)))?;
        let duration_s = parsed.samples.len() as f64 / PIPELINE_RATE_HZ;
        let mut seg = Segment::raw(parsed.record_id, parsed.start_s, duration_s, parsed.samples);
        seg.normalized = true;
        out.push(seg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_four_values() {
        let seg = Segment::raw("r", 0.0, 4.0, vec![1.0, 2.0, 3.0, 4.0]);
        let n = normalize(&seg);
        let expected = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, b) in n.samples.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
        let (m, sd) = mean_sd(&n.samples);
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-6);
        assert!(!n.flat);
    }

    #[test]
    fn normalize_constant_is_flat() {
        let n = normalize(&Segment::raw("r", 0.0, 1.0, vec![3.0; 32]));
        assert!(n.flat && n.normalized);
        assert!(n.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn downsample_basics() {
        let w = Waveform::new(128.0, vec![2.0; 1030]).unwrap();
        let d = downsample(&w, 32.0).unwrap();
        assert_eq!(d.len(), 1030 / 4);
        assert!(d.samples.iter().all(|&v| v == 2.0));
        assert!(downsample(&w, 48.0).is_err());

        let mut mask = vec![true; 16];
        mask[5] = false;
        let w = Waveform::with_mask(128.0, (0..16).map(|i| i as f64).collect(), mask).unwrap();
        let d = downsample(&w, 32.0).unwrap();
        assert_eq!(d.quality_mask, vec![true, false, true, true]);
        assert_eq!(d.samples, vec![0.0, 4.0, 8.0, 12.0]);
    }

    #[test]
    fn segmentize_counts_and_mask() {
        let w = Waveform::new(32.0, vec![0.5; 60 * 32]).unwrap();
        assert_eq!(segmentize(&w, "r", 8.0, 8.0).unwrap().len(), 7);

        let mut mask = vec![true; 60 * 32];
        for m in &mut mask[10 * 32..11 * 32] {
            *m = false;
        }
        let w = Waveform::with_mask(32.0, vec![0.5; 60 * 32], mask).unwrap();
        let segs = segmentize(&w, "r", 8.0, 8.0).unwrap();
        assert_eq!(segs.len(), 6);
        assert!(segs.iter().all(|s| s.start_s != 8.0));

        let w = Waveform::new(32.0, vec![0.5; (7.9 * 32.0) as usize]).unwrap();
        assert!(segmentize(&w, "r", 8.0, 8.0).unwrap().is_empty());
        assert!(segmentize(&w, "r", 8.01, 8.0).is_err());
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::new(0.0, vec![1.0]).is_err());
        assert!(Waveform::new(32.0, vec![]).is_err());
        assert!(Waveform::with_mask(32.0, vec![1.0, 2.0], vec![true]).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("segs.jsonl");
        let segs = vec![normalize(&Segment::raw(
            "a",
            8.0,
            8.0,
            (0..256).map(|i| (i as f64).sin()).collect(),
        ))];
        write_segments_jsonl(&p, &segs).unwrap();
        let back = read_segments_jsonl(&p).unwrap();
        assert_eq!(back[0].samples, segs[0].samples);
        assert_eq!(back[0].source_record_id, "a");
        assert_eq!(back[0].start_s, 8.0);
    }

    proptest! {
        #[test]
        fn normalize_idempotent_and_affine_invariant(
            x in prop::collection::vec(-100.0f64..100.0, 16..64),
            a in 0.01f64..100.0,
            b in -50.0f64..50.0,
        ) {
            let (_, sd) = mean_sd(&x);
            prop_assume!(sd > 1e-3);
            let n1 = normalize(&Segment::raw("r", 0.0, 1.0, x.clone()));
            let n2 = normalize(&n1);
            let shifted: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let n3 = normalize(&Segment::raw("r", 0.0, 1.0, shifted));
            for i in 0..x.len() {
                prop_assert!((n1.samples[i] - n2.samples[i]).abs() < 1e-9);
                prop_assert!((n1.samples[i] - n3.samples[i]).abs() < 1e-6);
            }
        }

        #[test]
        fn segments_reassemble_source(
            x in prop::collection::vec(-10.0f64..10.0, 64..200),
            holes in prop::collection::vec(0usize..200, 0..3),
        ) {
            let mut mask = vec![true; x.len()];
            for h in holes { if h < x.len() { mask[h] = false; } }
            let w = Waveform::with_mask(4.0, x.clone(), mask.clone()).unwrap();
            let segs = segmentize(&w, "r", 4.0, 4.0).unwrap();
            for s in segs {
                let start = (s.start_s * 4.0).round() as usize;
                let back = normalize(&s).denormalized();
                for (i, v) in back.iter().enumerate() {
                    prop_assert!(mask[start + i]);
                    prop_assert!((v - x[start + i]).abs() < 1e-9 * (1.0 + x[start + i].abs()));
                }
            }
        }
    }
}
