//! Reproducible synthetic PPG records with labeled cardiac events.
//!
//! Each beat is drawn as a systolic Gaussian bump plus a smaller dicrotic
//! bump. Sinus rhythm jitters through an AR(1) process; premature ventricular
//! contractions (PVCs) arrive early, attenuated, and are followed by a
//! compensatory pause; atrial fibrillation (AF) episodes draw intervals
//! independently.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Shortest admissible inter-beat interval (220 bpm).
pub const MIN_IBI_S: f64 = 60.0 / 220.0;
/// Longest admissible inter-beat interval (20 bpm).
pub const MAX_IBI_S: f64 = 60.0 / 20.0;
const IBI_MARGIN_S: f64 = 1e-3;

const HRV_AR_COEF: f64 = 0.9;
const PVC_COUPLING: f64 = 0.6;
const PVC_AMP: (f64, f64) = (0.4, 0.6);
const AF_IBI_SCALE: (f64, f64) = (0.6, 1.4);
const AF_AMP: (f64, f64) = (0.7, 1.1);

const SYSTOLIC_CENTER: f64 = 0.15;
const SYSTOLIC_SD: f64 = 0.06;
const DICROTIC_HEIGHT: f64 = 0.35;
const DICROTIC_CENTER: f64 = 0.45;
const DICROTIC_SD: f64 = 0.10;
/// Gaussian bumps are evaluated out to this many standard deviations.
const BUMP_SUPPORT_SD: f64 = 8.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub base_hr_bpm: f64,
    /// Stationary sd of the fractional IBI jitter.
    pub hrv_sigma: f64,
    pub resp_rate_hz: f64,
    pub resp_mod_depth: f64,
    pub noise_sigma: f64,
    pub pvc_rate_per_min: f64,
    pub af_episode_rate_per_hour: f64,
    pub af_episode_len_s: f64,
    pub native_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 300.0,
            base_hr_bpm: 70.0,
            hrv_sigma: 0.02,
            resp_rate_hz: 0.25,
            resp_mod_depth: 0.1,
            noise_sigma: 0.01,
            pvc_rate_per_min: 0.0,
            af_episode_rate_per_hour: 0.0,
            af_episode_len_s: 30.0,
            native_rate_hz: 128.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be >= 0, got {v}")))
            }
        };
        positive("duration_s", self.duration_s)?;
        if !(35.0..=180.0).contains(&self.base_hr_bpm) {
            return Err(Error::config(
                "base_hr_bpm",
                format!("must lie in [35, 180], got {}", self.base_hr_bpm),
            ));
        }
        non_negative("hrv_sigma", self.hrv_sigma)?;
        non_negative("resp_rate_hz", self.resp_rate_hz)?;
        non_negative("resp_mod_depth", self.resp_mod_depth)?;
        if self.resp_mod_depth >= 1.0 {
            return Err(Error::config("resp_mod_depth", "must be < 1"));
        }
        non_negative("noise_sigma", self.noise_sigma)?;
        non_negative("pvc_rate_per_min", self.pvc_rate_per_min)?;
        non_negative("af_episode_rate_per_hour", self.af_episode_rate_per_hour)?;
        if self.af_episode_rate_per_hour > 0.0 {
            positive("af_episode_len_s", self.af_episode_len_s)?;
        }
        // Nyquist headroom over the fastest admissible pulse.
        if !(self.native_rate_hz >= 4.0 / MIN_IBI_S && self.native_rate_hz.is_finite()) {
            return Err(Error::config(
                "native_rate_hz",
                format!(
                    "must be at least 4x the maximum pulse frequency ({:.2} Hz)",
                    4.0 / MIN_IBI_S
                ),
            ));
        }
        Ok(())
    }

    pub fn base_ibi_s(&self) -> f64 {
        60.0 / self.base_hr_bpm
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash)]
pub enum BeatKind {
    Sinus,
    Pvc,
    AfBeat,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BeatSchedule {
    pub onsets: Vec<f64>,
    pub kinds: Vec<BeatKind>,
    pub amplitudes: Vec<f64>,
    /// Interval used to shape the final beat, which has no successor.
    pub tail_ibi_s: f64,
}

impl BeatSchedule {
    pub fn len(&self) -> usize {
        self.onsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty()
    }

    /// Interval following beat `k`.
    pub fn ibi(&self, k: usize) -> f64 {
        if k + 1 < self.onsets.len() {
            self.onsets[k + 1] - self.onsets[k]
        } else {
            self.tail_ibi_s
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.len() != self.onsets.len() || self.amplitudes.len() != self.onsets.len() {
            return Err(Error::Dimension("beat schedule field lengths differ".into()));
        }
        for w in self.onsets.windows(2) {
            let ibi = w[1] - w[0];
            if !(ibi > MIN_IBI_S && ibi < MAX_IBI_S) {
                return Err(Error::InvalidInput(format!(
                    "inter-beat interval {ibi} s at {} s outside physiological range",
                    w[0]
                )));
            }
        }
        if self.amplitudes.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidInput("beat amplitudes must be positive".into()));
        }
        Ok(())
    }

    pub fn count(&self, kind: BeatKind) -> usize {
        self.kinds.iter().filter(|k| **k == kind).count()
    }
}

/// Anomalous events planned before beats are laid out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventPlan {
    /// Poisson arrival times; each triggers a PVC in the sinus interval containing it.
    pub pvc_times: Vec<f64>,
    /// Half-open AF spans, disjoint and sorted.
    pub af_episodes: Vec<(f64, f64)>,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn clamp_ibi(ibi: f64) -> f64 {
    ibi.clamp(MIN_IBI_S + IBI_MARGIN_S, MAX_IBI_S - IBI_MARGIN_S)
}

fn poisson_times(rng: &mut ChaCha8Rng, rate_per_s: f64, horizon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate_per_s <= 0.0 {
        return out;
    }
    let gap = Exp::new(rate_per_s).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

/// Draws PVC arrival times and AF episodes for `cfg`, rejecting overlapping episodes.
pub fn plan_events(cfg: &SynthConfig, seed: u64) -> EventPlan {
    let mut rng = seeded(seed, 1);
    let mut af_episodes: Vec<(f64, f64)> = Vec::new();
    for start in poisson_times(&mut rng, cfg.af_episode_rate_per_hour / 3600.0, cfg.duration_s) {
        let end = (start + cfg.af_episode_len_s).min(cfg.duration_s);
        if af_episodes.last().map_or(true, |&(_, e)| start >= e) {
            af_episodes.push((start, end));
        }
    }
    let pvc_times = poisson_times(&mut rng, cfg.pvc_rate_per_min / 60.0, cfg.duration_s);
    EventPlan { pvc_times, af_episodes }
}

/// Lays out beats with the events of `plan`.
pub fn schedule_from_plan(cfg: &SynthConfig, plan: &EventPlan, seed: u64) -> Result<BeatSchedule> {
    cfg.validate()?;
    let base = cfg.base_ibi_s();
    if cfg.duration_s < base {
        return Err(Error::InvalidInput(format!(
            "duration {} s cannot hold one beat at {} bpm",
            cfg.duration_s, cfg.base_hr_bpm
        )));
    }
    let mut rng = seeded(seed, 0);
    let innovation_sd = cfg.hrv_sigma * (1.0 - HRV_AR_COEF * HRV_AR_COEF).sqrt();
    let mut eps = cfg.hrv_sigma * rng.sample::<f64, _>(StandardNormal);
    let mut next_sinus_ibi = |rng: &mut ChaCha8Rng| {
        eps = HRV_AR_COEF * eps + innovation_sd * rng.sample::<f64, _>(StandardNormal);
        clamp_ibi(base * (1.0 + eps))
    };

    let in_af = |t: f64| plan.af_episodes.iter().any(|&(s, e)| t >= s && t < e);
    let overlaps_af = |a: f64, b: f64| plan.af_episodes.iter().any(|&(s, e)| a < e && s < b);

    let mut sched = BeatSchedule {
        onsets: Vec::new(),
        kinds: Vec::new(),
        amplitudes: Vec::new(),
        tail_ibi_s: base,
    };
    let mut pvc_cursor = 0;
    let mut t = 0.0;
    while t < cfg.duration_s {
        if in_af(t) {
            sched.onsets.push(t);
            sched.kinds.push(BeatKind::AfBeat);
            sched.amplitudes.push(rng.gen_range(AF_AMP.0..AF_AMP.1));
            t += clamp_ibi(base * rng.gen_range(AF_IBI_SCALE.0..AF_IBI_SCALE.1));
            continue;
        }
        sched.onsets.push(t);
        sched.kinds.push(BeatKind::Sinus);
        sched.amplitudes.push(1.0);
        let ibi = next_sinus_ibi(&mut rng);

        // Events that arrived before this interval can no longer fire.
        while pvc_cursor < plan.pvc_times.len() && plan.pvc_times[pvc_cursor] < t {
            pvc_cursor += 1;
        }
        let mut fire = false;
        while pvc_cursor < plan.pvc_times.len() && plan.pvc_times[pvc_cursor] < t + ibi {
            fire = true;
            pvc_cursor += 1;
        }
        if fire {
            let following = next_sinus_ibi(&mut rng);
            let coupling = clamp_ibi(PVC_COUPLING * ibi);
            let pvc_onset = t + coupling;
            let resume = t + ibi + following;
            let pause = resume - pvc_onset;
            if pvc_onset < cfg.duration_s && pause < MAX_IBI_S - IBI_MARGIN_S && !overlaps_af(t, resume) {
                sched.onsets.push(pvc_onset);
                sched.kinds.push(BeatKind::Pvc);
                sched.amplitudes.push(rng.gen_range(PVC_AMP.0..PVC_AMP.1));
                t = resume;
                continue;
            }
        }
        t += ibi;
    }
    sched.validate()?;
    Ok(sched)
}

/// Beat onsets, kinds and amplitudes for `cfg`.
pub fn build_beat_schedule(cfg: &SynthConfig, seed: u64) -> Result<BeatSchedule> {
    cfg.validate()?;
    let plan = plan_events(cfg, seed);
    schedule_from_plan(cfg, &plan, seed)
}

/// Closed-form noise-free contribution of one beat at time `t`.
pub fn beat_shape(t: f64, onset: f64, ibi: f64, amplitude: f64) -> f64 {
    let u = t - onset;
    let g = |center: f64, sd: f64| {
        let z = (u - center * ibi) / (sd * ibi);
        (-0.5 * z * z).exp()
    };
    amplitude * (g(SYSTOLIC_CENTER, SYSTOLIC_SD) + DICROTIC_HEIGHT * g(DICROTIC_CENTER, DICROTIC_SD))
}

/// Renders the schedule at `cfg.native_rate_hz` for `cfg.duration_s`.
pub fn render_waveform(schedule: &BeatSchedule, cfg: &SynthConfig) -> Result<Waveform> {
    cfg.validate()?;
    schedule.validate()?;
    let rate = cfg.native_rate_hz;
    let n = (cfg.duration_s * rate).round().max(1.0) as usize;
    let mut samples = vec![0.0; n];
    for k in 0..schedule.len() {
        let onset = schedule.onsets[k];
        let ibi = schedule.ibi(k);
        let amp = schedule.amplitudes[k];
        let lo = onset + (SYSTOLIC_CENTER - BUMP_SUPPORT_SD * SYSTOLIC_SD) * ibi;
        let hi = onset + (DICROTIC_CENTER + BUMP_SUPPORT_SD * DICROTIC_SD) * ibi;
        let i0 = ((lo * rate).floor().max(0.0)) as usize;
        let i1 = ((hi * rate).ceil() as usize).min(n);
        for (i, s) in samples.iter_mut().enumerate().take(i1).skip(i0) {
            *s += beat_shape(i as f64 / rate, onset, ibi, amp);
        }
    }
    let mut noise_rng = seeded(cfg.seed, 2);
    let two_pi_f = 2.0 * std::f64::consts::PI * cfg.resp_rate_hz;
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / rate;
        *s *= 1.0 + cfg.resp_mod_depth * (two_pi_f * t).sin();
        if cfg.noise_sigma > 0.0 {
            *s += cfg.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal);
        }
    }
    Waveform::new(rate, samples)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AnomalyInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: BeatKind,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct GsMinute {
    pub minute_index: usize,
    pub pvc_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub record_id: String,
    pub config: SynthConfig,
    pub schedule: BeatSchedule,
    pub waveform: Waveform,
    pub anomaly_intervals: Vec<AnomalyInterval>,
    pub gs_minutes: Vec<GsMinute>,
}

impl LabeledRecord {
    pub fn pvc_total(&self) -> u32 {
        self.gs_minutes.iter().map(|m| m.pvc_count).sum()
    }
}

fn label_intervals(schedule: &BeatSchedule, plan: &EventPlan, duration: f64) -> Vec<AnomalyInterval> {
    let mut out: Vec<AnomalyInterval> = Vec::new();
    for k in 0..schedule.len() {
        if schedule.kinds[k] == BeatKind::Pvc {
            let start = schedule.onsets[k];
            let end = (start + schedule.ibi(k)).min(duration);
            out.push(AnomalyInterval {
                start_s: start,
                end_s: end,
                kind: BeatKind::Pvc,
            });
        }
    }
    for &(s, e) in &plan.af_episodes {
        // Episodes that produced no AF beat (e.g. cut by the record end) carry no label.
        if schedule
            .onsets
            .iter()
            .zip(&schedule.kinds)
            .any(|(t, k)| *k == BeatKind::AfBeat && *t >= s && *t < e)
        {
            out.push(AnomalyInterval {
                start_s: s,
                end_s: e.min(duration),
                kind: BeatKind::AfBeat,
            });
        }
    }
    out.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut merged: Vec<AnomalyInterval> = Vec::with_capacity(out.len());
    for iv in out {
        match merged.last_mut() {
            Some(last) if last.kind == iv.kind && iv.start_s <= last.end_s => {
                last.end_s = last.end_s.max(iv.end_s);
            }
            _ => merged.push(iv),
        }
    }
    merged
}

fn gs_minutes(schedule: &BeatSchedule, duration: f64) -> Vec<GsMinute> {
    let minutes = (duration / 60.0).ceil().max(1.0) as usize;
    let mut counts = vec![0u32; minutes];
    for (t, k) in schedule.onsets.iter().zip(&schedule.kinds) {
        if *k == BeatKind::Pvc {
            let m = ((t / 60.0).floor() as usize).min(minutes - 1);
            counts[m] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(minute_index, pvc_count)| GsMinute {
            minute_index,
            pvc_count,
        })
        .collect()
}

/// Complete labeled record; a pure function of `cfg` (including its seed).
pub fn synthesize_record(cfg: &SynthConfig) -> Result<LabeledRecord> {
    cfg.validate()?;
    let plan = plan_events(cfg, cfg.seed);
    synthesize_with_plan(cfg, &plan)
}

/// Like [`synthesize_record`] but with caller-chosen events.
pub fn synthesize_with_plan(cfg: &SynthConfig, plan: &EventPlan) -> Result<LabeledRecord> {
    let schedule = schedule_from_plan(cfg, plan, cfg.seed)?;
    let waveform = render_waveform(&schedule, cfg)?;
    Ok(LabeledRecord {
        record_id: format!("synth-{:016x}", cfg.seed),
        config: cfg.clone(),
        anomaly_intervals: label_intervals(&schedule, plan, cfg.duration_s),
        gs_minutes: gs_minutes(&schedule, cfg.duration_s),
        schedule,
        waveform,
    })
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    record_id: String,
    population: Option<String>,
    config: SynthConfig,
    sample_rate_hz: f64,
    n_samples: usize,
    anomaly_intervals: Vec<AnomalyInterval>,
    gs_minutes: Vec<GsMinute>,
    schedule: BeatSchedule,
}

/// Writes `record.json` and `waveform.csv` into `dir`.
pub fn save_record(record: &LabeledRecord, population: Option<&str>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = RecordMeta {
        record_id: record.record_id.clone(),
        population: population.map(str::to_owned),
        config: record.config.clone(),
        sample_rate_hz: record.waveform.sample_rate_hz,
        n_samples: record.waveform.len(),
        anomaly_intervals: record.anomaly_intervals.clone(),
        gs_minutes: record.gs_minutes.clone(),
        schedule: record.schedule.clone(),
    };
    let json_path = dir.join("record.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::malformed(&json_path, e))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;

    let csv_path = dir.join("waveform.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        out.write_all(b"t_seconds,value\n")?;
        for (i, v) in record.waveform.samples.iter().enumerate() {
            writeln!(out, "{},{}", record.waveform.time_of(i), v)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(&csv_path, e))
}

/// Reads a record directory; returns the record and its population label.
pub fn load_record(dir: &Path) -> Result<(LabeledRecord, Option<String>)> {
    let json_path = dir.join("record.json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: RecordMeta = serde_json::from_str(&text).map_err(|e| Error::malformed(&json_path, e))?;

    let csv_path = dir.join("waveform.csv");
    let text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("t_seconds,value") {
        return Err(Error::malformed(&csv_path, "missing `t_seconds,value` header"));
    }
    let mut samples = Vec::with_capacity(meta.n_samples);
    for (i, line) in lines.enumerate() {
        let value = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::malformed(&csv_path, format!("bad row {}", i + 2)))?;
        samples.push(value);
    }
    if samples.len() != meta.n_samples {
        return Err(Error::malformed(
            &csv_path,
            format!("expected {} samples, found {}", meta.n_samples, samples.len()),
        ));
    }
    let waveform = Waveform::new(meta.sample_rate_hz, samples)?;
    Ok((
        LabeledRecord {
            record_id: meta.record_id,
            config: meta.config,
            schedule: meta.schedule,
            waveform,
            anomaly_intervals: meta.anomaly_intervals,
            gs_minutes: meta.gs_minutes,
        },
        meta.population,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quiet(hr: f64, duration: f64) -> SynthConfig {
        SynthConfig {
            duration_s: duration,
            base_hr_bpm: hr,
            hrv_sigma: 0.0,
            resp_mod_depth: 0.0,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_jitter_is_metronomic() {
        let s = build_beat_schedule(&quiet(60.0, 10.0), 7).unwrap();
        assert_eq!(s.onsets, (0..10).map(f64::from).collect::<Vec<_>>());
        assert!(s.kinds.iter().all(|k| *k == BeatKind::Sinus));
        assert!(s.amplitudes.iter().all(|a| *a == 1.0));
    }

    #[test]
    fn forced_pvc_preserves_second_next_onset() {
        let cfg = quiet(60.0, 10.0);
        let plan = EventPlan {
            pvc_times: vec![4.3],
            af_episodes: vec![],
        };
        let s = schedule_from_plan(&cfg, &plan, 1).unwrap();
        assert_eq!(s.onsets.len(), 10);
        assert!((s.onsets[5] - 4.6).abs() < 1e-12);
        assert_eq!(s.kinds[5], BeatKind::Pvc);
        assert!((s.onsets[6] - 6.0).abs() < 1e-12);
        assert!((0.4..0.6).contains(&s.amplitudes[5]));
        // compensatory pause at least the sinus interval
        assert!(s.ibi(5) >= 1.0);
    }

    #[test]
    fn slow_rate_intervals() {
        let s = build_beat_schedule(&quiet(35.0, 30.0), 3).unwrap();
        for k in 0..s.len() - 1 {
            assert!((s.ibi(k) - 60.0 / 35.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short_duration_errors() {
        assert!(build_beat_schedule(&quiet(60.0, 0.5), 0).is_err());
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = SynthConfig {
            base_hr_bpm: 300.0,
            ..SynthConfig::default()
        };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "base_hr_bpm"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = SynthConfig {
            native_rate_hz: 10.0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_schedule_renders_noise() {
        let cfg = SynthConfig {
            noise_sigma: 0.05,
            duration_s: 20.0,
            ..SynthConfig::default()
        };
        let sched = BeatSchedule {
            onsets: vec![],
            kinds: vec![],
            amplitudes: vec![],
            tail_ibi_s: 1.0,
        };
        let w = render_waveform(&sched, &cfg).unwrap();
        assert_eq!(w.len(), 20 * 128);
        let (m, sd) = crate::dsp::mean_sd(&w.samples);
        assert!(m.abs() < 0.01 && (sd - 0.05).abs() < 0.005, "{m} {sd}");
    }

    #[test]
    fn single_beat_peak_matches_closed_form() {
        let cfg = quiet(60.0, 3.0);
        let sched = BeatSchedule {
            onsets: vec![0.5],
            kinds: vec![BeatKind::Sinus],
            amplitudes: vec![1.0],
            tail_ibi_s: 1.0,
        };
        let w = render_waveform(&sched, &cfg).unwrap();
        // Oracle: Gaussian sum evaluated directly on the sample grid.
        let oracle = |t: f64| {
            let u = t - 0.5;
            (-0.5 * ((u - 0.15) / 0.06).powi(2)).exp() + 0.35 * (-0.5 * ((u - 0.45) / 0.10).powi(2)).exp()
        };
        let (imax, vmax) = w
            .samples
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let omax = (0..w.len()).map(|i| oracle(i as f64 / 128.0)).fold(f64::MIN, f64::max);
        assert!((vmax - omax).abs() < 1e-6);
        // Dicrotic overlap lifts the peak slightly above 1.
        assert!((vmax - 1.0).abs() < 0.01);
        assert!((imax as f64 / 128.0 - 0.65).abs() <= 1.0 / 128.0);
    }

    #[test]
    fn pvc_peak_is_attenuated() {
        let cfg = quiet(60.0, 10.0);
        let plan = EventPlan {
            pvc_times: vec![4.3],
            af_episodes: vec![],
        };
        let rec = synthesize_with_plan(&cfg, &plan).unwrap();
        let w = &rec.waveform;
        let peak_near = |t: f64| {
            let c = (t * 128.0) as usize;
            w.samples[c - 20..c + 20].iter().cloned().fold(f64::MIN, f64::max)
        };
        let amp = rec.schedule.amplitudes[5];
        let pvc_peak = peak_near(4.6 + 0.15 * rec.schedule.ibi(5));
        let sinus_peak = peak_near(3.15);
        let ratio = pvc_peak / sinus_peak;
        assert!((ratio - amp).abs() < 0.08, "ratio {ratio} amp {amp}");
    }

    #[test]
    fn clean_record_has_no_labels() {
        let rec = synthesize_record(&SynthConfig::default()).unwrap();
        assert!(rec.anomaly_intervals.is_empty());
        assert!(rec.gs_minutes.iter().all(|m| m.pvc_count == 0));
        assert_eq!(rec.gs_minutes.len(), 5);
    }

    #[test]
    fn three_injected_pvcs_are_counted() {
        let cfg = SynthConfig {
            duration_s: 150.0,
            ..SynthConfig::default()
        };
        let plan = EventPlan {
            pvc_times: vec![10.2, 65.0, 130.7],
            af_episodes: vec![],
        };
        let rec = synthesize_with_plan(&cfg, &plan).unwrap();
        assert_eq!(rec.schedule.count(BeatKind::Pvc), 3);
        assert_eq!(rec.pvc_total(), 3);
        let per_min: Vec<u32> = rec.gs_minutes.iter().map(|m| m.pvc_count).collect();
        assert_eq!(per_min, vec![1, 1, 1]);
    }

    #[test]
    fn deterministic_and_roundtrips() {
        let cfg = SynthConfig {
            duration_s: 90.0,
            pvc_rate_per_min: 3.0,
            af_episode_rate_per_hour: 20.0,
            seed: 99,
            ..SynthConfig::default()
        };
        let a = synthesize_record(&cfg).unwrap();
        let b = synthesize_record(&cfg).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        save_record(&a, Some("ward"), &dir.path().join("a")).unwrap();
        save_record(&b, Some("ward"), &dir.path().join("b")).unwrap();
        for f in ["record.json", "waveform.csv"] {
            let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{f} differs");
        }
        let (back, pop) = load_record(&dir.path().join("a")).unwrap();
        assert_eq!(pop.as_deref(), Some("ward"));
        assert_eq!(back, a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn schedule_invariants(
            hr in 35.0f64..180.0,
            hrv in 0.0f64..0.08,
            pvc in 0.0f64..8.0,
            af in 0.0f64..60.0,
            seed in any::<u64>(),
        ) {
            let cfg = SynthConfig {
                duration_s: 120.0,
                base_hr_bpm: hr,
                hrv_sigma: hrv,
                pvc_rate_per_min: pvc,
                af_episode_rate_per_hour: af,
                af_episode_len_s: 20.0,
                seed,
                ..SynthConfig::default()
            };
            let rec = synthesize_record(&cfg).unwrap();
            let s = &rec.schedule;
            for w in s.onsets.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(w[1] - w[0] > MIN_IBI_S && w[1] - w[0] < MAX_IBI_S);
            }
            for k in 0..s.len() {
                if s.kinds[k] == BeatKind::Pvc {
                    let t = s.onsets[k];
                    let hits = rec.anomaly_intervals.iter()
                        .filter(|iv| iv.kind == BeatKind::Pvc && t >= iv.start_s && t < iv.end_s)
                        .count();
                    prop_assert_eq!(hits, 1);
                    if k > 0 && k + 1 < s.len() {
                        prop_assert!(s.ibi(k) >= s.ibi(k - 1));
                    }
                }
            }
            prop_assert_eq!(rec.pvc_total() as usize, s.count(BeatKind::Pvc));
            for w in rec.anomaly_intervals.windows(2) {
                prop_assert!(w[0].end_s <= w[1].start_s);
            }
            for iv in &rec.anomaly_intervals {
                prop_assert!(iv.start_s >= 0.0 && iv.end_s <= cfg.duration_s && iv.start_s < iv.end_s);
            }
        }
    }
}
