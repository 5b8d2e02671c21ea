//! Minute-level alignment of detected regions with gold-standard PVC counts,
//! confusion matrices and per-population anomaly statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{AnomalyRegion, Detection};
use crate::error::{Error, Result};
use crate::par;
use crate::synthppg::GsMinute;

pub const MINUTE_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub min_coverage_s: f64,
    pub min_anomaly_s: f64,
    pub min_pvc: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            min_coverage_s: 30.0,
            min_anomaly_s: 0.5,
            min_pvc: vec![1, 2],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MINUTE_S).contains(&self.min_coverage_s) {
            return Err(Error::config("min_coverage_s", "must lie in [0, 60]"));
        }
        if !(self.min_anomaly_s > 0.0 && self.min_anomaly_s <= MINUTE_S) {
            return Err(Error::config("min_anomaly_s", "must lie in (0, 60]"));
        }
        if self.min_pvc.is_empty() {
            return Err(Error::config("min_pvc", "needs at least one value"));
        }
        if self.min_pvc.contains(&0) {
            return Err(Error::config("min_pvc", "0 would make every minute positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteObservation {
    pub record_id: String,
    pub minute_index: usize,
    pub pvc_count: u32,
    /// Seconds of analysed signal inside the minute.
    pub covered_s: f64,
    pub anomalous_s: f64,
    pub anomaly_flag: bool,
}

/// Length of the union of `spans` clipped to `[lo, hi)`.
fn clipped_union(spans: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let mut clipped: Vec<(f64, f64)> = spans
        .iter()
        .map(|&(s, e)| (s.max(lo), e.min(hi)))
        .filter(|(s, e)| e > s)
        .collect();
    clipped.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (s, e) in clipped {
        cur = match cur {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

/// Intersection of two span sets, both reduced to sorted disjoint form first.
fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let a = disjoint(a);
    let b = disjoint(b);
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let s = a[i].0.max(b[j].0);
        let e = a[i].1.min(b[j].1);
        if e > s {
            out.push((s, e));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn disjoint(spans: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = spans.iter().copied().filter(|(s, e)| e > s).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// One observation per gold-standard minute with at least `min_coverage_s`
/// of coverage. Regions straddling a minute boundary are split by duration.
pub fn minute_align(
    record_id: &str,
    regions: &[AnomalyRegion],
    coverage: &[(f64, f64)],
    gs_minutes: &[GsMinute],
    min_coverage_s: f64,
    min_anomaly_s: f64,
) -> Vec<MinuteObservation> {
    let region_spans: Vec<(f64, f64)> = regions.iter().map(|r| (r.start_s, r.end_s)).collect();
    let anomalous = intersect(&region_spans, coverage);
    let mut out = Vec::new();
    for gs in gs_minutes {
        let lo = gs.minute_index as f64 * MINUTE_S;
        let hi = lo + MINUTE_S;
        let covered_s = clipped_union(coverage, lo, hi);
        if covered_s < min_coverage_s {
            continue;
        }
        let anomalous_s = clipped_union(&anomalous, lo, hi);
        out.push(MinuteObservation {
            record_id: record_id.to_owned(),
            minute_index: gs.minute_index,
            pvc_count: gs.pvc_count,
            covered_s,
            anomalous_s,
            anomaly_flag: anomalous_s >= min_anomaly_s,
        });
    }
    out
}

/// One gold-standard row as stored in the GS CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GsRow {
    pub record_id: String,
    pub minute_index: usize,
    pub pvc_count: u32,
}

pub fn gs_rows(record_id: &str, minutes: &[GsMinute]) -> Vec<GsRow> {
    minutes
        .iter()
        .map(|m| GsRow {
            record_id: record_id.to_owned(),
            minute_index: m.minute_index,
            pvc_count: m.pvc_count,
        })
        .collect()
}

pub fn write_gs_csv(path: &Path, rows: &[GsRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut text = String::from("record_id,minute_index,pvc_count\n");
    for r in rows {
        if r.record_id.contains(',') || r.record_id.contains('\n') {
            return Err(Error::InvalidInput(format!(
                "record id {:?} cannot be written to CSV",
                r.record_id
            )));
        }
        let _ = writeln!(text, "{},{},{}", r.record_id, r.minute_index, r.pvc_count);
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_gs_csv(path: &Path) -> Result<Vec<GsRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if i == 0 {
            if line != "record_id,minute_index,pvc_count" {
                return Err(Error::malformed(path, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::malformed(path, format!("line {}: expected 3 fields", i + 1)));
        }
        let bad = |what: &str| Error::malformed(path, format!("line {}: bad {what}", i + 1));
        rows.push(GsRow {
            record_id: parts[0].to_owned(),
            minute_index: parts[1].parse().map_err(|_| bad("minute_index"))?,
            pvc_count: parts[2].parse().map_err(|_| bad("pvc_count"))?,
        });
    }
    Ok(rows)
}

/// Aligns every record's detection output with its GS rows. Records without a
/// detection contribute no observations (zero coverage).
pub fn align_all(detections: &[Detection], gs: &[GsRow], cfg: &EvalConfig) -> Vec<MinuteObservation> {
    let mut by_record: BTreeMap<&str, Vec<GsMinute>> = BTreeMap::new();
    for r in gs {
        by_record.entry(r.record_id.as_str()).or_default().push(GsMinute {
            minute_index: r.minute_index,
            pvc_count: r.pvc_count,
        });
    }
    let per_record = par::map(detections, |d| {
        let minutes = by_record.get(d.record_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        minute_align(
            &d.record_id,
            &d.regions,
            &d.coverage,
            minutes,
            cfg.min_coverage_s,
            cfg.min_anomaly_s,
        )
    });
    per_record.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when there are no GS-positive minutes.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fnr(&self) -> Option<f64> {
        ratio(self.fn_, self.tp + self.fn_)
    }

    /// `None` when there are no GS-negative minutes.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.fp + self.tn)
    }

    pub fn rates(&self) -> Rates {
        Rates {
            tpr: self.tpr(),
            fpr: self.fpr(),
            tnr: self.tnr(),
            fnr: self.fnr(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
}

pub fn confusion(observations: &[MinuteObservation], min_pvc: u32) -> Result<ConfusionMatrix> {
    if min_pvc == 0 {
        return Err(Error::config("min_pvc", "0 would make every minute positive"));
    }
    if observations.is_empty() {
        return Err(Error::InsufficientData("no eligible minutes".into()));
    }
    let mut m = ConfusionMatrix::default();
    for o in observations {
        match (o.pvc_count >= min_pvc, o.anomaly_flag) {
            (true, true) => m.tp += 1,
            (true, false) => m.fn_ += 1,
            (false, true) => m.fp += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}

/// Minute counts by GS PVC burden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prevalence {
    pub total: usize,
    pub zero: usize,
    pub one: usize,
    pub two_or_more: usize,
}

pub fn prevalence(observations: &[MinuteObservation]) -> Prevalence {
    let count = |f: &dyn Fn(u32) -> bool| observations.iter().filter(|o| f(o.pvc_count)).count();
    Prevalence {
        total: observations.len(),
        zero: count(&|c| c == 0),
        one: count(&|c| c == 1),
        two_or_more: count(&|c| c >= 2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub min_pvc: u32,
    pub counts: ConfusionMatrix,
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub per_min_pvc: Vec<SweepEntry>,
    pub prevalence: Prevalence,
}

pub fn confusion_sweep(observations: &[MinuteObservation], min_pvc: &[u32]) -> Result<SweepReport> {
    if min_pvc.is_empty() {
        return Err(Error::config("min_pvc", "needs at least one value"));
    }
    let per_min_pvc = min_pvc
        .iter()
        .map(|&k| {
            let counts = confusion(observations, k)?;
            Ok(SweepEntry {
                min_pvc: k,
                counts,
                rates: counts.rates(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        per_min_pvc,
        prevalence: prevalence(observations),
    })
}

/// Percentage with one decimal place, or `n/a`.
pub fn pct1(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{:.1}%", 100.0 * r),
        None => "n/a".to_owned(),
    }
}

/// Integer with thousands separators, e.g. `1,891`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Two-by-two table: GS rows, detector columns.
pub fn render_confusion(m: &ConfusionMatrix, min_pvc: u32) -> String {
    let cell = |n: usize, r: Option<f64>, label: &str| format!("{} ({} {})", thousands(n), pct1(r), label);
    let rows = [
        (
            format!("PVC in GS (>= {min_pvc}/min)"),
            cell(m.tp, m.tpr(), "true positive"),
            cell(m.fn_, m.fnr(), "false negative"),
        ),
        (
            format!("No PVC in GS (< {min_pvc}/min)"),
            cell(m.fp, m.fpr(), "false positive"),
            cell(m.tn, m.tnr(), "true negative"),
        ),
    ];
    let head = ("", "Anomaly in PPG: yes".to_owned(), "Anomaly in PPG: no".to_owned());
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let w1 = rows.iter().map(|r| r.1.len()).chain([head.1.len()]).max().unwrap_or(0);
    let w2 = rows.iter().map(|r| r.2.len()).chain([head.2.len()]).max().unwrap_or(0);
    let rule = format!(
        "+{}+{}+{}+\n",
        "-".repeat(w0 + 2),
        "-".repeat(w1 + 2),
        "-".repeat(w2 + 2)
    );
    let mut s = rule.clone();
    let _ = writeln!(s, "| {:w0$} | {:w1$} | {:w2$} |", head.0, head.1, head.2);
    s.push_str(&rule);
    for r in &rows {
        let _ = writeln!(s, "| {:w0$} | {:w1$} | {:w2$} |", r.0, r.1, r.2);
        s.push_str(&rule);
    }
    s
}

pub fn render_prevalence(p: &Prevalence) -> String {
    let share = |n: usize| pct1(ratio(n, p.total));
    format!(
        "{} eligible minutes: {} ({}) are 0 PVCs/min, {} ({}) are 1 PVC/min, {} ({}) are >= 2 PVCs/min\n",
        thousands(p.total),
        thousands(p.zero),
        share(p.zero),
        thousands(p.one),
        share(p.one),
        thousands(p.two_or_more),
        share(p.two_or_more),
    )
}

pub fn render_sweep(report: &SweepReport) -> String {
    let mut s = render_prevalence(&report.prevalence);
    for e in &report.per_min_pvc {
        let _ = writeln!(s, "\nmin_pvc = {}", e.min_pvc);
        s.push_str(&render_confusion(&e.counts, e.min_pvc));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFraction {
    pub record_id: String,
    pub usable_segments: usize,
    pub flagged_segments: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub label: String,
    pub n_records: usize,
    pub avg: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub max: f64,
    pub records: Vec<RecordFraction>,
}

pub fn record_fraction(d: &Detection) -> Result<RecordFraction> {
    if d.usable_segments == 0 {
        return Err(Error::InsufficientData(format!(
            "record {} has no usable segment",
            d.record_id
        )));
    }
    Ok(RecordFraction {
        record_id: d.record_id.clone(),
        usable_segments: d.usable_segments,
        flagged_segments: d.flagged_segments,
        fraction: d.flagged_segments as f64 / d.usable_segments as f64,
    })
}

pub fn stats_from_fractions(label: &str, records: Vec<RecordFraction>) -> Result<PopulationStats> {
    if records.is_empty() {
        return Err(Error::InsufficientData(format!("population {label:?} has no records")));
    }
    let n = records.len() as f64;
    let avg = records.iter().map(|r| r.fraction).sum::<f64>() / n;
    let var = records.iter().map(|r| (r.fraction - avg).powi(2)).sum::<f64>() / n;
    let max = records.iter().map(|r| r.fraction).fold(0.0, f64::max);
    Ok(PopulationStats {
        label: label.to_owned(),
        n_records: records.len(),
        avg,
        sd: var.sqrt(),
        max: max.max(avg),
        records,
    })
}

/// Groups `(label, detection)` pairs by label, in order of first appearance.
pub fn population_stats(labelled: &[(String, Detection)]) -> Result<Vec<PopulationStats>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<RecordFraction>> = BTreeMap::new();
    for (label, d) in labelled {
        if !groups.contains_key(label.as_str()) {
            order.push(label);
        }
        groups.entry(label).or_default().push(record_fraction(d)?);
    }
    order
        .into_iter()
        .map(|label| stats_from_fractions(label, groups.remove(label).unwrap_or_default()))
        .collect()
}

/// `5.10% (±5.0%)` style average cell.
pub fn format_avg_sd(avg: f64, sd: f64) -> String {
    format!("{:.2}% (±{:.1}%)", 100.0 * avg, 100.0 * sd)
}

pub fn render_population_table(stats: &[PopulationStats]) -> String {
    let head = ["Population:", "Avg (Stdev)", "Max"];
    let rows: Vec<[String; 3]> = stats
        .iter()
        .map(|p| {
            [
                p.label.clone(),
                format_avg_sd(p.avg, p.sd),
                format!("{:.1}%", 100.0 * p.max),
            ]
        })
        .collect();
    let w: Vec<usize> = (0..3)
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain([head[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let rule = format!(
        "+{}+{}+{}+\n",
        "-".repeat(w[0] + 2),
        "-".repeat(w[1] + 2),
        "-".repeat(w[2] + 2)
    );
    let pad = |s: &str, width: usize| format!("{s}{}", " ".repeat(width - s.chars().count()));
    let mut s = String::from("% of PPG samples with anomalies, per record\n");
    s.push_str(&rule);
    let _ = writeln!(
        s,
        "| {} | {} | {} |",
        pad(head[0], w[0]),
        pad(head[1], w[1]),
        pad(head[2], w[2])
    );
    s.push_str(&rule);
    for r in &rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            pad(&r[0], w[0]),
            pad(&r[1], w[1]),
            pad(&r[2], w[2])
        );
        s.push_str(&rule);
    }
    s
}

/// Full evaluation output for one set of detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub n_observations: usize,
    pub per_min_pvc: Vec<SweepEntry>,
    pub prevalence: Prevalence,
    pub population_stats: Vec<PopulationStats>,
}

impl EvalReport {
    pub fn build(
        config_hash: &str,
        observations: &[MinuteObservation],
        min_pvc: &[u32],
        population_stats: Vec<PopulationStats>,
    ) -> Result<Self> {
        let sweep = confusion_sweep(observations, min_pvc)?;
        Ok(EvalReport {
            config_hash: config_hash.to_owned(),
            n_observations: observations.len(),
            per_min_pvc: sweep.per_min_pvc,
            prevalence: sweep.prevalence,
            population_stats,
        })
    }

    pub fn sweep(&self) -> SweepReport {
        SweepReport {
            per_min_pvc: self.per_min_pvc.clone(),
            prevalence: self.prevalence,
        }
    }

    pub fn render_text(&self) -> String {
        let mut s = render_sweep(&self.sweep());
        if !self.population_stats.is_empty() {
            s.push('\n');
            s.push_str(&render_population_table(&self.population_stats));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region(s: f64, e: f64) -> AnomalyRegion {
        AnomalyRegion {
            record_id: "r".into(),
            start_s: s,
            end_s: e,
            min_r: 0.1,
        }
    }

    fn gs(counts: &[u32]) -> Vec<GsMinute> {
        counts
            .iter()
            .enumerate()
            .map(|(minute_index, &pvc_count)| GsMinute {
                minute_index,
                pvc_count,
            })
            .collect()
    }

    fn obs(pvc_count: u32, anomaly_flag: bool) -> MinuteObservation {
        MinuteObservation {
            record_id: "r".into(),
            minute_index: 0,
            pvc_count,
            covered_s: 60.0,
            anomalous_s: 0.0,
            anomaly_flag,
        }
    }

    fn table1() -> Vec<MinuteObservation> {
        let mut v = Vec::new();
        v.extend((0..231).map(|_| obs(1, true)));
        v.extend((0..156).map(|_| obs(1, false)));
        v.extend((0..574).map(|_| obs(0, true)));
        v.extend((0..1891).map(|_| obs(0, false)));
        v
    }

    #[test]
    fn covered_minute_without_regions() {
        let o = minute_align("r", &[], &[(0.0, 60.0)], &gs(&[0]), 30.0, 0.5);
        assert_eq!(o.len(), 1);
        assert!(!o[0].anomaly_flag);
        assert_eq!(o[0].covered_s, 60.0);
    }

    #[test]
    fn short_coverage_is_excluded() {
        let o = minute_align("r", &[region(1.0, 10.0)], &[(0.0, 20.0)], &gs(&[3]), 30.0, 0.5);
        assert!(o.is_empty());
    }

    #[test]
    fn straddling_region_is_split() {
        let o = minute_align("r", &[region(59.8, 60.4)], &[(0.0, 120.0)], &gs(&[0, 0]), 30.0, 0.5);
        assert!((o[0].anomalous_s - 0.2).abs() < 1e-9);
        assert!((o[1].anomalous_s - 0.4).abs() < 1e-9);
        assert!(!o[0].anomaly_flag && !o[1].anomaly_flag);
    }

    #[test]
    fn table1_rates() {
        let m = confusion(&table1(), 1).unwrap();
        assert_eq!((m.tp, m.fn_, m.fp, m.tn), (231, 156, 574, 1891));
        assert!((100.0 * m.tpr().unwrap() - 59.7).abs() < 0.05);
        assert!((100.0 * m.fpr().unwrap() - 23.286).abs() < 0.001);
        let text = render_confusion(&m, 1);
        assert!(text.contains("231 (59.7% true positive)"), "{text}");
        assert!(text.contains("1,891 (76.7% true negative)"), "{text}");
    }

    #[test]
    fn all_negative_unflagged() {
        let v: Vec<_> = (0..7).map(|_| obs(0, false)).collect();
        let m = confusion(&v, 1).unwrap();
        assert_eq!(
            m,
            ConfusionMatrix {
                tp: 0,
                fp: 0,
                fn_: 0,
                tn: 7
            }
        );
        assert_eq!(m.tpr(), None);
    }

    #[test]
    fn guards() {
        assert!(confusion(&table1(), 0).is_err());
        assert!(confusion(&[], 1).is_err());
        assert!(confusion_sweep(&table1(), &[1, 0]).is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_reports_prevalence() {
        let a = confusion_sweep(&table1(), &[1, 2]).unwrap();
        let b = confusion_sweep(&table1(), &[1, 2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prevalence.zero, 2465);
        let text = render_sweep(&a);
        assert!(text.contains("2,465 (86.4%) are 0 PVCs/min"), "{text}");
    }

    #[test]
    fn population_examples() {
        let frac = |id: &str, f: usize| RecordFraction {
            record_id: id.into(),
            usable_segments: 10,
            flagged_segments: f,
            fraction: f as f64 / 10.0,
        };
        let s = stats_from_fractions("A", vec![frac("a", 1), frac("b", 3)]).unwrap();
        assert!((s.avg - 0.2).abs() < 1e-12);
        assert!((s.sd - 0.1).abs() < 1e-12);
        assert!((s.max - 0.3).abs() < 1e-12);
        let z = stats_from_fractions("Z", vec![frac("a", 0), frac("b", 0)]).unwrap();
        assert_eq!((z.avg, z.sd, z.max), (0.0, 0.0, 0.0));
        assert!(stats_from_fractions("E", vec![]).is_err());
        assert_eq!(format_avg_sd(0.051, 0.05), "5.10% (±5.0%)");
        let table = render_population_table(&[s]);
        assert!(table.contains("| A           | 20.00% (±10.0%) | 30.0% |"), "{table}");
    }

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1891), "1,891");
        assert_eq!(thousands(1234567), "1,234,567");
    }

    #[test]
    fn gs_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gs.csv");
        let rows = gs_rows("rec-1", &gs(&[0, 2, 1]));
        write_gs_csv(&p, &rows).unwrap();
        assert_eq!(read_gs_csv(&p).unwrap(), rows);
        std::fs::write(&p, "record_id,minute_index,pvc_count\nx,1\n").unwrap();
        assert!(matches!(read_gs_csv(&p), Err(Error::Malformed { .. })));
    }

    /// Per-sample oracle at 1 ms resolution; boundaries sit on the grid.
    fn brute(regions: &[(f64, f64)], coverage: &[(f64, f64)], n_min: usize) -> Vec<(f64, f64)> {
        let step = 1e-3;
        let n = (n_min as f64 * MINUTE_S / step).round() as usize;
        let mut out = vec![(0.0, 0.0); n_min];
        for i in 0..n {
            let t = (i as f64 + 0.5) * step;
            let cov = coverage.iter().any(|&(s, e)| t >= s && t < e);
            let an = cov && regions.iter().any(|&(s, e)| t >= s && t < e);
            let m = i * n_min / n;
            if cov {
                out[m].0 += step;
            }
            if an {
                out[m].1 += step;
            }
        }
        out
    }

    fn spans(max_n: usize, horizon: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0u32..(horizon as u32 * 10), 1u32..400), 0..=max_n).prop_map(|v| {
            v.into_iter()
                .map(|(s, len)| (s as f64 / 10.0, (s + len) as f64 / 10.0))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_per_sample_oracle(
            n_min in 1usize..=3,
            regs in spans(5, 180.0),
            cov in spans(4, 180.0),
        ) {
            let regions: Vec<AnomalyRegion> = regs.iter().map(|&(s, e)| region(s, e)).collect();
            let minutes = gs(&vec![0; n_min]);
            let o = minute_align("r", &regions, &cov, &minutes, 0.0, 0.5);
            let oracle = brute(&regs, &cov, n_min);
            prop_assert_eq!(o.len(), n_min);
            for (obs, (c, a)) in o.iter().zip(oracle) {
                prop_assert!((obs.covered_s - c).abs() < 1e-6, "{} vs {}", obs.covered_s, c);
                prop_assert!((obs.anomalous_s - a).abs() < 1e-6, "{} vs {}", obs.anomalous_s, a);
                prop_assert_eq!(obs.anomaly_flag, obs.anomalous_s >= 0.5);
            }
        }

        #[test]
        fn split_conserves_duration(regs in spans(6, 300.0), cov in spans(5, 300.0)) {
            let regions: Vec<AnomalyRegion> = regs.iter().map(|&(s, e)| region(s, e)).collect();
            let minutes = gs(&[0; 6]);
            let o = minute_align("r", &regions, &cov, &minutes, 0.0, 0.5);
            let total: f64 = o.iter().map(|m| m.anomalous_s).sum();
            let expected: f64 = intersect(&regs, &cov).iter().map(|(s, e)| e.min(360.0) - s.min(360.0)).sum();
            prop_assert!((total - expected).abs() < 1e-9, "{} vs {}", total, expected);
        }

        #[test]
        fn counts_are_conserved_and_order_free(
            flags in prop::collection::vec((0u32..4, any::<bool>()), 1..200),
            k in 1u32..4,
            rot in 0usize..200,
        ) {
            let v: Vec<_> = flags.iter().map(|&(c, f)| obs(c, f)).collect();
            let m = confusion(&v, k).unwrap();
            prop_assert_eq!(m.total(), v.len());
            let mut w = v.clone();
            w.rotate_left(rot % v.len());
            w.reverse();
            prop_assert_eq!(confusion(&w, k).unwrap(), m);
            if let (Some(tpr), Some(fnr)) = (m.tpr(), m.fnr()) {
                prop_assert!((tpr + fnr - 1.0).abs() < 1e-12);
            }
            if let (Some(fpr), Some(tnr)) = (m.fpr(), m.tnr()) {
                prop_assert!((fpr + tnr - 1.0).abs() < 1e-12);
            }
        }
    }
}
