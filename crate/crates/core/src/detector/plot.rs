//! SVG overlay of a segment, its reconstruction, the r trace and flagged regions.

use std::fmt::Write;

use super::SegmentDetection;

const WIDTH: f64 = 960.0;
const SIGNAL_H: f64 = 220.0;
const TRACE_H: f64 = 120.0;
const PAD: f64 = 30.0;

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.enumerate() {
        let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "" } else { " " }, x, y);
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{d}\"/>\n")
}

/// Renders one segment's detection as a standalone SVG document.
pub fn segment_svg(det: &SegmentDetection, threshold: f64) -> String {
    let seg = &det.segment;
    let n = seg.samples.len().max(2);
    let t0 = seg.start_s;
    let span = seg.duration_s;
    let x_of = |t: f64| PAD + (t - t0) / span * (WIDTH - 2.0 * PAD);
    let (lo, hi) = seg
        .samples
        .iter()
        .chain(&det.reconstruction)
        .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let range = (hi - lo).max(1e-9);
    let y_sig = |v: f64| PAD + (1.0 - (v - lo) / range) * SIGNAL_H;
    let trace_top = 2.0 * PAD + SIGNAL_H;
    let y_r = |r: f64| trace_top + (1.0 - (r + 1.0) / 2.0) * TRACE_H;
    let height = trace_top + TRACE_H + PAD;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for r in &det.regions {
        let (a, b) = (x_of(r.start_s.max(t0)), x_of(r.end_s.min(t0 + span)));
        let _ = writeln!(
            svg,
            "<rect x=\"{a:.2}\" y=\"{PAD}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#f4a3a3\" fill-opacity=\"0.5\"/>",
            (b - a).max(0.0),
            height - 2.0 * PAD
        );
    }
    let dt = span / n as f64;
    svg += &polyline(
        seg.samples
            .iter()
            .enumerate()
            .map(|(i, v)| (x_of(t0 + i as f64 * dt), y_sig(*v))),
        "#1f77b4",
    );
    svg += &polyline(
        det.reconstruction
            .iter()
            .enumerate()
            .map(|(i, v)| (x_of(t0 + i as f64 * dt), y_sig(*v))),
        "#ff7f0e",
    );
    let half = det.trace.window_len_s / 2.0;
    svg += &polyline(
        det.trace.points.iter().map(|&(t, r)| (x_of(t + half), y_r(r))),
        "#2ca02c",
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{PAD}\" x2=\"{:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>",
        WIDTH - PAD,
        y_r(threshold),
        y_r(threshold)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{PAD}\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">{} @ {:.2} s: input (blue), reconstruction (orange), windowed r (green), r = {threshold}</text>",
        seg.source_record_id, t0
    );
    svg += "</svg>\n";
    svg
}
