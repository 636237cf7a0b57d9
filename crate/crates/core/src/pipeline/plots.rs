//! Curve emission: CSV files, a dependency-free SVG line renderer, the
//! cumulative error distribution, and the trajectory median filter.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::pipeline::evaluate::EvalReport;
use crate::pipeline::PipelineError;

/// One condition of a sweep: the swept value and its evaluation.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub x: f64,
    pub report: EvalReport,
}

/// A labelled polyline for [`write_line_svg`].
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
}

/// Two-column CSV, one row per point.
pub fn write_curve_csv(
    path: &Path,
    x_name: &str,
    y_name: &str,
    rows: &[(f64, f64)],
) -> Result<(), PipelineError> {
    let mut text = format!("{x_name},{y_name}\n");
    for (x, y) in rows {
        writeln!(text, "{x},{y}").unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Cumulative distribution of the truncated errors: sorted error (cm)
/// against the fraction of frames at or below it. Non-decreasing in
/// both coordinates by construction.
pub fn error_cdf(report: &EvalReport) -> Vec<(f64, f64)> {
    let mut errs: Vec<f64> = report
        .records
        .iter()
        .map(|r| 100.0 * r.error_m.min(super::evaluate::ERROR_TRUNCATION_M))
        .collect();
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = errs.len() as f64;
    errs.into_iter().enumerate().map(|(i, e)| (e, (i + 1) as f64 / n)).collect()
}

/// Per-coordinate moving median over a time series of positions. The
/// window must be odd; at the edges it shrinks symmetrically, so the
/// output length equals the input length and endpoints pass through.
pub fn trajectory_filter(
    series: &[[f64; 3]],
    window: usize,
) -> Result<Vec<[f64; 3]>, PipelineError> {
    if series.is_empty() {
        return Err(PipelineError::Eval("trajectory filter needs a nonempty series".into()));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(PipelineError::Eval(format!(
            "trajectory filter window must be odd and positive, got {window}"
        )));
    }
    let n = series.len();
    let half = window / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = half.min(i).min(n - 1 - i);
        let mut p = [0.0; 3];
        for (d, slot) in p.iter_mut().enumerate() {
            let mut vals: Vec<f64> = series[i - k..=i + k].iter().map(|q| q[d]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            *slot = vals[vals.len() / 2];
        }
        out.push(p);
    }
    Ok(out)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Renders labelled polylines into a small standalone SVG with axes,
/// ticks, and a legend.
pub fn write_line_svg(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
) -> Result<(), PipelineError> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(PipelineError::Eval(format!("plot {title:?} has no points")));
    }
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 55.0);
    let bound = |f: fn(&(f64, f64)) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        all.iter().map(f).fold(init, pick)
    };
    let mut x0 = bound(|p| p.0, f64::INFINITY, f64::min);
    let mut x1 = bound(|p| p.0, f64::NEG_INFINITY, f64::max);
    let mut y0 = bound(|p| p.1, f64::INFINITY, f64::min);
    let mut y1 = bound(|p| p.1, f64::NEG_INFINITY, f64::max);
    if x0 == x1 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y0 == y1 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pad_x = 0.05 * (x1 - x0);
    let pad_y = 0.05 * (y1 - y0);
    x0 -= pad_x;
    x1 += pad_x;
    y0 -= pad_y;
    y1 += pad_y;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
        w / 2.0,
        esc(title)
    )
    .unwrap();

    let axis = "stroke=\"black\" stroke-width=\"1\"";
    writeln!(svg, "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" {axis}/>", h - mb, w - mr, h - mb)
        .unwrap();
    writeln!(svg, "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" {axis}/>", h - mb).unwrap();

    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let px = sx(xv);
        let py = sy(yv);
        writeln!(svg, "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" {axis}/>", h - mb, h - mb + 5.0)
            .unwrap();
        writeln!(
            svg,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            h - mb + 18.0,
            xv
        )
        .unwrap();
        writeln!(svg, "<line x1=\"{}\" y1=\"{py}\" x2=\"{ml}\" y2=\"{py}\" {axis}/>", ml - 5.0)
            .unwrap();
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            ml - 8.0,
            py + 4.0,
            yv
        )
        .unwrap();
    }
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        (ml + w - mr) / 2.0,
        h - 12.0,
        esc(xlabel)
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        esc(ylabel)
    )
    .unwrap();

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
        let ly = mt + 16.0 * si as f64 + 6.0;
        writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            w - mr - 130.0,
            w - mr - 105.0
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            w - mr - 100.0,
            ly + 4.0,
            esc(s.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

type Curve = Vec<(f64, f64)>;

fn sweep_curves(sweep: &[SweepPoint]) -> (Curve, Curve) {
    let mae = sweep.iter().map(|p| (p.x, p.report.mae_cm)).collect();
    let acc = sweep.iter().map(|p| (p.x, p.report.acc_at_30cm)).collect();
    (mae, acc)
}

/// Writes the standard panel set into `dir`: error and hit-rate against
/// noise level and against reverberation time, the de-noising curve
/// (output against input SNR), and the error distribution. Empty
/// inputs skip their panels; returns the files written.
pub fn emit_plots(
    dir: &Path,
    snr_sweep: &[SweepPoint],
    t60_sweep: &[SweepPoint],
    gain_curve: &[(f64, f64)],
    cdf_source: Option<&EvalReport>,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let emit = |name: &str,
                    title: &str,
                    xlabel: &str,
                    ylabel: &str,
                    rows: &[(f64, f64)],
                    written: &mut Vec<PathBuf>|
     -> Result<(), PipelineError> {
        let csv = dir.join(format!("{name}.csv"));
        let svg = dir.join(format!("{name}.svg"));
        write_curve_csv(&csv, xlabel, ylabel, rows)?;
        write_line_svg(&svg, title, xlabel, ylabel, &[Series { label: ylabel, points: rows }])?;
        written.push(csv);
        written.push(svg);
        Ok(())
    };

    if !snr_sweep.is_empty() {
        let (mae, acc) = sweep_curves(snr_sweep);
        emit("mae_vs_snr", "Localization error vs noise", "snr_db", "mae_cm", &mae, &mut written)?;
        emit("acc_vs_snr", "Hit rate vs noise", "snr_db", "acc_at_30cm", &acc, &mut written)?;
    }
    if !t60_sweep.is_empty() {
        let (mae, acc) = sweep_curves(t60_sweep);
        emit(
            "mae_vs_t60",
            "Localization error vs reverberation",
            "t60_s",
            "mae_cm",
            &mae,
            &mut written,
        )?;
        emit("acc_vs_t60", "Hit rate vs reverberation", "t60_s", "acc_at_30cm", &acc, &mut written)?;
    }
    if !gain_curve.is_empty() {
        emit(
            "output_vs_input_snr",
            "Reconstruction SNR",
            "input_snr_db",
            "output_snr_db",
            gain_curve,
            &mut written,
        )?;
    }
    if let Some(report) = cdf_source {
        let cdf = error_cdf(report);
        emit("error_cdf", "Error distribution", "error_cm", "fraction", &cdf, &mut written)?;
    }
    Ok(written)
}
