//! Minimal static SVG renderings: a Bland-Altman scatter and a box plot.

use oxiline::evaluate::{AgreementReport, BoxStats};
use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        H - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    s
}

fn hline(s: &mut String, f: &Frame, y: f64, color: &str, dash: bool, label: &str) {
    let dash_attr = if dash {
        r#" stroke-dasharray="6,4""#
    } else {
        ""
    };
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="1"{dash_attr}/>"#,
        f.x(f.x0),
        f.y(y),
        f.x(f.x1),
        f.y(y)
    );
    if !label.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" fill="{color}">{label}</text>"#,
            f.x(f.x1) + 4.0,
            f.y(y) + 3.0
        );
    }
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    for (v, at_min) in [(f.x0, true), (f.x1, false)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="10" text-anchor="{}">{v:.1}</text>"#,
            f.x(v),
            H - MARGIN + 14.0,
            if at_min { "start" } else { "end" }
        );
    }
    for v in [f.y0, f.y1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.1}</text>"#,
            MARGIN - 6.0,
            f.y(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{x_label}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle" transform="rotate(-90 14 {y})">{y_label}</text>"#,
        H / 2.0,
        y = H / 2.0
    );
}

/// Scatter of (mean of pair, difference) with the mean, limits of agreement
/// and the clinical band drawn as horizontal lines.
pub fn bland_altman_svg(
    path: &Path,
    patient_id: &str,
    points: &[(f64, f64)],
    report: &AgreementReport,
    band: f64,
) -> std::io::Result<()> {
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (-band, band);
    for &(m, d) in points {
        x0 = x0.min(m);
        x1 = x1.max(m);
        y0 = y0.min(d);
        y1 = y1.max(d);
    }
    y0 = y0.min(report.loa_low) - 0.5;
    y1 = y1.max(report.loa_high) + 0.5;
    if !x0.is_finite() || x1 - x0 < 1e-9 {
        x0 -= 1.0;
        x1 = x0 + 2.0;
    }
    let f = Frame { x0, x1, y0, y1 };
    let mut s = open_svg(&format!("Agreement, patient {patient_id}"));
    axes(
        &mut s,
        &f,
        "mean of reference and estimate (%)",
        "estimate - reference (%)",
    );
    hline(&mut s, &f, report.mean_diff, "black", false, "mean");
    hline(&mut s, &f, report.loa_low, "gray", true, "loa");
    hline(&mut s, &f, report.loa_high, "gray", true, "loa");
    hline(&mut s, &f, -band, "red", true, "");
    hline(&mut s, &f, band, "red", true, "band");
    for &(m, d) in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2.2" fill="steelblue" fill-opacity="0.6"/>"#,
            f.x(m),
            f.y(d)
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)
}

/// One box-and-whisker glyph per patient over per-window absolute error.
pub fn box_plot_svg(path: &Path, stats: &[BoxStats], band: f64) -> std::io::Result<()> {
    let mut y1 = band;
    for b in stats {
        y1 = y1.max(b.whisker_high);
        for &o in &b.outliers {
            y1 = y1.max(o);
        }
    }
    let f = Frame {
        x0: 0.0,
        x1: stats.len() as f64,
        y0: 0.0,
        y1: y1 * 1.08 + 0.2,
    };
    let mut s = open_svg("Per-window absolute error by patient");
    axes(&mut s, &f, "patient", "absolute error (%)");
    hline(&mut s, &f, band, "red", true, "band");
    let slot = (W - 2.0 * MARGIN) / stats.len() as f64;
    let half = (slot * 0.30).min(22.0);
    for (i, b) in stats.iter().enumerate() {
        let cx = f.x(i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            f.y(b.whisker_low),
            f.y(b.whisker_high)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="lightsteelblue" stroke="black"/>"#,
            cx - half,
            f.y(b.q3),
            2.0 * half,
            (f.y(b.q1) - f.y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            f.y(b.median),
            cx + half,
            f.y(b.median)
        );
        for &o in &b.outliers {
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.1}" cy="{:.1}" r="2" fill="none" stroke="black"/>"#,
                f.y(o)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{}" font-family="sans-serif" font-size="9" text-anchor="middle">{}</text>"#,
            H - MARGIN + 26.0,
            b.patient_id
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)
}
