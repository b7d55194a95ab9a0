//! Minimal SVG line charts: series, reconstruction and log-scale score.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const PANEL: f64 = 160.0;
const MARGIN: f64 = 40.0;

struct Panel<'a> {
    title: &'a str,
    lines: Vec<(&'a [f64], &'a str)>,
    hline: Option<f64>,
}

fn range(panel: &Panel) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in panel.lines.iter().flat_map(|(l, _)| l.iter()).chain(panel.hline.iter()) {
        if v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn draw(out: &mut String, panel: &Panel, top: f64) {
    let (lo, hi) = range(panel);
    let inner_w = WIDTH - 2.0 * MARGIN;
    let inner_h = PANEL - 30.0;
    let y0 = top + 20.0;
    let ys = |v: f64| y0 + inner_h * (1.0 - (v - lo) / (hi - lo));
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{y0}" width="{inner_w}" height="{inner_h}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-size="12" font-family="sans-serif">{} [{lo:.3}, {hi:.3}]</text>"#,
        top + 14.0,
        panel.title
    );
    for (line, color) in &panel.lines {
        let n = line.len().max(2) - 1;
        let pts: Vec<String> = line
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| format!("{:.2},{:.2}", MARGIN + inner_w * i as f64 / n as f64, ys(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    if let Some(h) = panel.hline {
        let y = ys(h);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#d62728" stroke-dasharray="4 3"/>"##,
            MARGIN + inner_w
        );
    }
}

/// Three stacked panels: original, reconstruction, `log10` anomaly score
/// with the threshold as a dashed line.
pub fn window_svg(title: &str, original: &[f64], reconstruction: &[f64], scores: &[f64], tau: f64) -> String {
    let log_scores: Vec<f64> = scores.iter().map(|s| s.max(1e-12).log10()).collect();
    let panels = [
        Panel {
            title: "original",
            lines: vec![(original, "#1f77b4")],
            hline: None,
        },
        Panel {
            title: "reconstruction",
            lines: vec![(original, "#c7c7c7"), (reconstruction, "#2ca02c")],
            hline: None,
        },
        Panel {
            title: "log10 anomaly score",
            lines: vec![(&log_scores, "#ff7f0e")],
            hline: Some(tau.max(1e-12).log10()),
        },
    ];
    let height = 30.0 + PANEL * panels.len() as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">
<text x="{MARGIN}" y="18" font-size="14" font-family="sans-serif">{title}</text>
"#
    );
    for (k, p) in panels.iter().enumerate() {
        draw(&mut out, p, 24.0 + PANEL * k as f64);
    }
    out.push_str("</svg>\n");
    out
}
