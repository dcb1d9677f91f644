//! Minimal SVG line charts.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: &str, color: &str, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), color: color.into(), points, dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 300.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn render_panel(out: &mut String, panel: &Panel, y_off: f64) {
    let tf = |y: f64| if panel.log_y { y.log10() } else { y };
    let pts: Vec<(f64, f64)> = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x.is_finite() && y.is_finite() && (!panel.log_y || y > 0.0))
        .map(|(x, y)| (x, tf(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        y_off + 18.0,
        esc(&panel.title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, y_off + TOP, y_off + H - BOTTOM);
    let _ = writeln!(
        out,
        r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        x1 - x0,
        y1 - y0
    );
    if pts.is_empty() {
        return;
    }
    let (mut xmin, mut xmax) = pts.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (mut ymin, mut ymax) = pts.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    if xmax <= xmin {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymax <= ymin {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
    let sy = |y: f64| y1 - (y - ymin) / (ymax - ymin) * (y1 - y0);
    for k in 0..=4 {
        let v = ymin + (ymax - ymin) * k as f64 / 4.0;
        let label = if panel.log_y { tick_label(10f64.powf(v)) } else { tick_label(v) };
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#eee"/><text x="{}" y="{:.2}" font-size="11" text-anchor="end">{label}</text>"##,
            x0 - 4.0,
            sy(v) + 4.0,
            y = sy(v)
        );
        let xv = xmin + (xmax - xmin) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            sx(xv),
            y1 + 15.0,
            tick_label(xv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        y1 + 33.0,
        esc(&panel.x_label)
    );
    for (k, s) in panel.series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|&&(x, y)| x.is_finite() && y.is_finite() && (!panel.log_y || y > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(tf(y))))
            .collect();
        if path.is_empty() {
            continue;
        }
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
            esc(&s.color),
            path.join(" ")
        );
        let ly = y0 + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}" font-size="11">{}</text>"#,
            x1 - 150.0,
            x1 - 130.0,
            esc(&s.color),
            x1 - 125.0,
            ly + 4.0,
            esc(&s.label)
        );
    }
}

/// Stacks the panels vertically into one document.
pub fn render(panels: &[Panel]) -> String {
    let height = H * panels.len() as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}" font-family="sans-serif">"#
    );
    out.push('\n');
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, H * k as f64);
    }
    out.push_str("</svg>\n");
    out
}
