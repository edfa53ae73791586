//! Standalone SVG line charts of the run summary.

use std::fmt::Write as _;

use thiserror::Error;

use crate::pipeline::{HiddenProgressFlag, Metric, RunSummary};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const MAX_X_LABELS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlotError {
    #[error("need at least 2 checkpoints to plot, got {0}")]
    TooFewCheckpoints(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    /// File-name suffix, e.g. `max_eig_norm.svg`.
    pub name: String,
    pub svg: String,
}

fn title(metric: Metric) -> &'static str {
    match metric {
        Metric::MedianReward => "Median reward",
        Metric::MaxEigNorm => "Maximum eigenvalue norm",
        Metric::NormalizedCtrbRank => "Normalized controllability rank",
    }
}

/// Tick label with about four significant digits.
fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (3 - mag).clamp(0, 10) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn comment_safe(s: &str) -> String {
    let mut out = s.to_string();
    while out.contains("--") {
        out = out.replace("--", "- -");
    }
    if out.ends_with('-') {
        out.push(' ');
    }
    out
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn render(summary: &RunSummary, flags: &[HiddenProgressFlag], metric: Metric, header: &str) -> String {
    let cps = &summary.checkpoints;
    let pts: Vec<(f64, Option<(f64, f64)>)> = cps
        .iter()
        .map(|c| (c.checkpoint as f64, c.aggregate(metric).map(|a| (a.mean, a.se))))
        .collect();

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, v) in &pts {
        if let Some((m, se)) = v {
            lo = lo.min(m - se);
            hi = hi.max(m + se);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = if hi > lo { 0.08 * (hi - lo) } else { 0.05 * lo.abs().max(1.0) };
    let frame = Frame {
        x0: pts[0].0,
        x1: pts[pts.len() - 1].0,
        y0: lo - pad,
        y1: hi + pad,
    };

    let mut s = String::new();
    let _ = writeln!(s, "<!-- {} -->", comment_safe(header));
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<title>{}</title>", title(metric));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    let (top, bottom) = (TOP, HEIGHT - BOTTOM);
    for f in flags {
        let (a, b) = (frame.px(f.start_checkpoint as f64), frame.px(f.end_checkpoint as f64));
        let _ = writeln!(
            s,
            r##"<rect class="hidden-progress" x="{a:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#ff9900" fill-opacity="0.2"/>"##,
            b - a,
            bottom - top
        );
    }

    // contiguous runs of checkpoints with an aggregate
    let mut runs: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new()];
    for (x, v) in &pts {
        match v {
            Some((m, se)) => runs.last_mut().expect("non-empty").push((*x, *m, *se)),
            None if !runs.last().expect("non-empty").is_empty() => runs.push(Vec::new()),
            None => {}
        }
    }
    for run in runs.iter().filter(|r| !r.is_empty()) {
        let mut band = String::new();
        for &(x, m, se) in run {
            let _ = write!(band, "{:.2},{:.2} ", frame.px(x), frame.py(m + se));
        }
        for &(x, m, se) in run.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", frame.px(x), frame.py(m - se));
        }
        let _ = writeln!(
            s,
            r##"<polygon class="se-band" points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##,
            band.trim_end()
        );
        if run.len() == 1 {
            let (x, m, _) = run[0];
            let _ = writeln!(
                s,
                r##"<circle class="mean" cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
                frame.px(x),
                frame.py(m)
            );
        } else {
            let line: Vec<String> = run
                .iter()
                .map(|&(x, m, _)| format!("{:.2},{:.2}", frame.px(x), frame.py(m)))
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline class="mean" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
                line.join(" ")
            );
        }
    }

    // axes
    let (left, right) = (LEFT, WIDTH - RIGHT);
    let _ = writeln!(
        s,
        r#"<path class="axes" d="M{left:.2},{top:.2} L{left:.2},{bottom:.2} L{right:.2},{bottom:.2}" fill="none" stroke="black"/>"#
    );
    let stride = cps.len().div_ceil(MAX_X_LABELS);
    for (i, c) in cps.iter().enumerate() {
        let x = frame.px(c.checkpoint as f64);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, bottom + 5.0);
        if i % stride == 0 || i == cps.len() - 1 {
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                bottom + 18.0,
                c.checkpoint
            );
        }
    }
    for k in 0..=4 {
        let v = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let y = frame.py(v);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + 4.0,
            tick_label(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">checkpoint</text>"#,
        (left + right) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        title(metric)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{} (mean ± SE)</text>"#,
        (left + right) / 2.0,
        title(metric)
    );
    s.push_str("</svg>\n");
    s
}

/// Reward, maximum eigenvalue norm and normalized controllability rank
/// charts. `header` is embedded as a leading XML comment.
pub fn render_plots(
    summary: &RunSummary,
    flags: &[HiddenProgressFlag],
    header: &str,
) -> Result<Vec<PlotFile>, PlotError> {
    if summary.checkpoints.len() < 2 {
        return Err(PlotError::TooFewCheckpoints(summary.checkpoints.len()));
    }
    Ok(Metric::ALL
        .iter()
        .map(|&m| PlotFile {
            name: format!("{}.svg", m.name()),
            svg: render(summary, flags, m, header),
        })
        .collect())
}
