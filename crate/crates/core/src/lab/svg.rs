use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SummaryRow;
use crate::error::{DroError, Result};
use crate::solve::Method;

/// Smallest value drawn on the log axis; smaller ones (including exact zeros) sit on it.
pub const LOG_FLOOR: f64 = 1e-20;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 640.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 420.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XAxis {
    /// Sample size; DRO methods at their oracle-tuned radius.
    N,
    /// Ball radius at a fixed sample size; ERM drawn flat.
    Eta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    pub x: XAxis,
    /// Plot medians instead of means.
    pub median: bool,
    /// Sample size for the radius plot; the largest available when unset.
    pub fixed_n: Option<usize>,
    pub title: Option<String>,
}

impl Axes {
    pub fn new(x: XAxis) -> Self {
        Self { x, median: false, fixed_n: None, title: None }
    }
}

fn color(m: Method) -> &'static str {
    match m {
        Method::Erm => "#d62728",
        Method::MmdDro => "#1f77b4",
        Method::W1Dro => "#2ca02c",
        Method::Chi2Dro => "#9467bd",
    }
}

fn fmt_x(x: f64, axis: XAxis) -> String {
    match axis {
        XAxis::N => format!("{}", x.round() as i64),
        XAxis::Eta => format!("{x}"),
    }
}

/// Line chart of excess risk on a log scale, one polyline per method.
pub fn render_lines(summary: &[SummaryRow], axes: &Axes) -> Result<String> {
    if summary.is_empty() {
        return Err(DroError::Validation("nothing to plot".into()));
    }
    let stat = |r: &SummaryRow| if axes.median { r.median } else { r.mean };
    let mut methods: Vec<Method> = summary.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();

    let mut dropped = 0usize;
    let mut floored = 0usize;
    let mut series: Vec<(Method, Vec<(f64, f64)>)> = Vec::new();
    let fixed_n = axes.fixed_n.unwrap_or_else(|| summary.iter().map(|r| r.n).max().expect("nonempty"));
    let dro_etas: Vec<f64> = summary.iter().filter(|r| r.method != Method::Erm && r.n == fixed_n).map(|r| r.eta).collect();
    let eta_span = dro_etas.iter().fold(None, |acc: Option<(f64, f64)>, &e| {
        Some(acc.map_or((e, e), |(lo, hi)| (lo.min(e), hi.max(e))))
    });
    for &m in &methods {
        let mut raw: Vec<(f64, f64)> = Vec::new();
        match axes.x {
            XAxis::N => {
                for r in summary.iter().filter(|r| r.method == m && (m == Method::Erm || r.best_eta)) {
                    raw.push((r.n as f64, stat(r)));
                }
            }
            XAxis::Eta => {
                for r in summary.iter().filter(|r| r.method == m && r.n == fixed_n) {
                    if m == Method::Erm {
                        match eta_span {
                            Some((lo, hi)) => {
                                raw.push((lo, stat(r)));
                                if hi > lo {
                                    raw.push((hi, stat(r)));
                                }
                            }
                            None => raw.push((r.eta, stat(r))),
                        }
                    } else {
                        raw.push((r.eta, stat(r)));
                    }
                }
            }
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pts = Vec::new();
        for (x, y) in raw {
            if !x.is_finite() || !y.is_finite() {
                dropped += 1;
                continue;
            }
            if y < LOG_FLOOR {
                floored += 1;
            }
            pts.push((x, y.max(LOG_FLOOR).log10()));
        }
        series.push((m, pts));
    }

    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x_lo, mut x_hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y_lo, mut y_hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if all.is_empty() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_hi <= x_lo {
        let pad = if x_lo == 0.0 { 1.0 } else { 0.1 * x_lo.abs() };
        x_lo -= pad;
        x_hi += pad;
    }
    y_lo = y_lo.floor();
    y_hi = y_hi.ceil();
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (RIGHT - LEFT);
    let py = |y: f64| BOTTOM - (y - y_lo) / (y_hi - y_lo) * (BOTTOM - TOP);

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let stat_name = if axes.median { "median" } else { "mean" };
    let title = axes.title.clone().unwrap_or_else(|| match axes.x {
        XAxis::N => format!("Excess risk vs n ({stat_name}; DRO at oracle-tuned radius)"),
        XAxis::Eta => format!("Excess risk vs radius at n = {fixed_n} ({stat_name})"),
    });
    let _ = writeln!(w, r#"<text x="{:.2}" y="25" text-anchor="middle" font-size="15">{}</text>"#, (LEFT + RIGHT) / 2.0, escape(&title));
    let _ = writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, RIGHT - LEFT, BOTTOM - TOP);

    let decades = (y_hi - y_lo) as i64;
    let step = ((decades as f64) / 12.0).ceil().max(1.0) as i64;
    let mut k = y_lo as i64;
    while k <= y_hi as i64 {
        let y = py(k as f64);
        let _ = writeln!(w, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{k}</text>"#, LEFT - 6.0, y + 4.0);
        k += step;
    }
    let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for &x in &xs {
        let xp = px(x);
        let _ = writeln!(w, r#"<line x1="{xp:.2}" y1="{BOTTOM}" x2="{xp:.2}" y2="{:.2}" stroke="black"/>"#, BOTTOM + 5.0);
        let _ = writeln!(w, r#"<text x="{xp:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, BOTTOM + 18.0, fmt_x(x, axes.x));
    }
    let x_label = match axes.x {
        XAxis::N => "sample size n",
        XAxis::Eta => "ball radius eta",
    };
    let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#, (LEFT + RIGHT) / 2.0, BOTTOM + 40.0);
    let _ = writeln!(
        w,
        r#"<text x="25" y="{:.2}" text-anchor="middle" transform="rotate(-90 25 {:.2})">{stat_name} excess risk (log scale)</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    );

    for (i, (m, pts)) in series.iter().enumerate() {
        let c = color(*m);
        if pts.len() >= 2 {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(w, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        }
        for &(x, y) in pts {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{c}"/>"#, px(x), py(y));
        }
        let ly = TOP + 20.0 + 22.0 * i as f64;
        let _ = writeln!(w, r#"<line x1="660" y1="{ly:.2}" x2="690" y2="{ly:.2}" stroke="{c}" stroke-width="2"/>"#);
        let _ = writeln!(w, r#"<text x="698" y="{:.2}">{}</text>"#, ly + 4.0, m.as_str());
    }
    let mut foot = Vec::new();
    if dropped > 0 {
        foot.push(format!("{dropped} non-finite value(s) dropped"));
    }
    if floored > 0 {
        foot.push(format!("{floored} value(s) below 1e-20 drawn at 1e-20"));
    }
    if !foot.is_empty() {
        let _ = writeln!(w, r#"<text x="{LEFT}" y="{:.2}" font-size="11">{}</text>"#, HEIGHT - 12.0, foot.join("; "));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
