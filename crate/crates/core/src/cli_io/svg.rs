//! Minimal dependency-free SVG line plots.

use std::fmt::Write;

use crate::causal::CausalAnalysis;
use crate::error::{Error, Result};
use crate::eval::RocCurve;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Shaded region between `lo` and `hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesBundle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub palette: Vec<&'static str>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 400.0,
            margin: 50.0,
            palette: vec!["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"],
        }
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    style: PlotStyle,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let s = &self.style;
        s.margin + (x - self.x0) / (self.x1 - self.x0) * (s.width - 2.0 * s.margin)
    }

    fn py(&self, y: f64) -> f64 {
        let s = &self.style;
        s.height - s.margin - (y - self.y0) / (self.y1 - self.y0) * (s.height - 2.0 * s.margin)
    }

    fn points(&self, x: &[f64], y: &[f64]) -> String {
        let mut out = String::new();
        for (a, b) in x.iter().zip(y).filter(|(a, b)| a.is_finite() && b.is_finite()) {
            let _ = write!(out, "{:.2},{:.2} ", self.px(*a), self.py(*b));
        }
        out.trim_end().to_string()
    }
}

fn extent<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn plot_svg(bundle: &SeriesBundle, style: &PlotStyle) -> Result<String> {
    for s in &bundle.series {
        if s.x.len() != s.y.len() {
            return Err(Error::Dimension(format!("series `{}` has mismatched lengths", s.label)));
        }
    }
    for b in &bundle.bands {
        if b.x.len() != b.lo.len() || b.x.len() != b.hi.len() {
            return Err(Error::Dimension(format!("band `{}` has mismatched lengths", b.label)));
        }
    }
    let xs = bundle.series.iter().flat_map(|s| &s.x).chain(bundle.bands.iter().flat_map(|b| &b.x));
    let ys = bundle
        .series
        .iter()
        .flat_map(|s| &s.y)
        .chain(bundle.bands.iter().flat_map(|b| b.lo.iter().chain(&b.hi)));
    let (x0, x1) = extent(xs).ok_or_else(|| Error::InvalidArgument("nothing finite to plot".into()))?;
    let (y0, y1) = extent(ys).ok_or_else(|| Error::InvalidArgument("nothing finite to plot".into()))?;
    let f = Frame {
        x0,
        x1,
        y0,
        y1,
        style: style.clone(),
    };
    let (w, h, m) = (style.width, style.height, style.margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, m / 2.0, escape(&bundle.title));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(&bundle.x_label));
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(&bundle.y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "start", m, h - m + 15.0),
        (x1, "end", w - m, h - m + 15.0),
        (y0, "end", m - 4.0, h - m),
        (y1, "end", m - 4.0, m + 10.0),
    ] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3e}</text>"#);
    }
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            svg,
            r#"<line x1="{m}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            f.py(0.0),
            w - m
        );
    }

    let colour = |i: usize| style.palette[i % style.palette.len()];
    for (i, b) in bundle.bands.iter().enumerate() {
        let upper = f.points(&b.x, &b.hi);
        let lower: Vec<f64> = b.x.iter().rev().copied().collect();
        let lo_rev: Vec<f64> = b.lo.iter().rev().copied().collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="band" points="{upper} {}" fill="{}" fill-opacity="0.2" stroke="none"><title>{}</title></polygon>"#,
            f.points(&lower, &lo_rev),
            colour(i),
            escape(&b.label)
        );
    }
    for (i, s) in bundle.series.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<polyline class="series" points="{}" fill="none" stroke="{}" stroke-width="1.5"><title>{}</title></polyline>"#,
            f.points(&s.x, &s.y),
            colour(i),
            escape(&s.label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            w - m - 120.0,
            m + 16.0 * (i as f64 + 1.0),
            colour(i),
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Delta against shift, with the ensemble min/max band when present.
pub fn causal_svg(analysis: &CausalAnalysis, title: &str) -> Result<String> {
    let x: Vec<f64> = analysis.shifts.iter().map(|&s| s as f64).collect();
    let mut bundle = SeriesBundle {
        title: title.into(),
        x_label: "shift".into(),
        y_label: "delta".into(),
        series: vec![Series {
            label: "delta".into(),
            x: x.clone(),
            y: analysis.delta.clone(),
        }],
        bands: vec![],
    };
    if let Some((lo, hi)) = analysis.band() {
        bundle.bands.push(Band {
            label: "ensemble range".into(),
            x,
            lo,
            hi,
        });
    }
    plot_svg(&bundle, &PlotStyle::default())
}

pub fn roc_svg(curve: &RocCurve, title: &str) -> Result<String> {
    let bundle = SeriesBundle {
        title: format!("{title} (AUROC {:.3})", curve.auroc),
        x_label: "false positive rate".into(),
        y_label: "true positive rate".into(),
        series: vec![
            Series {
                label: "ROC".into(),
                x: curve.fpr.clone(),
                y: curve.tpr.clone(),
            },
            Series {
                label: "chance".into(),
                x: vec![0.0, 1.0],
                y: vec![0.0, 1.0],
            },
        ],
        bands: vec![],
    };
    plot_svg(&bundle, &PlotStyle::default())
}
