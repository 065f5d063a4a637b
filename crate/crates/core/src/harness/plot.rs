//! Native SVG regret plots: one mean line per series with a translucent
//! min-max band, axes, and a legend. No plotting dependency, so the artifact
//! stays a single binary.

use std::io::Write;

use crate::{Error, Result};

/// One plotted series: per-round mean with min/max envelope.
#[derive(Debug, Clone)]
pub struct SeriesCurve {
    pub label: String,
    pub rounds: Vec<usize>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Renders the curves as a standalone SVG line chart (x: round, y: cumulative
/// regret). Fails on empty input.
pub fn render_plot(curves: &[SeriesCurve], out: &mut impl Write) -> Result<()> {
    if curves.is_empty() || curves.iter().all(|c| c.rounds.is_empty()) {
        return Err(Error::invalid("curves", "nothing to plot"));
    }
    for curve in curves {
        let n = curve.rounds.len();
        if curve.mean.len() != n || curve.min.len() != n || curve.max.len() != n {
            return Err(Error::invalid("curves", "ragged series lengths"));
        }
    }

    let x_max = curves
        .iter()
        .flat_map(|c| c.rounds.iter().copied())
        .max()
        .unwrap_or(1) as f64;
    let x_min = 1.0;
    let mut y_min = 0.0f64;
    let mut y_max = f64::NEG_INFINITY;
    for curve in curves {
        for i in 0..curve.rounds.len() {
            y_min = y_min.min(curve.min[i]);
            y_max = y_max.max(curve.max[i]);
        }
    }
    if !y_max.is_finite() {
        y_max = 1.0;
    }
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = move |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min).max(1e-12) * plot_w;
    let sy = move |y: f64| MARGIN_TOP + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"<text x="{}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">Cumulative regret (mean, min-max band)</text>"#,
        MARGIN_LEFT + plot_w / 2.0
    )?;

    // Axes with ticks.
    writeln!(
        out,
        r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>
<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#,
        x0 = MARGIN_LEFT,
        x1 = MARGIN_LEFT + plot_w,
        y0 = MARGIN_TOP,
        y1 = MARGIN_TOP + plot_h
    )?;
    for tick in nice_ticks(x_min, x_max) {
        let x = sx(tick);
        writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{x}" y2="{y2}" stroke="black"/>
<text x="{x}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="middle">{tick}</text>"#,
            y = MARGIN_TOP + plot_h,
            y2 = MARGIN_TOP + plot_h + 5.0,
            ty = MARGIN_TOP + plot_h + 18.0,
        )?;
    }
    for tick in nice_ticks(y_min, y_max) {
        let y = sy(tick);
        writeln!(
            out,
            r#"<line x1="{x2}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/>
<text x="{tx}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="end">{tick}</text>"#,
            x = MARGIN_LEFT,
            x2 = MARGIN_LEFT - 5.0,
            tx = MARGIN_LEFT - 8.0,
            ty = y + 4.0,
        )?;
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">round</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    )?;
    writeln!(
        out,
        r#"<text x="18" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">cumulative regret</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    )?;

    for (idx, curve) in curves.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if curve.rounds.is_empty() {
            continue;
        }

        // Min-max band: min curve forward, max curve backward.
        let mut band = String::new();
        for i in 0..curve.rounds.len() {
            band.push_str(&format!("{:.2},{:.2} ", sx(curve.rounds[i] as f64), sy(curve.min[i])));
        }
        for i in (0..curve.rounds.len()).rev() {
            band.push_str(&format!("{:.2},{:.2} ", sx(curve.rounds[i] as f64), sy(curve.max[i])));
        }
        writeln!(
            out,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            band.trim_end()
        )?;

        let mean_points: String = curve
            .rounds
            .iter()
            .zip(&curve.mean)
            .map(|(r, m)| format!("{:.2},{:.2}", sx(*r as f64), sy(*m)))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            out,
            r#"<polyline points="{mean_points}" fill="none" stroke="{color}" stroke-width="1.8"/>"#
        )?;

        // Legend entry.
        let ly = MARGIN_TOP + 14.0 + idx as f64 * 20.0;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>
<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape_xml(&curve.label)
        )?;
    }

    writeln!(out, "</svg>")?;
    Ok(())
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tick positions at a 1/2/5 step covering [lo, hi].
fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw_step = span / 6.0;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let mut ticks = Vec::new();
    let mut tick = (lo / step).ceil() * step;
    while tick <= hi + 1e-9 * span {
        // Avoid "-0".
        ticks.push(if tick == 0.0 { 0.0 } else { tick });
        tick += step;
    }
    ticks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_curve(label: &str, value: f64, n: usize) -> SeriesCurve {
        SeriesCurve {
            label: label.to_string(),
            rounds: (1..=n).collect(),
            mean: vec![value; n],
            min: vec![value; n],
            max: vec![value; n],
        }
    }

    #[test]
    fn renders_flat_zero_curve() {
        let mut svg = Vec::new();
        render_plot(&[flat_curve("zero", 0.0, 10)], &mut svg).unwrap();
        let text = String::from_utf8(svg).unwrap();
        assert!(text.starts_with("<?xml"));
        assert!(text.contains("<svg"));
        assert!(text.contains("polyline"));
        assert!(text.ends_with("</svg>\n"));
    }

    #[test]
    fn legend_has_one_entry_per_series() {
        let mut svg = Vec::new();
        render_plot(
            &[flat_curve("plain", 1.0, 5), flat_curve("preconditioned", 2.0, 5)],
            &mut svg,
        )
        .unwrap();
        let text = String::from_utf8(svg).unwrap();
        assert!(text.contains(">plain</text>"));
        assert!(text.contains(">preconditioned</text>"));
    }

    #[test]
    fn empty_input_is_an_error() {
        let mut svg = Vec::new();
        assert!(render_plot(&[], &mut svg).is_err());
    }

    #[test]
    fn ticks_cover_the_range() {
        let ticks = nice_ticks(0.0, 150.0);
        assert!(ticks.len() >= 4);
        assert!(ticks.iter().all(|t| (0.0..=150.0).contains(t)));
    }
}
