//! Minimal SVG plots: one polyline chart and one bar chart. Coordinates are
//! printed with fixed precision so output is byte-stable.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#, W / 2.0, escape(title)).unwrap();
    s
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str, y_lo: f64, y_hi: f64) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    writeln!(s, r#"<path d="M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}" stroke="black" fill="none"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 14.0, escape(xlabel)).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    )
    .unwrap();
    for (v, y) in [(y_lo, y0), (y_hi, y1)] {
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#, x0 - 4.0, y + 3.0, tick(v)).unwrap();
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let lo = lo.min(0.0);
    if !hi.is_finite() || hi <= lo {
        (lo.min(0.0), lo.max(0.0) + 1.0)
    } else {
        (lo, hi * 1.05)
    }
}

/// Polyline through `points` with markers.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let mut s = header(title);
    let (ylo, yhi) = y_range(points.iter().map(|p| p.1));
    let (xlo, xhi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let xspan = if xhi > xlo { xhi - xlo } else { 1.0 };
    axes(&mut s, xlabel, ylabel, ylo, yhi);
    let px = |x: f64| PAD + (x - xlo) / xspan * (W - 1.5 * PAD);
    let py = |y: f64| (H - PAD) - (y - ylo) / (yhi - ylo) * (H - 2.0 * PAD);
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    writeln!(s, r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#, path.join(" ")).unwrap();
    for &(x, y) in points {
        writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="steelblue"/>"#, px(x), py(y)).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#, px(x), H - PAD + 14.0, tick(x)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// One bar per labelled value, with optional horizontal reference lines.
pub fn bar_chart(title: &str, xlabel: &str, ylabel: &str, bars: &[(String, f64)], refs: &[f64]) -> String {
    let mut s = header(title);
    let (ylo, yhi) = y_range(bars.iter().map(|b| b.1).chain(refs.iter().copied()));
    axes(&mut s, xlabel, ylabel, ylo, yhi);
    let py = |y: f64| (H - PAD) - (y - ylo) / (yhi - ylo) * (H - 2.0 * PAD);
    let slot = (W - 1.5 * PAD) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = PAD + i as f64 * slot + slot * 0.15;
        let (top, base) = (py(v.max(0.0)), py(v.min(0.0)));
        writeln!(s, r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="steelblue"/>"#, slot * 0.7, base - top).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - PAD + 14.0, escape(label)).unwrap();
    }
    for &r in refs {
        writeln!(s, r#"<line x1="{PAD:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="firebrick" stroke-dasharray="4 3"/>"#, W - PAD / 2.0, py(r), py(r)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed_and_stable() {
        let a = line_chart("r", "m", "ratio", &[(1.0, 0.5), (2.0, 1.25), (3.0, 1.75)]);
        assert_eq!(a, line_chart("r", "m", "ratio", &[(1.0, 0.5), (2.0, 1.25), (3.0, 1.75)]));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<circle").count(), 3);
        let b = bar_chart("k < 2", "k", "term", &[("0".into(), 2.0), ("1".into(), -1.0)], &[1.0]);
        assert_eq!(b.matches("<rect").count(), 3);
        assert!(b.contains("k &lt; 2"));
        // degenerate input still yields a drawable range
        assert!(!line_chart("", "", "", &[(0.0, 0.0)]).contains("NaN"));
    }
}
