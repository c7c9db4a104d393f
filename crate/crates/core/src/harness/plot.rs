//! Minimal static SVG log-log plots.

use std::fmt::Write;

use crate::fit::Exponent;

const W: f64 = 640.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo.is_finite() {
        let (a, b) = (lo.log10().floor(), hi.log10().ceil());
        Some((a, if b > a { b } else { a + 1.0 }))
    } else {
        None
    }
}

/// Log-log plot of `series`; every exponent adds its fitted line (solid)
/// and a target-slope line through the window midpoint (dashed).
pub fn loglog_svg(title: &str, xlabel: &str, series: &[Series], fits: &[&Exponent]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let xb = bounds(series.iter().flat_map(|c| c.points.iter().map(|p| p.0)));
    let yb = bounds(series.iter().flat_map(|c| c.points.iter().map(|p| p.1)));
    let (Some((x0, x1)), Some((y0, y1))) = (xb, yb) else {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">no positive data</text>"#,
            W / 2.0,
            H / 2.0
        );
        s.push_str("</svg>\n");
        return s;
    };
    let px = |x: f64| PAD + (x.log10() - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y.log10() - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for d in x0 as i32..=x1 as i32 {
        let x = px(10f64.powi(d));
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">1e{d}</text>"#,
            H - PAD + 16.0
        );
    }
    for d in y0 as i32..=y1 as i32 {
        let y = py(10f64.powi(d));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">1e{d}</text>"#,
            PAD - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 16.0,
        escape(xlabel)
    );
    for (k, c) in series.iter().enumerate() {
        let col = COLOURS[k % COLOURS.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0 && p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{col}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 16.0 * (k as f64 + 1.0),
            escape(c.name)
        );
    }
    for (k, f) in fits.iter().enumerate() {
        let (a, b) = f.window;
        let line = |slope: f64, intercept: f64, dash: &str, col: &str| {
            let ya = (intercept + slope * a.ln()).exp();
            let yb = (intercept + slope * b.ln()).exp();
            format!(
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{col}" stroke-width="1"{dash}/>"#,
                px(a),
                py(ya),
                px(b),
                py(yb)
            )
        };
        let _ = writeln!(s, "{}", line(f.slope, f.intercept, "", "black"));
        let mid = 0.5 * (a.ln() + b.ln());
        let c_target = f.intercept + (f.slope - f.target) * mid;
        let _ = writeln!(s, "{}", line(f.target, c_target, r#" stroke-dasharray="6,4""#, "grey"));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}: slope {:.3} (target {:.3}) {}</text>"#,
            PAD + 8.0,
            H - PAD - 8.0 - 16.0 * k as f64,
            escape(&f.name),
            f.slope,
            f.target,
            if f.pass { "pass" } else { "FAIL" }
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
