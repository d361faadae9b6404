//! Minimal static SVG line plots.

use std::fmt::Write;

use super::output::{AggregateRow, LyapunovRow};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(s: &mut String, i: usize, label: &str) {
    let y = TOP + 15.0 + 18.0 * i as f64;
    let x = W - RIGHT + 12.0;
    let _ = writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/>"#, x + 20.0, color(i));
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(label));
}

/// Mean ± std loss bands per (gain, lr) for one rule, log-scaled y axis.
pub fn render_curves_svg(aggs: &[AggregateRow], rule: &str) -> String {
    let rows: Vec<&AggregateRow> = aggs.iter().filter(|a| a.rule == rule && a.mean.is_finite() && a.mean > 0.0).collect();
    let mut s = header(&format!("training loss, {rule}"));
    let mut series: Vec<(f64, f64)> = Vec::new();
    for r in &rows {
        if !series.contains(&(r.gain, r.lr)) {
            series.push((r.gain, r.lr));
        }
    }
    if rows.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let x_max = rows.iter().map(|r| r.iteration).max().unwrap_or(0).max(1) as f64;
    let y_hi = rows.iter().map(|r| r.mean + r.std).fold(f64::MIN, f64::max);
    let y_lo = rows.iter().map(|r| r.mean).fold(f64::MAX, f64::min);
    let (ly_lo, ly_hi) = (y_lo.log10().floor(), y_hi.log10().ceil().max(y_lo.log10().floor() + 1.0));
    let px = |x: f64| LEFT + (W - LEFT - RIGHT) * x / x_max;
    let py = |y: f64| {
        let l = y.max(10f64.powf(ly_lo)).log10();
        H - BOTTOM - (H - TOP - BOTTOM) * (l - ly_lo) / (ly_hi - ly_lo)
    };

    for d in (ly_lo as i32)..=(ly_hi as i32) {
        let y = py(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, W - RIGHT);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{}" text-anchor="middle">0</text>"#, H - BOTTOM + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_max}</text>"#, W - RIGHT, H - BOTTOM + 16.0);

    for (i, &(gain, lr)) in series.iter().enumerate() {
        let pts: Vec<&&AggregateRow> = rows.iter().filter(|r| r.gain == gain && r.lr == lr).collect();
        let upper: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", px(r.iteration as f64), py(r.mean + r.std))).collect();
        let lower: Vec<String> =
            pts.iter().rev().map(|r| format!("{:.2},{:.2}", px(r.iteration as f64), py(r.mean - r.std))).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" "),
            color(i)
        );
        let line: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", px(r.iteration as f64), py(r.mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, line.join(" "), color(i));
        legend(&mut s, i, &format!("g={gain} lr={lr}"));
    }
    s.push_str("</svg>\n");
    s
}

/// Leading exponent per seed, grouped by gain, one marker series per (phase, rule).
pub fn render_lyapunov_svg(rows: &[LyapunovRow]) -> String {
    let mut s = header("maximum Lyapunov exponent");
    let finite: Vec<&LyapunovRow> = rows.iter().filter(|r| r.lambdas.first().is_some_and(|l| l.is_finite())).collect();
    let mut gains: Vec<f64> = Vec::new();
    let mut series: Vec<(String, String)> = Vec::new();
    for r in &finite {
        if !gains.contains(&r.gain) {
            gains.push(r.gain);
        }
        let key = (r.phase.clone(), r.rule.clone());
        if !series.contains(&key) {
            series.push(key);
        }
    }
    if finite.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    gains.sort_by(f64::total_cmp);
    let vals = finite.iter().map(|r| r.lambdas[0]);
    let lo = vals.clone().fold(0.0f64, f64::min);
    let hi = vals.fold(0.0f64, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-3);
    let (lo, hi) = (lo - pad, hi + pad);
    let slot = (W - LEFT - RIGHT) / gains.len() as f64;
    let py = |y: f64| H - BOTTOM - (H - TOP - BOTTOM) * (y - lo) / (hi - lo);

    let zero = py(0.0);
    let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#888" stroke-dasharray="4 3"/>"##, W - RIGHT);
    for (y, label) in [(lo, lo), (hi, hi), (0.0, 0.0)] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label:.3}</text>"#, LEFT - 6.0, py(y) + 4.0);
    }
    for (gi, g) in gains.iter().enumerate() {
        let x = LEFT + slot * (gi as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">g={g}</text>"#, H - BOTTOM + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">initial gain</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0);
    for (si, (phase, rule)) in series.iter().enumerate() {
        let offset = slot * 0.7 * ((si as f64 + 0.5) / series.len() as f64 - 0.5);
        for r in finite.iter().filter(|r| &r.phase == phase && &r.rule == rule) {
            let gi = gains.iter().position(|g| *g == r.gain).unwrap_or(0);
            let x = LEFT + slot * (gi as f64 + 0.5) + offset;
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{}"/>"#, py(r.lambdas[0]), color(si));
        }
        legend(&mut s, si, &format!("{rule} {phase}"));
    }
    s.push_str("</svg>\n");
    s
}
