//! Minimal SVG plot of A-D curves. Decorative only; the CSVs are canonical.

use std::fmt::Write;

use daindex_core::curve::ADCurve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn curves(title: &str, curves: &[&ADCurve], tau: f64) -> String {
    let ymax = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.d))
        .fold(0.0_f64, f64::max)
        .max(1e-9)
        * 1.05;
    let px = |x: f64| MARGIN + x * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - y / ymax * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="#cccccc" fill-opacity="0.4"/>"##,
        px(tau),
        px(1.0) - px(tau),
        H - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<path d="M{0} {1} H{2} M{0} {1} V{MARGIN}" stroke="black" fill="none"/>"#,
        MARGIN,
        H - MARGIN,
        W - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">allocation score</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}">{ymax:.3}</text>"#, MARGIN - 6.0);
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c
            .interpolated()
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 16.0 * (i as f64 + 1.0),
            escape(&c.group_label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
