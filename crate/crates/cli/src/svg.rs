//! Minimal static SVG charts on a fixed 800×500 canvas.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Axes with a `[0, 1]` y range, gridlines every 0.2, and axis labels.
fn unit_axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = y0 - v * (y0 - y1);
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn y_of(v: f64) -> f64 {
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    y0 - v.clamp(0.0, 1.0) * (y0 - y1)
}

/// One bar per label, values in `[0, 1]`, each annotated with its value.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    unit_axes(&mut out, "method", y_label);
    let slot = (WIDTH - LEFT - RIGHT) / bars.len().max(1) as f64;
    let bar_w = slot * 0.6;
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + (slot - bar_w) / 2.0;
        let y = y_of(*value);
        let base = HEIGHT - BOTTOM;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"/>"#,
            base - y,
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + bar_w / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{value:.3}</text>"#,
            y - 6.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            base + 18.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Series of `(x, y)` points with integer-like x values and y in `[0, 1]`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    unit_axes(&mut out, x_label, y_label);
    let x_max = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .fold(1.0f64, f64::max);
    let (x0, x1) = (LEFT + 10.0, WIDTH - RIGHT - 10.0);
    let x_of = |x: f64| x0 + x / x_max * (x1 - x0);
    for tick in 0..=(x_max as usize) {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{tick}</text>"#,
            x_of(tick as f64),
            HEIGHT - BOTTOM + 18.0
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", x_of(*x), y_of(*y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for (x, y) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{y:.2}</text>"#,
                x_of(*x),
                y_of(*y),
                x_of(*x),
                y_of(*y) - 7.0 - 10.0 * i as f64
            );
        }
        let ly = TOP + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - RIGHT - 170.0,
            ly,
            WIDTH - RIGHT - 152.0,
            ly + 10.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar_chart_has_one_bar_and_label_per_value() {
        let svg = bar_chart("acc", "accuracy", &[("kiim".into(), 0.9), ("a<b".into(), 0.25)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(r#"<rect x="#).count(), 2);
        assert!(svg.contains(">0.900<") && svg.contains(">0.250<"));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains(r#"width="800""#) && svg.contains(r#"height="500""#));
    }

    #[test]
    fn line_chart_draws_each_series() {
        let s = vec![
            ("one".to_string(), vec![(0.0, 0.5), (1.0, 0.75)]),
            ("two".to_string(), vec![(0.0, 1.0), (1.0, 1.0)]),
        ];
        let svg = line_chart("ablation", "d", "accuracy", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(!svg.contains("NaN"));
    }
}
