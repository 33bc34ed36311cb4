//! Static SVG charts: equity curve with its log-growth fit, and a
//! correlation heat map. Output is deterministic for identical inputs.

use std::fmt::Write as _;

use lobforge::metrics::{CorrelationMatrix, LogGrowthFit};

const W: f64 = 720.0;
const H: f64 = 360.0;
const M: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64, title: &str, provenance: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<metadata>{}</metadata>", escape(provenance));
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
}

fn polyline(points: &[(f64, f64)], stroke: &str, dash: bool) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5"{} points="{}"/>"#,
        if dash { r#" stroke-dasharray="6 4""# } else { "" },
        pts.join(" ")
    )
}

/// Equity against step index, with `bias + velocity·ln(t)` overlaid.
pub fn equity_svg(equity: &[f64], fit: Option<&LogGrowthFit>, title: &str, provenance: &str) -> String {
    let mut out = String::new();
    header(&mut out, W, H, title, provenance);
    let n = equity.len().max(2);
    let fitted: Vec<f64> = match fit {
        Some(f) => (1..=equity.len()).map(|t| f.eval(t as f64)).collect(),
        None => Vec::new(),
    };
    let (mut lo, mut hi) = equity.iter().chain(&fitted).fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |i: usize| M + (W - 2.0 * M) * i as f64 / (n - 1) as f64;
    let y = |v: f64| H - M - (H - 2.0 * M) * (v - lo) / (hi - lo);
    let _ = writeln!(out, r#"<line x1="{M}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, H - M, W - M);
    let _ = writeln!(out, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, M - 4.0, y(v) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, W / 2.0, H - 12.0);
    let pts: Vec<(f64, f64)> = equity.iter().enumerate().map(|(i, &v)| (x(i), y(v))).collect();
    let _ = writeln!(out, "{}", polyline(&pts, "#1f5fa8", false));
    if let Some(f) = fit {
        let pts: Vec<(f64, f64)> = fitted.iter().enumerate().map(|(i, &v)| (x(i), y(v))).collect();
        let _ = writeln!(out, "{}", polyline(&pts, "#c0392b", true));
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{}" fill="#c0392b">bias {:.2}, velocity {:.2} bps</text>"##,
            M + 8.0,
            M + 4.0,
            f.bias,
            f.velocity_bps
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Diverging blue-white-red colour for `r` in [-1, 1].
fn colour(r: f64) -> String {
    let r = r.clamp(-1.0, 1.0);
    let (a, b) = if r >= 0.0 { ((192, 57, 43), r) } else { ((31, 95, 168), -r) };
    let mix = |c: i32| (255.0 + (c as f64 - 255.0) * b).round() as i32;
    format!("rgb({},{},{})", mix(a.0), mix(a.1), mix(a.2))
}

pub fn heatmap_svg(m: &CorrelationMatrix, title: &str, provenance: &str) -> String {
    let k = m.labels.len();
    let cell = 56.0;
    let left = 110.0;
    let top = 40.0;
    let w = left + cell * k as f64 + 20.0;
    let h = top + cell * k as f64 + 90.0;
    let mut out = String::new();
    header(&mut out, w, h, title, provenance);
    for (i, row) in m.values.iter().enumerate() {
        let yy = top + cell * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            yy + cell / 2.0 + 4.0,
            escape(&m.labels[i])
        );
        for (j, &r) in row.iter().enumerate() {
            let xx = left + cell * j as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{xx:.1}" y="{yy:.1}" width="{cell}" height="{cell}" fill="{}" stroke="white"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{r:.2}</text>"#,
                colour(r),
                xx + cell / 2.0,
                yy + cell / 2.0 + 4.0
            );
        }
    }
    for (j, label) in m.labels.iter().enumerate() {
        let xx = left + cell * j as f64 + cell / 2.0;
        let yy = top + cell * k as f64 + 12.0;
        let _ = writeln!(
            out,
            r#"<text x="{xx:.1}" y="{yy:.1}" text-anchor="end" transform="rotate(-45 {xx:.1} {yy:.1})">{}</text>"#,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_endpoints() {
        assert_eq!(colour(0.0), "rgb(255,255,255)");
        assert_eq!(colour(1.0), "rgb(192,57,43)");
        assert_eq!(colour(-1.0), "rgb(31,95,168)");
    }

    #[test]
    fn equity_chart_is_well_formed() {
        let fit = LogGrowthFit { bias: 100.0, velocity: 0.5, velocity_bps: 5000.0 };
        let svg = equity_svg(&[100.0, 100.2, 100.5, 100.6], Some(&fit), "pnl <test>", "{}");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("pnl &lt;test&gt;"));
        // flat curves must not divide by zero
        assert!(!equity_svg(&[1.0, 1.0], None, "", "").contains("NaN"));
    }
}
