//! Minimal line-plot SVG for ROC and PR curves.

use std::fmt::Write as _;

const W: f64 = 420.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;

fn sx(x: f64) -> f64 {
    PAD + x.clamp(0.0, 1.0) * (W - 2.0 * PAD)
}

fn sy(y: f64) -> f64 {
    H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD)
}

/// Renders points in the unit square. `reference` draws a dashed baseline
/// between its two endpoints.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    reference: Option<((f64, f64), (f64, f64))>,
    step: bool,
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, sx(v), H - PAD + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, PAD - 6.0, sy(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, PAD - 16.0, escape(title));
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    if let Some(((x0, y0), (x1, y1))) = reference {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
            sx(x0),
            sy(y0),
            sx(x1),
            sy(y1)
        );
    }
    let mut path = String::new();
    let mut prev: Option<(f64, f64)> = None;
    for &(x, y) in points {
        match prev {
            None => {
                let _ = write!(path, "M{:.2},{:.2}", sx(x), sy(y));
            }
            Some((_, py)) if step => {
                let _ = write!(path, " L{:.2},{:.2} L{:.2},{:.2}", sx(x), sy(py), sx(x), sy(y));
            }
            Some(_) => {
                let _ = write!(path, " L{:.2},{:.2}", sx(x), sy(y));
            }
        }
        prev = Some((x, y));
    }
    let _ = writeln!(s, r##"<path d="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##);
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_points() {
        let svg = line_plot("ROC <x>", "FPR", "TPR", &[(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)], Some(((0.0, 0.0), (1.0, 1.0))), false);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("M50.00,370.00 L210.00,50.00 L370.00,50.00"));
        assert!(svg.contains("ROC &lt;x&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
