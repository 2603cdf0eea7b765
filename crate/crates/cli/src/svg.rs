//! Minimal SVG rendering of a contour grid: the `h̃ = 0` level line
//! (marching squares) plus dashed reference lines.

use std::fmt::Write as _;

use cbf_learn::sim::ContourGrid;

/// A reference line in data coordinates.
pub enum Reference {
    Horizontal(f64),
    Vertical(f64),
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 50.0;

type Segment = ((f64, f64), (f64, f64));

fn lerp(a: f64, b: f64, ha: f64, hb: f64) -> f64 {
    a + (b - a) * ha / (ha - hb)
}

/// Zero-level segments in data coordinates.
pub fn zero_segments(g: &ContourGrid) -> Vec<Segment> {
    let mut segs = Vec::new();
    for j in 0..g.ys.len().saturating_sub(1) {
        for i in 0..g.xs.len().saturating_sub(1) {
            let (x0, x1, y0, y1) = (g.xs[i], g.xs[i + 1], g.ys[j], g.ys[j + 1]);
            // corners counter-clockwise from bottom-left
            let c = [
                (x0, y0, g.values[(j, i)]),
                (x1, y0, g.values[(j, i + 1)]),
                (x1, y1, g.values[(j + 1, i + 1)]),
                (x0, y1, g.values[(j + 1, i)]),
            ];
            let mut pts = Vec::with_capacity(4);
            for k in 0..4 {
                let (ax, ay, ha) = c[k];
                let (bx, by, hb) = c[(k + 1) % 4];
                if (ha >= 0.0) != (hb >= 0.0) {
                    pts.push((lerp(ax, bx, ha, hb), lerp(ay, by, ha, hb)));
                }
            }
            match pts.len() {
                2 => segs.push((pts[0], pts[1])),
                4 => {
                    let centre = c.iter().map(|v| v.2).sum::<f64>() / 4.0;
                    if (centre >= 0.0) == (c[0].2 >= 0.0) {
                        segs.push((pts[0], pts[3]));
                        segs.push((pts[1], pts[2]));
                    } else {
                        segs.push((pts[0], pts[1]));
                        segs.push((pts[2], pts[3]));
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

pub fn render(g: &ContourGrid, references: &[Reference], title: &str) -> String {
    let span = |v: &[f64]| {
        let lo = v.first().copied().unwrap_or(0.0);
        let hi = v.last().copied().unwrap_or(1.0);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (xl, xh) = span(&g.xs);
    let (yl, yh) = span(&g.ys);
    let px = |x: f64| PAD + (x - xl) / (xh - xl) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - yl) / (yh - yl) * (H - 2.0 * PAD);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{title}</text>"#,
        W / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        W / 2.0,
        H - 12.0,
        g.x_name
    )
    .unwrap();
    writeln!(s, r#"<text x="14" y="{}" font-size="12">{}</text>"#, H / 2.0, g.y_name).unwrap();
    for (v, anchor) in [(xl, "start"), (xh, "end")] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="10">{v}</text>"#,
            px(v),
            H - PAD + 14.0
        )
        .unwrap();
    }
    for v in [yl, yh] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{v}</text>"#,
            PAD - 4.0,
            py(v) + 4.0
        )
        .unwrap();
    }
    for r in references {
        let (x1, y1, x2, y2) = match *r {
            Reference::Horizontal(y) if (yl..=yh).contains(&y) => (px(xl), py(y), px(xh), py(y)),
            Reference::Vertical(x) if (xl..=xh).contains(&x) => (px(x), py(yl), px(x), py(yh)),
            _ => continue,
        };
        writeln!(
            s,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="gray" stroke-dasharray="6 4"/>"#
        )
        .unwrap();
    }
    if !zero_segments(g).is_empty() {
        write!(s, r#"<path fill="none" stroke="crimson" stroke-width="2" d=""#).unwrap();
        for ((ax, ay), (bx, by)) in zero_segments(g) {
            write!(s, "M{:.2} {:.2}L{:.2} {:.2}", px(ax), py(ay), px(bx), py(by)).unwrap();
        }
        writeln!(s, r#""/>"#).unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbf_learn::cbf::{HandcraftedCbf, LearnedCbf};
    use cbf_learn::sim::{evaluate_contour, GridSpec};

    fn hand_grid(nx: usize, ny: usize) -> ContourGrid {
        let cbf = LearnedCbf::hand_only(HandcraftedCbf::IntegratorVelocity { cap: 2.0 });
        evaluate_contour(&cbf, &["x", "xdot"], &GridSpec::integrator_default(nx, ny)).unwrap()
    }

    #[test]
    fn hand_only_zero_line_is_flat_at_two() {
        let segs = zero_segments(&hand_grid(16, 9));
        assert_eq!(segs.len(), 15);
        for ((_, ay), (_, by)) in segs {
            assert!((ay - 2.0).abs() < 1e-12 && (by - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_grid_renders() {
        let svg = render(&hand_grid(1, 1), &[Reference::Horizontal(3.0)], "h");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("<path"));
    }
}
