//! Heat maps as plain SVG rect grids.

use std::fmt::Write;

use physdiff::Motion;

const CELL: f64 = 12.0;
const MARGIN: f64 = 40.0;
const LOW: [f64; 3] = [255.0, 255.0, 255.0];
const HIGH: [f64; 3] = [178.0, 24.0, 43.0];

/// Linear ramp from white at 0 to dark red at 1; values are clamped.
pub fn ramp(v: f64) -> String {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let c: Vec<u8> = (0..3).map(|k| (LOW[k] + (HIGH[k] - LOW[k]) * v).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Frames along x, joints along y.
pub fn heat_map(map: &Motion) -> String {
    let (frames, joints) = map.shape();
    let width = MARGIN + CELL * frames as f64 + 10.0;
    let height = MARGIN + CELL * joints as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="14" font-family="sans-serif" font-size="11">frame</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">joint</text>"#,
        MARGIN + 10.0
    );
    for t in 0..frames {
        for k in 0..joints {
            let v = map.get(t, k);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>frame {t}, joint {k}: {v:.4}</title></rect>"#,
                MARGIN + CELL * t as f64,
                MARGIN - 10.0 + CELL * k as f64,
                ramp(v)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
