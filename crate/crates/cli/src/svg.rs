//! Grayscale image grids for input vectors.

use std::fmt::Write as _;

use anyhow::{bail, Result};

const CELL: usize = 8;
const GAP: usize = 16;

/// Side-by-side panels, one per `(title, pixels)`, sharing one gray scale.
pub fn image_grid(panels: &[(&str, &[f64])], width: Option<usize>) -> Result<String> {
    let Some(first) = panels.first() else { bail!("no images to draw") };
    let len = first.1.len();
    let w = match width {
        Some(w) => w,
        None => {
            let s = (len as f64).sqrt().round() as usize;
            if s * s != len {
                bail!("input length {len} is not a square; pass --image-width");
            }
            s
        }
    };
    if w == 0 || len % w != 0 || panels.iter().any(|p| p.1.len() != len) {
        bail!("images must all have length {len} divisible by width {w}");
    }
    let h = len / w;
    let (lo, hi) = panels
        .iter()
        .flat_map(|p| p.1.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };

    let pw = w * CELL;
    let total_w = panels.len() * pw + (panels.len() + 1) * GAP;
    let total_h = h * CELL + 2 * GAP + 12;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}">"#)?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    for (n, (title, px)) in panels.iter().enumerate() {
        let x0 = GAP + n * (pw + GAP);
        writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, x0 + pw / 2, GAP, escape(title))?;
        for (i, v) in px.iter().enumerate() {
            let g = (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8;
            let (r, c) = (i / w, i % w);
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"/>"#,
                x0 + c * CELL,
                GAP + 8 + r * CELL
            )?;
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
