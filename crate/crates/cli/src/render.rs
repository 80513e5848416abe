//! Grayscale strips (binary PGM) and transformation-field drawings (SVG).

use std::fmt::Write;

use lgcompose_core::eval::FieldSample;
use lgcompose_core::Image;

use crate::error::CliError;

/// Gray level of the one-pixel columns between tiles.
const SEPARATOR: u8 = 128;
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Shading {
    /// `[0, 1]` mapped linearly onto `[0, 255]`.
    #[default]
    Linear,
    /// White at or above 0.5, black below.
    Threshold,
}

fn level(v: f64, shading: Shading) -> u8 {
    match shading {
        Shading::Linear => (v.clamp(0.0, 1.0) * 255.0).round() as u8,
        Shading::Threshold => {
            if v >= THRESHOLD {
                255
            } else {
                0
            }
        }
    }
}

/// Tiles `images` left to right with one-pixel separators and encodes the
/// result as binary PGM.
pub fn strip_pgm(images: &[Image], shading: Shading) -> Result<Vec<u8>, CliError> {
    let first = images
        .first()
        .ok_or_else(|| CliError::Input("nothing to render".into()))?;
    let (h, w) = (first.height(), first.width());
    if images.iter().any(|i| i.height() != h || i.width() != w) {
        return Err(CliError::Input("images in a strip must share dimensions".into()));
    }
    let n = images.len();
    let total_w = n * w + (n - 1);
    let mut out = format!("P5\n{total_w} {h}\n255\n").into_bytes();
    for r in 0..h {
        for (k, img) in images.iter().enumerate() {
            if k > 0 {
                out.push(SEPARATOR);
            }
            out.extend((0..w).map(|c| level(img.get(r, c), shading)));
        }
    }
    Ok(out)
}

/// Arrow drawing of a field on `[-1, 1]²` (y pointing down, as in image
/// rows). Arrows are scaled so the longest spans 0.9 grid cells; a field
/// that vanishes everywhere draws none.
pub fn field_svg(samples: &[FieldSample], density: usize, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 20.0;
    let cell = (SIZE - 2.0 * MARGIN) / (density.max(2) - 1) as f64;
    let to_px = |v: f64| MARGIN + (v + 1.0) / 2.0 * (SIZE - 2.0 * MARGIN);
    let max = samples.iter().map(|s| s.vx.hypot(s.vy)).fold(0.0, f64::max);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, "<title>{title}</title>");
    let _ = writeln!(
        svg,
        r##"<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#1f4fbf"/></marker></defs>"##
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{0}" height="{0}" fill="none" stroke="#999"/>"##,
        SIZE - 2.0 * MARGIN
    );
    if max > 0.0 {
        let scale = 0.9 * cell / max;
        for s in samples {
            let (x0, y0) = (to_px(s.x), to_px(s.y));
            let (x1, y1) = (x0 + s.vx * scale, y0 + s.vy * scale);
            if (x1 - x0).hypot(y1 - y0) < 1e-6 {
                continue;
            }
            let _ = writeln!(
                svg,
                r##"<line x1="{x0:.3}" y1="{y0:.3}" x2="{x1:.3}" y2="{y1:.3}" stroke="#1f4fbf" stroke-width="1.5" marker-end="url(#head)"/>"##
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
