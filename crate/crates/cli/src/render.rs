//! Side-by-side comparison strips with a captioned footer.

use glpge::imageio::{ImageBuffer, ResizeMethod};
use glpge::Result;

pub const GUTTER: usize = 8;
const SCALE: usize = 2;
pub const FOOTER: usize = 7 * SCALE + 2 * GUTTER;
const BACKGROUND: f32 = 0.15;
const INK: f32 = 1.0;

/// Panels are scaled to the first panel's height and laid out left to
/// right with gutters on every side; `caption` is drawn in the footer.
pub fn report_render(panels: &[&ImageBuffer], caption: &str) -> Result<ImageBuffer> {
    let Some(first) = panels.first() else {
        return Ok(ImageBuffer::filled(FOOTER, 2 * GUTTER, 3, BACKGROUND));
    };
    let h = first.height();
    let scaled: Vec<ImageBuffer> = panels
        .iter()
        .map(|p| {
            let p = p.to_rgb();
            if p.height() == h {
                Ok(p)
            } else {
                let w = ((p.width() * h) as f64 / p.height() as f64).round().max(1.0) as usize;
                p.resize(h, w, ResizeMethod::Bilinear)
            }
        })
        .collect::<Result<_>>()?;
    let width = scaled.iter().map(|p| p.width()).sum::<usize>() + GUTTER * (scaled.len() + 1);
    let height = h + 2 * GUTTER + FOOTER - GUTTER;
    let mut out = ImageBuffer::filled(height, width, 3, BACKGROUND);
    let mut x0 = GUTTER;
    for p in &scaled {
        for y in 0..p.height() {
            for x in 0..p.width() {
                for c in 0..3 {
                    out.set(GUTTER + y, x0 + x, c, p.get(y, x, c));
                }
            }
        }
        x0 += p.width() + GUTTER;
    }
    draw_text(&mut out, GUTTER, h + 2 * GUTTER, caption);
    Ok(out)
}

fn draw_text(img: &mut ImageBuffer, x0: usize, y0: usize, text: &str) {
    let advance = 6 * SCALE;
    for (i, ch) in text.chars().enumerate() {
        let cx = x0 + i * advance;
        if cx + 5 * SCALE > img.width() - GUTTER.min(img.width()) {
            break;
        }
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..5 {
                if bits & (0x10 >> col) == 0 {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let (y, x) = (y0 + row * SCALE + dy, cx + col * SCALE + dx);
                        if y < img.height() {
                            for c in 0..3 {
                                img.set(y, x, c, INK);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 5×7 bitmap rows, most significant of the low five bits leftmost.
fn glyph(ch: char) -> [u8; 7] {
    match ch.to_ascii_uppercase() {
        ' ' => [0; 7],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ',' => [0, 0, 0, 0, 0x0C, 0x04, 0x08],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '+' => [0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0],
        '/' => [0, 0x01, 0x02, 0x04, 0x08, 0x10, 0],
        '=' => [0, 0, 0x1F, 0, 0x1F, 0, 0],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(v: f32) -> ImageBuffer {
        ImageBuffer::filled(128, 128, 3, v)
    }

    #[test]
    fn strip_layout() {
        let (a, b, c) = (panel(0.1), panel(0.5), panel(0.9));
        let s = report_render(&[&a, &b, &c], "SSIM 0.9").unwrap();
        assert_eq!(s.width(), 3 * 128 + 4 * GUTTER);
        assert_eq!(s.height(), 128 + GUTTER + FOOTER);
        assert_eq!(s.get(GUTTER, GUTTER + 128 + GUTTER, 0), 0.5);
        let two = report_render(&[&a, &b], "").unwrap();
        assert_eq!(two.width(), 2 * 128 + 3 * GUTTER);
    }

    #[test]
    fn panels_are_scaled_to_common_height() {
        let a = panel(0.2);
        let b = ImageBuffer::filled(64, 32, 1, 0.7);
        let s = report_render(&[&a, &b], "x").unwrap();
        assert_eq!(s.width(), 128 + 64 + 3 * GUTTER);
    }

    #[test]
    fn caption_is_drawn_deterministically() {
        let a = panel(0.0);
        let s1 = report_render(&[&a], "PSNR 12.5").unwrap();
        let s2 = report_render(&[&a], "PSNR 12.5").unwrap();
        assert_eq!(s1, s2);
        let blank = report_render(&[&a], "").unwrap();
        assert_ne!(s1, blank);
    }
}
