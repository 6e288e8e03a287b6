use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::imageio::ImageBuffer;

pub const MIN_SIDE: usize = 64;

struct Canvas {
    img: ImageBuffer,
}

impl Canvas {
    fn fill_rect(&mut self, y0: usize, x0: usize, h: usize, w: usize, color: [f32; 3]) {
        let (ih, iw) = (self.img.height(), self.img.width());
        for y in y0.min(ih)..(y0 + h).min(ih) {
            for x in x0.min(iw)..(x0 + w).min(iw) {
                for (c, v) in color.iter().enumerate() {
                    self.img.set(y, x, c, *v);
                }
            }
        }
    }
}

/// Clean synthetic page: off-white paper, lines of glyph-like strokes,
/// occasional heading bars and a colored accent block.
pub fn render_document(seed: u64, h: usize, w: usize) -> Result<ImageBuffer> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(arg_err!("documents need extents of at least {MIN_SIDE}, got {h}×{w}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f32 = rng.gen_range(0.93..0.98);
    let paper: [f32; 3] = std::array::from_fn(|_| (base + rng.gen_range(-0.02..0.02f32)).min(1.0));
    let ink_level: f32 = rng.gen_range(0.04..0.2);
    let blue_ink = rng.gen_bool(0.3);
    let ink = [
        ink_level,
        ink_level,
        if blue_ink { ink_level + 0.25 } else { ink_level },
    ];
    let mut canvas = Canvas {
        img: ImageBuffer::new(h, w, 3, paper.iter().copied().cycle().take(h * w * 3).collect())?,
    };

    let scale = (h.min(w) as f64 / 128.0).max(1.0);
    let px = |v: f64| ((v * scale).round() as usize).max(1);
    let margin_x = (w as f64 * rng.gen_range(0.06..0.1)) as usize;
    let margin_y = (h as f64 * rng.gen_range(0.06..0.1)) as usize;
    let text_w = w - 2 * margin_x;

    if rng.gen_bool(0.7) {
        let bw = (text_w as f64 * rng.gen_range(0.1..0.25)) as usize;
        let bh = (h as f64 * rng.gen_range(0.05..0.12)) as usize;
        let y0 = rng.gen_range(margin_y..h - margin_y - bh);
        let x0 = rng.gen_range(margin_x..w - margin_x - bw);
        let hue = rng.gen_range(0..3);
        let mut color = [rng.gen_range(0.55..0.8f32); 3];
        color[hue] = rng.gen_range(0.2..0.45);
        canvas.fill_rect(y0, x0, bh, bw, color);
    }

    let glyph_h = px(rng.gen_range(3.0..5.0));
    let leading = glyph_h + px(rng.gen_range(3.0..6.0));
    let mut y = margin_y;
    while y + 2 * glyph_h < h - margin_y {
        if rng.gen_bool(0.12) {
            let bar_h = glyph_h + glyph_h / 2;
            let bar_w = (text_w as f64 * rng.gen_range(0.3..0.6)) as usize;
            canvas.fill_rect(y, margin_x, bar_h, bar_w, ink);
            y += bar_h + leading;
            continue;
        }
        let indent = if rng.gen_bool(0.2) { px(6.0) } else { 0 };
        let line_end = w - margin_x - (text_w as f64 * rng.gen_range(0.0..0.3)) as usize;
        let mut x = margin_x + indent;
        'line: loop {
            let letters = rng.gen_range(2..8);
            for _ in 0..letters {
                let gw = px(rng.gen_range(2.0..4.0));
                if x + gw >= line_end {
                    break 'line;
                }
                let stroke = (gw / 2).max(1);
                let sx = x + rng.gen_range(0..=gw - stroke);
                canvas.fill_rect(y, sx, glyph_h, stroke, ink);
                match rng.gen_range(0..4) {
                    0 => canvas.fill_rect(y, x, px(1.0), gw, ink),
                    1 => canvas.fill_rect(y + glyph_h / 2, x, px(1.0), gw, ink),
                    2 => canvas.fill_rect(y + glyph_h - 1, x, px(1.0), gw, ink),
                    _ => {}
                }
                x += gw + px(1.0);
            }
            x += px(rng.gen_range(2.0..4.0));
            if x >= line_end {
                break;
            }
        }
        y += leading;
    }
    Ok(canvas.img)
}

/// Smooth radial gradient, a low-frequency reference image.
pub fn render_gradient(seed: u64, h: usize, w: usize) -> Result<ImageBuffer> {
    if h == 0 || w == 0 {
        return Err(arg_err!("gradient needs positive extents"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cy = rng.gen_range(0.0..h as f64);
    let cx = rng.gen_range(0.0..w as f64);
    let inner: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
    let outer: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.4));
    let radius = (h * h + w * w) as f64;
    Ok(ImageBuffer::from_fn(h, w, 3, |y, x, c| {
        let d = (((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / radius)
            .sqrt()
            .min(1.0);
        (inner[c] + (outer[c] - inner[c]) * d) as f32
    }))
}
