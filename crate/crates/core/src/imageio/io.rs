use std::fs;
use std::path::Path;

use image::{ImageFormat, ImageReader};

use super::buffer::ImageBuffer;
use crate::error::{Error, Result};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Loads an 8-bit PNG (gray or RGB; alpha is dropped) or a binary PPM (P6).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(PNG_MAGIC) {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(b"P") || bytes.iter().take(64).all(|b| b.is_ascii()) {
        Err(Error::Parse(format!(
            "{}: not a PNG or binary PPM header",
            path.display()
        )))
    } else {
        Err(Error::Format(format!("{}: unrecognised image data", path.display())))
    }
}

/// Writes PNG or PPM depending on the extension (`.ppm` → P6, otherwise PNG).
/// Values are quantized with `round(v·255)`.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ppm") => encode_ppm(img),
        Some(e) if e.eq_ignore_ascii_case("png") => encode_png(img)?,
        Some(e) => return Err(Error::Format(format!("cannot write .{e} files"))),
        None => encode_png(img)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.data().iter().map(|v| quantize(*v)).collect();
    let color = if img.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(encoder, &raw, img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let dynimg = ImageReader::with_format(std::io::Cursor::new(bytes), ImageFormat::Png)
        .decode()
        .map_err(|e| Error::Parse(format!("png: {e}")))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    if dynimg.color().has_color() {
        let rgb = dynimg.to_rgb8();
        let data = rgb.as_raw().iter().map(|b| *b as f32 / 255.0).collect();
        ImageBuffer::new(h, w, 3, data)
    } else {
        let gray = dynimg.to_luma8();
        let data = gray.as_raw().iter().map(|b| *b as f32 / 255.0).collect();
        ImageBuffer::new(h, w, 1, data)
    }
}

fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let rgb = img.to_rgb();
    let mut out = format!("P6\n{} {}\n255\n", rgb.width(), rgb.height()).into_bytes();
    out.extend(rgb.data().iter().map(|v| quantize(*v)));
    out
}

fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = next_header_int(bytes, &mut pos)?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "ppm: only 8-bit (maxval 255) supported, got {maxval}"
        )));
    }
    if w == 0 || h == 0 {
        return Err(Error::Parse("ppm: zero extent".into()));
    }
    // a single whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * 3;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Parse(format!("ppm: raster truncated, need {need} bytes")))?;
    ImageBuffer::new(h, w, 3, raster.iter().map(|b| *b as f32 / 255.0).collect())
}

fn next_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Parse("ppm: header truncated".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("ppm: malformed header field".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_ppm_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.ppm");
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        bytes.extend([255u8; 12]);
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 3));
        assert!(img.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn text_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("notes.txt");
        fs::write(&p, "hello, this is not an image\n").unwrap();
        assert!(matches!(load_image(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::NotFound(_))));
    }

    #[test]
    fn truncated_ppm_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ppm");
        fs::write(&p, b"P6\n4 4\n255\n\x00\x00").unwrap();
        assert!(matches!(load_image(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn roundtrip_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(7, 5, 3, |y, x, c| ((y * 31 + x * 17 + c * 7) % 97) as f32 / 96.0);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert!(back.max_abs_diff(&img) <= 1.0 / 255.0 + 1e-6, "{name}");
        }
        let gray = img.to_gray().unwrap();
        let p = dir.path().join("g.png");
        save_image(&gray, &p).unwrap();
        assert_eq!(load_image(&p).unwrap().channels(), 1);
    }
}
