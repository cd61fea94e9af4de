//! Binary PPM (P6) and 8-bit RGB PNG frames.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::segmentation::Frame;

const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Decode a PPM or PNG file (detected from its leading bytes) into [0, 1].
pub fn read_frame(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::data(path, format!("cannot read frame: {e}")))?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes).map_err(|d| Error::data(path, d))
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes).map_err(|d| Error::data(path, d))
    } else {
        Err(Error::data(path, "unrecognized image format (expected P6 PPM or PNG)"))
    }
}

/// Encode by extension: `.png` writes PNG, anything else P6 PPM.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => encode_png(frame).map_err(|d| Error::data(path, d))?,
        _ => encode_ppm(frame),
    };
    fs::write(path, bytes)?;
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.values().iter().map(|&v| to_byte(v)));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame, String> {
    let mut pos = 0;
    let mut fields = [0usize; 4];
    for (k, field) in fields.iter_mut().enumerate() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).map_err(|_| "malformed PPM header")?;
        if k == 0 {
            if token != "P6" {
                return Err(format!("not a binary PPM (magic {token:?})"));
            }
        } else {
            *field = token.parse().map_err(|_| format!("malformed PPM header field {token:?}"))?;
        }
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let [_, width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported PPM maxval {maxval}"));
    }
    let wide = maxval > 255;
    let count = width * height * 3;
    let need = count * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(format!("truncated PPM raster: {} of {need} bytes", raster.len()));
    }
    let scale = maxval as f64;
    let values = (0..count)
        .map(|i| {
            let v = if wide {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            } else {
                raster[i] as f64
            };
            (v / scale).min(1.0)
        })
        .collect();
    Frame::new(width, height, values).map_err(|e| e.to_string())
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width() as u32, frame.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        let data: Vec<u8> = frame.values().iter().map(|&v| to_byte(v)).collect();
        writer.write_image_data(&data).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Frame, String> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    if reader.info().interlaced {
        return Err("interlaced PNG is not supported".into());
    }
    let size = reader.output_buffer_size().ok_or("PNG too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(format!(
            "only 8-bit RGB PNG is supported, got {:?} at {:?}",
            info.color_type, info.bit_depth
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut values = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(info.line_size).take(h) {
        values.extend(row[..w * 3].iter().map(|&b| b as f64 / 255.0));
    }
    Frame::new(w, h, values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_pixel_normalizes() {
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 51, 51]);
        let f = decode_ppm(&bytes).unwrap();
        assert_eq!(f.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(f.pixel(1, 1), [0.2, 0.2, 0.2]);
    }

    #[test]
    fn ppm_round_trip() {
        let f = Frame::from_fn(3, 2, |x, y| [x as f64 / 2.0, y as f64, 0.2]).unwrap();
        let g = decode_ppm(&encode_ppm(&f)).unwrap();
        assert_eq!(encode_ppm(&g), encode_ppm(&f));
        assert_eq!(g.pixel(2, 1), [1.0, 1.0, 0.2]);
    }

    #[test]
    fn png_round_trip() {
        let f = Frame::from_fn(4, 3, |x, y| [x as f64 / 3.0, y as f64 / 2.0, 1.0]).unwrap();
        let g = decode_png(&encode_png(&f).unwrap()).unwrap();
        assert_eq!(encode_ppm(&g), encode_ppm(&f));
    }

    #[test]
    fn truncated_ppm_is_rejected() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend([0; 5]);
        assert!(decode_ppm(&bytes).unwrap_err().contains("truncated"));
        assert!(decode_ppm(b"P3 1 1 255\n0 0 0").is_err());
    }

    #[test]
    fn sixteen_bit_ppm() {
        let mut bytes = b"P6 2 2 65535\n".to_vec();
        for _ in 0..4 {
            bytes.extend([0xff, 0xff, 0, 0, 0x80, 0x00]);
        }
        let f = decode_ppm(&bytes).unwrap();
        assert_eq!(f.pixel(1, 0)[0], 1.0);
        assert!((f.pixel(1, 0)[2] - 32768.0 / 65535.0).abs() < 1e-15);
    }
}
