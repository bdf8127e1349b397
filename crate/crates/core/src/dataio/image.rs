//! 8-bit grayscale PGM (P5) reading/writing and PNG reading.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use super::DataError;

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width * height).then_some(GrayImage { width, height, pixels })
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Format { path: path.to_path_buf(), msg: msg.into() }
}

/// Parses a binary PGM. Only `maxval <= 255` is accepted.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage, DataError> {
    if !bytes.starts_with(b"P5") {
        return Err(format_err(path, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text.parse().map_err(|_| format_err(path, "malformed header"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, "malformed header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(DataError::Unsupported { path: path.to_path_buf(), msg: format!("maxval {maxval} (only 8-bit supported)") });
    }
    let raster = &bytes[pos..];
    if raster.len() < width * height {
        return Err(format_err(path, format!("expected {} pixels, found {}", width * height, raster.len())));
    }
    let mut pixels = raster[..width * height].to_vec();
    if maxval != 255 {
        for p in &mut pixels {
            *p = ((u32::from(*p) * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8;
        }
    }
    Ok(GrayImage { width, height, pixels })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), DataError> {
    fs::write(path, encode_pgm(img)).map_err(|e| DataError::io(path, e))
}

/// Reads an 8-bit PNG; colour images are reduced to their channel mean.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<GrayImage, DataError> {
    let mut decoder = png::Decoder::new(BufReader::new(std::io::Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| format_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(DataError::Unsupported { path: path.to_path_buf(), msg: format!("{:?} bit depth", info.bit_depth) });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let colour_channels = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        png::ColorType::Rgb | png::ColorType::Rgba => 3,
        other => return Err(DataError::Unsupported { path: path.to_path_buf(), msg: format!("{other:?} colour type") }),
    };
    let stride = info.color_type.samples();
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks(info.line_size) {
        for px in row[..w * stride].chunks(stride) {
            let sum: u32 = px[..colour_channels].iter().map(|v| u32::from(*v)).sum();
            pixels.push(((sum + colour_channels as u32 / 2) / colour_channels as u32) as u8);
        }
    }
    Ok(GrayImage { width: w, height: h, pixels })
}

/// Reads a PGM or PNG, picked by file signature.
pub fn read_gray(path: &Path) -> Result<GrayImage, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else {
        Err(DataError::Unsupported { path: path.to_path_buf(), msg: "not a binary PGM or PNG".into() })
    }
}
