//! Image and geometry-map loading, saving, and validation.
//!
//! Supported interchange formats are 8-bit RGB PNG (alpha dropped on load)
//! and binary PPM (P6, maxval 255). Components are stored as `f64` in
//! [0, 1]: load divides by 255, save writes `round(v * 255)` and rejects
//! out-of-range components rather than clamping.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB image with components in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

pub const CHANNELS: usize = 3;

impl ImageBuffer {
    /// All-black image.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension: {width}x{height}"
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            data: vec![0.0; width * height * CHANNELS],
        })
    }

    /// Build from interleaved RGB data, validating length, finiteness, and range.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension: {width}x{height}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidImage(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                CHANNELS
            )));
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidImage(format!("component {v} outside [0, 1]")));
            }
        }
        Ok(ImageBuffer {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let base = (row * self.width + col) * CHANNELS;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    /// Overwrite a pixel. Range is the caller's responsibility; `save_image`
    /// rejects out-of-range components.
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let base = (row * self.width + col) * CHANNELS;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Optional per-pixel geometry companions to an image.
///
/// The position map stores normalized coordinates in [0, 1]; the normal map
/// encodes unit normals channel-wise as `(n + 1) / 2`.
#[derive(Debug, Clone, Default)]
pub struct GeometryMaps {
    pub position_map: Option<ImageBuffer>,
    pub normal_map: Option<ImageBuffer>,
}

impl GeometryMaps {
    pub fn none() -> Self {
        GeometryMaps::default()
    }

    /// Check both maps against the companion image: equal dimensions, and
    /// decoded normals of length 1 within the 8-bit encoding tolerance.
    pub fn validate_for(&self, image: &ImageBuffer) -> Result<()> {
        if let Some(p) = &self.position_map {
            if !p.same_dims(image) {
                return Err(Error::DimensionMismatch(format!(
                    "position map {}x{} vs image {}x{}",
                    p.width, p.height, image.width, image.height
                )));
            }
        }
        if let Some(n) = &self.normal_map {
            if !n.same_dims(image) {
                return Err(Error::DimensionMismatch(format!(
                    "normal map {}x{} vs image {}x{}",
                    n.width, n.height, image.width, image.height
                )));
            }
            for row in 0..n.height {
                for col in 0..n.width {
                    let v = decode_normal(n.pixel(row, col));
                    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if !(0.95..=1.05).contains(&len) {
                        return Err(Error::InvalidImage(format!(
                            "normal at ({row}, {col}) has length {len:.4}, expected 1 +/- 0.05"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Invert the `(n + 1) / 2` channel encoding.
pub fn decode_normal(rgb: [f64; 3]) -> [f64; 3] {
    [
        rgb[0] * 2.0 - 1.0,
        rgb[1] * 2.0 - 1.0,
        rgb[2] * 2.0 - 1.0,
    ]
}

fn io_err<'p>(action: &'static str, path: &'p Path) -> impl FnOnce(std::io::Error) -> Error + 'p {
    move |source| Error::Io {
        action,
        path: path.to_path_buf(),
        source,
    }
}

/// Load a PNG or binary PPM (P6) image, detecting the format from content.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let mut file = BufReader::new(File::open(path).map_err(io_err("open", path))?);
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io_err("read", path))?;
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes).map_err(|e| match e {
            Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{}: {m}", path.display())),
            other => other,
        })
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: not a PNG or binary PPM file",
            path.display()
        )))
    }
}

/// Save as PNG or PPM depending on the file extension (`.png` / `.ppm`).
///
/// Components must already lie in [0, 1]; out-of-range values are an error,
/// not silently clamped.
pub fn save_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = quantize(image)?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => {
            let file = File::create(path).map_err(io_err("create", path))?;
            let mut enc = png::Encoder::new(
                BufWriter::new(file),
                image.width as u32,
                image.height as u32,
            );
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::InvalidImage(format!("png header: {e}")))?;
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::InvalidImage(format!("png data: {e}")))?;
            Ok(())
        }
        Some("ppm") => {
            let mut out = BufWriter::new(File::create(path).map_err(io_err("create", path))?);
            write!(out, "P6\n{} {}\n255\n", image.width, image.height)
                .map_err(io_err("write", path))?;
            out.write_all(&bytes).map_err(io_err("write", path))?;
            out.flush().map_err(io_err("write", path))?;
            Ok(())
        }
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: output extension must be .png or .ppm",
            path.display()
        ))),
    }
}

/// Write a single-channel 8-bit grayscale PNG; values quantized by
/// `round(v * 255)` and validated to [0, 1].
pub fn save_gray_png(values: &[f64], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if width == 0 || height == 0 || values.len() != width * height {
        return Err(Error::InvalidImage(format!(
            "gray plane {width}x{height} with {} values",
            values.len()
        )));
    }
    let mut bytes = Vec::with_capacity(values.len());
    for &v in values {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidImage(format!("component {v} outside [0, 1]")));
        }
        bytes.push((v * 255.0).round() as u8);
    }
    let file = File::create(path).map_err(io_err("create", path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::InvalidImage(format!("png header: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::InvalidImage(format!("png data: {e}")))?;
    Ok(())
}

fn quantize(image: &ImageBuffer) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(image.data.len());
    for &v in &image.data {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidImage(format!(
                "component {v} outside [0, 1]; clamp before saving"
            )));
        }
        bytes.push((v * 255.0).round() as u8);
    }
    Ok(bytes)
}

fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("png: {e}")))?;
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::InvalidImage("png output size overflow".into()))?;
    let mut buf = vec![0u8; buf_size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedFormat(format!("png: {e}")))?;
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage("zero-dimension png".into()));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "png bit depth {:?}, only 8-bit supported",
            info.bit_depth
        )));
    }
    let pixels = width * height;
    let mut data = Vec::with_capacity(pixels * CHANNELS);
    let push_scaled = |data: &mut Vec<f64>, b: u8| data.push(b as f64 / 255.0);
    match info.color_type {
        png::ColorType::Rgb => {
            for px in buf[..pixels * 3].chunks_exact(3) {
                for &b in px {
                    push_scaled(&mut data, b);
                }
            }
        }
        png::ColorType::Rgba => {
            for px in buf[..pixels * 4].chunks_exact(4) {
                for &b in &px[..3] {
                    push_scaled(&mut data, b);
                }
            }
        }
        png::ColorType::Grayscale => {
            for &b in &buf[..pixels] {
                for _ in 0..3 {
                    push_scaled(&mut data, b);
                }
            }
        }
        png::ColorType::GrayscaleAlpha => {
            for px in buf[..pixels * 2].chunks_exact(2) {
                for _ in 0..3 {
                    push_scaled(&mut data, px[0]);
                }
            }
        }
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "png color type {other:?}"
            )))
        }
    }
    ImageBuffer::from_data(width, height, data)
}

fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = read_ppm_int(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "ppm maxval {maxval}, only 255 supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage("zero-dimension ppm".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * CHANNELS;
    if bytes.len() < pos + need {
        return Err(Error::InvalidImage(format!(
            "ppm raster truncated: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    ImageBuffer::from_data(width, height, data)
}

/// Parse one whitespace/comment-delimited decimal field of a PPM header,
/// leaving `pos` at the last digit consumed.
fn read_ppm_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let err = || Error::InvalidImage("malformed ppm header".into());
    // Skip whitespace and '#' comments.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            _ => return Err(err()),
        }
    }
    let mut value = 0usize;
    let mut seen = false;
    while let Some(&b) = bytes.get(*pos) {
        if b.is_ascii_digit() {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(err)?;
            seen = true;
            *pos += 1;
        } else {
            break;
        }
    }
    if !seen {
        return Err(err());
    }
    // pos now sits just past the digits; the caller accounts for the separator.
    Ok(value)
}
