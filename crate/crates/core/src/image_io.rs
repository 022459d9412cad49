//! Raster decoding and encoding. Every [`Image`] holds RGB samples in `[0, 1]`.
//!
//! Reads PNG (8 or 16 bit; gray, gray+alpha, RGB, RGBA, palette) and binary PPM with
//! maxval 255. Writes 8-bit RGB PNG or PPM, chosen by file extension.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{ImageError, Result};
use crate::tensor::{ops, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Interleaved RGB, row-major.
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> std::result::Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(ImageError::Invalid(format!(
                "{} samples for a {width}x{height} RGB image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Invalid(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> std::result::Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, data)
    }

    /// 8-bit samples scaled by `1 / 255`.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> std::result::Result<Self, ImageError> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Round-half-up quantisation to bytes after clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// `[1, 3, height, width]` planar tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let hw = self.width * self.height;
        let mut planar = vec![0.0; 3 * hw];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * hw + i] = px[c];
            }
        }
        Tensor::new(vec![1, 3, self.height, self.width], planar).expect("sized")
    }

    /// Sample `n` of a `[N, 3, H, W]` tensor. Values are clamped to `[0, 1]`; non-finite
    /// values are rejected.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Result<Self> {
        let (count, c, h, w) = t.dims4()?;
        if c != 3 || n >= count {
            return Err(crate::Error::shape(
                "image from tensor",
                format!("need sample {n} of an RGB batch, got shape {:?}", t.shape()),
            ));
        }
        let hw = h * w;
        let base = &t.data()[n * 3 * hw..(n + 1) * 3 * hw];
        if let Some(v) = base.iter().find(|v| !v.is_finite()) {
            return Err(ImageError::Invalid(format!("non-finite sample {v}")).into());
        }
        let mut data = vec![0.0; 3 * hw];
        for i in 0..hw {
            for ch in 0..3 {
                data[i * 3 + ch] = base[ch * hw + i].clamp(0.0, 1.0);
            }
        }
        Ok(Self::new(w, h, data)?)
    }

    /// Bilinear resize (corner-aligned).
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let t = ops::resize_bilinear(&self.to_tensor(), height, width)?;
        Self::from_tensor(&t, 0)
    }
}

/// `round(v * 255)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) } as f64;
    (v * 255.0 + 0.5).floor() as u8
}

/// Stacks equally sized images into one `[N, 3, H, W]` tensor.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| crate::Error::invalid("batch", "no images"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(crate::Error::shape(
                "batch",
                format!("{}x{} image in a batch of {w}x{h}", img.width, img.height),
            ));
        }
        data.extend_from_slice(img.to_tensor().data());
    }
    Ok(Tensor::new(vec![images.len(), 3, h, w], data)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path.as_ref()).map_err(ImageError::Io)?;
    Ok(decode(&bytes)?)
}

/// Decodes PNG or PPM bytes, detected by signature.
pub fn decode(bytes: &[u8]) -> std::result::Result<Image, ImageError> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(ImageError::Unsupported(
            "unrecognised signature (expected PNG or binary PPM)".into(),
        ))
    }
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image, ImageError> {
    let corrupt = |e: png::DecodingError| ImageError::Corrupt(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Corrupt("image dimensions overflow".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(ImageError::Corrupt("palette was not expanded".into()));
        }
    };
    let (bytes_per_sample, scale) = match info.bit_depth {
        png::BitDepth::Eight => (1, 255.0),
        png::BitDepth::Sixteen => (2, 65535.0),
        other => {
            return Err(ImageError::Unsupported(format!("bit depth {other:?} after expansion")));
        }
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..w * channels * bytes_per_sample].chunks_exact(channels * bytes_per_sample) {
            let sample = |k: usize| -> f32 {
                let v = if bytes_per_sample == 1 {
                    px[k] as f32
                } else {
                    u16::from_be_bytes([px[2 * k], px[2 * k + 1]]) as f32
                };
                v / scale
            };
            if channels < 3 {
                let g = sample(0);
                data.extend_from_slice(&[g, g, g]);
            } else {
                data.extend_from_slice(&[sample(0), sample(1), sample(2)]);
            }
        }
    }
    Image::new(w, h, data)
}

/// Splits the next whitespace-delimited header token, skipping `#` comments.
fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> std::result::Result<&'a [u8], ImageError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Corrupt("PPM header ends early".into()));
    }
    Ok(&bytes[start..*pos])
}

fn ppm_number(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<usize, ImageError> {
    let tok = ppm_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::Corrupt(format!("PPM {what} is not a number")))
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, ImageError> {
    let mut pos = 2;
    let w = ppm_number(bytes, &mut pos, "width")?;
    let h = ppm_number(bytes, &mut pos, "height")?;
    let maxval = ppm_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(ImageError::Unsupported(format!("PPM maxval {maxval} (only 255 is read)")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::Corrupt("PPM header not terminated".into()));
    }
    pos += 1;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| ImageError::Corrupt("PPM dimensions overflow".into()))?;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(ImageError::Corrupt(format!(
            "PPM pixel data has {} of {need} bytes",
            body.len()
        )));
    }
    Image::from_rgb8(w, h, &body[..need])
}

pub fn encode_png(img: &Image) -> std::result::Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| ImageError::Invalid(e.to_string());
        let mut writer = enc.write_header().map_err(err)?;
        writer.write_image_data(&img.to_rgb8()).map_err(err)?;
        writer.finish().map_err(err)?;
    }
    Ok(out)
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_rgb8());
    out
}

/// Writes 8-bit RGB; `.png` or `.ppm` by extension.
pub fn save(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(img)?,
        "ppm" => encode_ppm(img),
        other => {
            return Err(ImageError::Unsupported(format!("cannot write extension {other:?}")).into());
        }
    };
    let file = fs::File::create(path).map_err(ImageError::Io)?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(ImageError::Io)?;
    w.flush().map_err(ImageError::Io)?;
    Ok(())
}

/// `true` for file names this module can read.
pub fn is_supported(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm")
    )
}
