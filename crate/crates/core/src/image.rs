//! RGB raster images: planar float storage, PPM (P6) and PNG codecs, resizing.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest accepted width or height.
pub const MAX_DIM: usize = 1 << 15;

/// Three-channel image, stored planar (`[3, H, W]` row-major), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageRgb {
    /// Build from planar data. Values must be finite; they are clamped into `[0, 1]`.
    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "planar RGB {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("non-finite pixel value"));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(ImageRgb {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        let mut data = Vec::with_capacity(3 * n);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, n));
        }
        ImageRgb::from_planar(width, height, data)
    }

    /// From interleaved 8-bit RGB bytes, mapping each byte `b` to `b / 255`.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        if bytes.len() != 3 * n {
            return Err(Error::shape(format!(
                "expected {} RGB bytes, got {}",
                3 * n,
                bytes.len()
            )));
        }
        let mut data = vec![0.0f32; 3 * n];
        for (i, px) in bytes.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = f32::from(px[c]) / 255.0;
            }
        }
        Ok(ImageRgb {
            width,
            height,
            data,
        })
    }

    /// Interleaved 8-bit RGB, rounding to the nearest 1/255 step.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = vec![0u8; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[3 * i + c] = quantize(self.data[c * n + i]);
            }
        }
        out
    }

    /// Snap every value to the 8-bit grid, i.e. what a save/load cycle produces.
    pub fn quantized(&self) -> ImageRgb {
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| f32::from(quantize(v)) / 255.0)
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planar(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// `[3, H, W]` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone())
            .expect("image data is always a valid tensor")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if c != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        ImageRgb::from_planar(w, h, t.data().to_vec())
    }

    pub fn flip_horizontal(&self) -> ImageRgb {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; self.data.len()];
        for c in 0..3 {
            for y in 0..h {
                let row = (c * h + y) * w;
                for x in 0..w {
                    data[row + x] = self.data[row + w - 1 - x];
                }
            }
        }
        ImageRgb {
            width: w,
            height: h,
            data,
        }
    }

    /// Bilinear resize with half-pixel centre alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<ImageRgb> {
        check_dims(width, height)?;
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let taps = |scale: f64, i: usize, extent: usize| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(extent - 1);
            let i1 = (i0 + 1).min(extent - 1);
            (i0, i1, src - i0 as f64)
        };
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                let (y0, y1, fy) = taps(sy, y, self.height);
                for x in 0..width {
                    let (x0, x1, fx) = taps(sx, x, self.width);
                    let p = |yy: usize, xx: usize| f64::from(self.get(c, yy, xx));
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    data.push((top * (1.0 - fy) + bottom * fy) as f32);
                }
            }
        }
        ImageRgb::from_planar(width, height, data)
    }

    /// Load a PPM (P6, maxval 255) or PNG file, detected by content.
    pub fn load(path: impl AsRef<Path>) -> Result<ImageRgb> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::from(e).at(path))?;
        ImageRgb::decode(&bytes).map_err(|e| e.at(path))
    }

    pub fn decode(bytes: &[u8]) -> Result<ImageRgb> {
        if bytes.starts_with(b"P6") {
            decode_ppm(bytes)
        } else if bytes.starts_with(PNG_SIGNATURE) {
            decode_png(bytes)
        } else {
            Err(Error::UnsupportedImage(
                "expected a P6 PPM or PNG signature".into(),
            ))
        }
    }

    /// Save as PNG when the extension is `.png`, PPM otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let bytes = if is_png {
            self.encode_png()?
        } else {
            self.encode_ppm()
        };
        fs::write(path, bytes).map_err(|e| Error::from(e).at(path))
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.to_rgb8());
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(png_err)?;
            writer.write_image_data(&self.to_rgb8()).map_err(png_err)?;
        }
        Ok(out)
    }
}

/// Per-pixel boolean mask from an image file: a pixel is set when any channel is nonzero.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let img = ImageRgb::load(path)?;
    let n = img.width * img.height;
    let mask = (0..n)
        .map(|i| (0..3).any(|c| img.data[c * n + i] > 0.0))
        .collect();
    Ok((img.width, img.height, mask))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::shape(format!("empty image {width}x{height}")));
    }
    if width > MAX_DIM || height > MAX_DIM {
        return Err(Error::UnsupportedImage(format!(
            "dimensions {width}x{height} exceed {MAX_DIM}"
        )));
    }
    Ok(())
}

const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::UnsupportedImage(format!("png: {e}"))
}

fn decode_png(bytes: &[u8]) -> Result<ImageRgb> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedImage("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    check_dims(w, h)?;
    let samples = info.color_type.samples();
    let mut rgb = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * samples];
        for px in row.chunks_exact(samples) {
            match samples {
                1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
    }
    ImageRgb::from_rgb8(w, h, &rgb)
}

/// Byte-level PPM header parser.
struct PpmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PpmHeader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("expected PPM {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::UnsupportedImage(format!("PPM {what} overflows")))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<ImageRgb> {
    let mut hdr = PpmHeader { bytes, pos: 2 };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedImage(format!(
            "PPM maxval {maxval}, only 8-bit (255) is supported"
        )));
    }
    match bytes.get(hdr.pos) {
        Some(c) if c.is_ascii_whitespace() => {}
        _ => {
            return Err(Error::format(
                hdr.pos as u64,
                "missing whitespace after PPM maxval",
            ))
        }
    }
    check_dims(width, height)?;
    let start = hdr.pos + 1;
    let need = 3 * width * height;
    let payload = bytes
        .get(start..start + need)
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated PPM pixel data"))?;
    ImageRgb::from_rgb8(width, height, payload)
}

/// Pearson correlation between the pixel intensities of two same-sized images.
///
/// Each channel is centred on its own mean first, so a shared colour cast
/// does not count as spatial agreement.
pub fn pixel_correlation(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape("images differ in size"));
    }
    let centred = |img: &ImageRgb| -> Vec<f32> {
        (0..3)
            .flat_map(|c| {
                let ch = img.channel(c);
                let m = ch.iter().map(|&v| f64::from(v)).sum::<f64>() / ch.len() as f64;
                ch.iter().map(move |&v| (f64::from(v) - m) as f32)
            })
            .collect()
    };
    Ok(pearson(&centred(a), &centred(b)))
}

pub(crate) fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
