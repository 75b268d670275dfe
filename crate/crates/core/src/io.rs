//! Images and on-disk formats: 8-bit PNG for viewing, PFM floats for
//! metric-grade data.
//!
//! PFM rasters are stored bottom-up with a negative scale (little-endian),
//! as usual. Two-channel rasters (flows, PP-ratio maps) use the magic "PF2",
//! one sample pair per pixel; everything else is standard "PF"/"Pf".

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved rgb image, values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [f32; 3] {
        let i = 3 * (v * self.width + u);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f32; 3]) {
        let i = 3 * (v * self.width + u);
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn row(&self, v: usize) -> &[f32] {
        &self.data[3 * v * self.width..3 * (v + 1) * self.width]
    }

    pub fn set_row(&mut self, v: usize, row: &[f32]) {
        self.data[3 * v * self.width..3 * (v + 1) * self.width].copy_from_slice(row);
    }

    /// Bilinear sample at continuous pixel coordinates ((0,0) = center of the
    /// top-left pixel), clamped at the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x as usize).min(self.width - 1);
        let y0 = (y as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let p00 = self.pixel(x0, y0)[ch] as f64;
            let p10 = self.pixel(x1, y0)[ch] as f64;
            let p01 = self.pixel(x0, y1)[ch] as f64;
            let p11 = self.pixel(x1, y1)[ch] as f64;
            out[ch] = p00 * (1.0 - fx) * (1.0 - fy)
                + p10 * fx * (1.0 - fy)
                + p01 * (1.0 - fx) * fy
                + p11 * fx * fy;
        }
        out
    }

    /// Mean luma, used by the flow estimator.
    pub fn to_luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }
}

/// Values clamped to [0,1] and quantized to 8 bits; no gamma curve.
pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::MalformedFile { path: path.display().to_string(), reason: e.to_string() })?;
    let bytes: Vec<u8> = image
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::MalformedFile { path: path.display().to_string(), reason: e.to_string() })?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Image> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path.display().to_string(),
        reason,
    };
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| malformed(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| malformed(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(malformed("expected 8-bit rgb png".into()));
    }
    let mut image = Image::new(info.width as usize, info.height as usize);
    for (dst, &src) in image.data.iter_mut().zip(buf.iter()) {
        *dst = src as f32 / 255.0;
    }
    Ok(image)
}

fn pfm_magic(channels: usize) -> Result<&'static str> {
    match channels {
        1 => Ok("Pf"),
        2 => Ok("PF2"),
        3 => Ok("PF"),
        n => Err(Error::InvalidConfig(format!("pfm supports 1, 2 or 3 channels, not {n}"))),
    }
}

/// Writes a little-endian PFM raster. `data` is top-down row-major with
/// `channels` interleaved samples per pixel; rows are flipped on disk.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    if data.len() != width * height * channels {
        return Err(Error::DimensionMismatch(format!(
            "pfm payload {} != {}x{}x{}",
            data.len(),
            width,
            height,
            channels
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "{}\n{} {}\n-1.0\n", pfm_magic(channels)?, width, height)?;
    let row_len = width * channels;
    for v in (0..height).rev() {
        let row = &data[v * row_len..(v + 1) * row_len];
        for &sample in row {
            w.write_all(&sample.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a PFM raster back into top-down order. Returns (w, h, channels, data).
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path.display().to_string(),
        reason,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    // Header: three whitespace-separated tokens groups (magic, "w h", scale).
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF2" => 2,
        "PF" => 3,
        other => return Err(malformed(format!("unknown magic {other}"))),
    };
    let width: usize = token()?.parse().map_err(|_| malformed("bad width".into()))?;
    let height: usize = token()?.parse().map_err(|_| malformed("bad height".into()))?;
    let scale: f64 = token()?.parse().map_err(|_| malformed("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(malformed("big-endian pfm not supported".into()));
    }
    pos += 1; // single whitespace after the scale line
    let expected = width * height * channels * 4;
    if bytes.len() < pos + expected {
        return Err(malformed("truncated payload".into()));
    }
    let flat: Vec<f32> = bytes[pos..pos + expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    // Flip back to top-down.
    let row_len = width * channels;
    let mut data = vec![0.0f32; flat.len()];
    for v in 0..height {
        let src = (height - 1 - v) * row_len;
        data[v * row_len..(v + 1) * row_len].copy_from_slice(&flat[src..src + row_len]);
    }
    Ok((width, height, channels, data))
}

pub fn write_image_pfm(path: &Path, image: &Image) -> Result<()> {
    write_pfm(path, image.width, image.height, 3, &image.data)
}

pub fn read_image_pfm(path: &Path) -> Result<Image> {
    let (width, height, channels, data) = read_pfm(path)?;
    if channels != 3 {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!("expected 3 channels, got {channels}"),
        });
    }
    Ok(Image { width, height, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("rsfield_io_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn pfm_roundtrip_is_bit_exact() {
        let mut rng = Rng64::new(1);
        let (w, h) = (13, 7);
        let mut img = Image::new(w, h);
        for p in img.data.iter_mut() {
            *p = rng.uniform() as f32;
        }
        let path = temp_path("img.pfm");
        write_image_pfm(&path, &img).unwrap();
        let back = read_image_pfm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn two_channel_pfm_preserves_nans() {
        let (w, h) = (4, 3);
        let mut data = vec![0.5f32; w * h * 2];
        data[5] = f32::NAN;
        data[6] = -2.25;
        let path = temp_path("flow.pfm");
        write_pfm(&path, w, h, 2, &data).unwrap();
        let (rw, rh, rc, back) = read_pfm(&path).unwrap();
        assert_eq!((rw, rh, rc), (w, h, 2));
        assert!(back[5].is_nan());
        assert_eq!(back[6], -2.25);
    }

    #[test]
    fn png_quantizes_to_8_bits() {
        let mut img = Image::new(3, 2);
        img.set_pixel(0, 0, [0.0, 0.5, 1.0]);
        img.set_pixel(2, 1, [1.5, -0.2, 0.25]);
        let path = temp_path("img.png");
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.pixel(0, 0)[0], 0.0);
        assert_eq!(back.pixel(2, 1)[0], 1.0); // clamped
        assert_eq!(back.pixel(2, 1)[1], 0.0); // clamped
        assert!((back.pixel(0, 0)[1] - 0.5).abs() < 1.0 / 255.0);
    }

    #[test]
    fn bilinear_sampling_interpolates() {
        let mut img = Image::new(2, 1);
        img.set_pixel(0, 0, [0.0, 0.0, 0.0]);
        img.set_pixel(1, 0, [1.0, 1.0, 1.0]);
        let mid = img.sample_bilinear(0.5, 0.0);
        assert!((mid[0] - 0.5).abs() < 1e-12);
    }
}
