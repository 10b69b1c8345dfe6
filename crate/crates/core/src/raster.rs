//! In-memory RGB and binary-mask rasters, their PNG encoding and the box
//! resampler shared by slide levels, masks and synthetic pyramids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterRGB {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterRGB {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterRGB({}x{})", self.width, self.height)
    }
}

impl RasterRGB {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Validation(format!(
                "rgb buffer of {} bytes does not match {width}x{height}x3",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies a sub-rectangle; the caller guarantees it lies inside the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> RasterRGB {
        let mut out = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            out.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        RasterRGB {
            width: w,
            height: h,
            pixels: out,
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, &self.pixels, self.width, self.height, ExtendedColorType::Rgb8)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = open_image(path)?.into_rgb8();
        let (w, h) = img.dimensions();
        RasterRGB::new(w as usize, h as usize, img.into_raw())
    }
}

/// Row-major binary mask; every value is 0 (background) or 1 (tissue).
#[derive(Clone, PartialEq, Eq)]
pub struct MaskRaster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for MaskRaster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "MaskRaster({}x{}, {} set)",
            self.width,
            self.height,
            self.count_ones()
        )
    }
}

impl MaskRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Validation(format!(
                "mask buffer of {} values does not match {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![1; width * height],
        }
    }

    /// Thresholds 8-bit gray values: `> 127` is tissue.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != width * height {
            return Err(Error::Validation(format!(
                "gray buffer of {} values does not match {width}x{height}",
                gray.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: gray.iter().map(|&v| u8::from(v > MASK_THRESHOLD)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.pixels[y * self.width + x] = u8::from(v);
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> MaskRaster {
        let mut out = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            out.extend_from_slice(&self.pixels[start..start + w]);
        }
        MaskRaster {
            width: w,
            height: h,
            pixels: out,
        }
    }

    /// 0/255 grayscale view used for encoding.
    pub fn to_gray(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| v * 255).collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, &self.to_gray(), self.width, self.height, ExtendedColorType::L8)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = open_image(path)?.into_luma8();
        let (w, h) = img.dimensions();
        MaskRaster::from_gray(w as usize, h as usize, img.as_raw())
    }
}

/// Gray values strictly above this are tissue.
pub const MASK_THRESHOLD: u8 = 127;

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
        ));
    }
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

fn write_png(
    path: &Path,
    buf: &[u8],
    width: usize,
    height: usize,
    color: ExtendedColorType,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PngEncoder::new_with_quality(
        BufWriter::new(file),
        CompressionType::Fast,
        FilterType::Sub,
    );
    encoder
        .write_image(buf, width as u32, height as u32, color)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })
}

/// Area-average downsample of interleaved 8-bit samples by an integer factor.
///
/// The output is `out_w x out_h`; each output sample averages the
/// `factor x factor` source window, clipped to the source bounds, with
/// round-half-up integer arithmetic.
pub fn box_downsample_u8(
    src: &[u8],
    width: usize,
    height: usize,
    channels: usize,
    factor: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<u8> {
    assert!(factor >= 1);
    if factor == 1 && out_w == width && out_h == height {
        return src.to_vec();
    }
    let mut out = vec![0u8; out_w * out_h * channels];
    let mut acc = vec![0u32; out_w * channels];
    for oy in 0..out_h {
        acc.iter_mut().for_each(|a| *a = 0);
        let y0 = oy * factor;
        let y1 = ((oy + 1) * factor).min(height);
        for y in y0..y1 {
            let row = &src[y * width * channels..(y + 1) * width * channels];
            for ox in 0..out_w {
                let x0 = ox * factor;
                let x1 = ((ox + 1) * factor).min(width);
                for x in x0..x1 {
                    for c in 0..channels {
                        acc[ox * channels + c] += u32::from(row[x * channels + c]);
                    }
                }
            }
        }
        for ox in 0..out_w {
            let x0 = ox * factor;
            let x1 = ((ox + 1) * factor).min(width);
            let n = ((y1 - y0) * (x1 - x0)) as u32;
            for c in 0..channels {
                let v = (acc[ox * channels + c] + n / 2) / n;
                out[(oy * out_w + ox) * channels + c] = v as u8;
            }
        }
    }
    out
}

impl RasterRGB {
    /// Box-downsamples by an integer factor to `floor(w / factor) x floor(h / factor)`.
    pub fn box_downsample(&self, factor: usize) -> RasterRGB {
        let (ow, oh) = (self.width / factor, self.height / factor);
        RasterRGB {
            width: ow,
            height: oh,
            pixels: box_downsample_u8(&self.pixels, self.width, self.height, 3, factor, ow, oh),
        }
    }
}

impl MaskRaster {
    /// Box-downsamples to `out_w x out_h` and re-binarizes: a cell is tissue
    /// when at least half of its (clipped) source window is tissue.
    pub fn box_downsample(&self, factor: usize, out_w: usize, out_h: usize) -> MaskRaster {
        assert!(factor >= 1);
        let mut out = vec![0u8; out_w * out_h];
        for oy in 0..out_h {
            let y0 = oy * factor;
            let y1 = ((oy + 1) * factor).min(self.height);
            for ox in 0..out_w {
                let x0 = ox * factor;
                let x1 = ((ox + 1) * factor).min(self.width);
                let mut ones = 0usize;
                for y in y0..y1 {
                    let row = &self.pixels[y * self.width..(y + 1) * self.width];
                    ones += row[x0..x1].iter().map(|&v| v as usize).sum::<usize>();
                }
                let n = (y1 - y0) * (x1 - x0);
                out[oy * out_w + ox] = u8::from(n > 0 && 2 * ones >= n);
            }
        }
        MaskRaster {
            width: out_w,
            height: out_h,
            pixels: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_length_is_checked() {
        assert!(RasterRGB::new(2, 2, vec![0; 11]).is_err());
        assert!(RasterRGB::new(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(MaskRaster::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn checkerboard_tie_goes_to_tissue() {
        let px: Vec<u8> = (0..16).map(|i| ((i % 4 + i / 4) % 2) as u8).collect();
        let m = MaskRaster::new(4, 4, px).unwrap();
        let d = m.box_downsample(2, 2, 2);
        assert_eq!(d.pixels(), &[1, 1, 1, 1]);
    }

    #[test]
    fn rgb_box_average_rounds_half_up() {
        // window {0, 1, 1, 1} averages 0.75 -> 1; {0, 0, 0, 1} -> 0.25 -> 0; {0,0,1,1} -> 0.5 -> 1
        let src = [0u8, 1, 1, 1];
        assert_eq!(box_downsample_u8(&src, 2, 2, 1, 2, 1, 1), vec![1]);
        assert_eq!(box_downsample_u8(&[0, 0, 0, 1], 2, 2, 1, 2, 1, 1), vec![0]);
        assert_eq!(box_downsample_u8(&[0, 0, 1, 1], 2, 2, 1, 2, 1, 1), vec![1]);
        assert_eq!(box_downsample_u8(&[10, 20, 30, 41], 2, 2, 1, 2, 1, 1), vec![25]);
    }
}
