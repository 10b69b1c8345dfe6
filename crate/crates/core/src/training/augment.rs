//! Photometric augmentation: hue rotation and saturation scaling in HSV,
//! then contrast about the image mean and brightness scaling in RGB.
//! Masks are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterRGB;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    /// Maximum absolute hue rotation, degrees.
    pub hue_shift_max: f64,
    pub sat_scale: [f64; 2],
    pub contrast_scale: [f64; 2],
    pub brightness_scale: [f64; 2],
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            hue_shift_max: 18.0,
            sat_scale: [0.75, 1.25],
            contrast_scale: [0.75, 1.25],
            brightness_scale: [0.75, 1.25],
        }
    }
}

impl AugmentRanges {
    /// Ranges that always produce the identity transform.
    pub fn none() -> Self {
        Self {
            hue_shift_max: 0.0,
            sat_scale: [1.0, 1.0],
            contrast_scale: [1.0, 1.0],
            brightness_scale: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..180.0).contains(&self.hue_shift_max) {
            return Err(Error::Config(format!(
                "hue_shift_max {} outside [0, 180)",
                self.hue_shift_max
            )));
        }
        for (name, [lo, hi]) in [
            ("sat_scale", self.sat_scale),
            ("contrast_scale", self.contrast_scale),
            ("brightness_scale", self.brightness_scale),
        ] {
            if !(lo >= 0.0 && lo <= 1.0 && hi >= 1.0) {
                return Err(Error::Config(format!(
                    "{name} [{lo}, {hi}] must be non-negative and contain 1.0"
                )));
            }
        }
        Ok(())
    }

    /// Maps four uniform draws in [0, 1) to concrete parameters.
    pub fn params_from_draw(&self, draw: [f64; 4]) -> AugmentParams {
        let lerp = |[lo, hi]: [f64; 2], u: f64| lo + u * (hi - lo);
        AugmentParams {
            hue_shift_deg: (2.0 * draw[0] - 1.0) * self.hue_shift_max,
            sat_scale: lerp(self.sat_scale, draw[1]),
            contrast_scale: lerp(self.contrast_scale, draw[2]),
            brightness_scale: lerp(self.brightness_scale, draw[3]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hue_shift_deg: f64,
    pub sat_scale: f64,
    pub contrast_scale: f64,
    pub brightness_scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        hue_shift_deg: 0.0,
        sat_scale: 1.0,
        contrast_scale: 1.0,
        brightness_scale: 1.0,
    };
}

/// RGB in [0, 1] to (hue degrees, saturation, value).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

pub fn augment_with(image: &RasterRGB, p: &AugmentParams) -> RasterRGB {
    let src = image.pixels();
    let mut work: Vec<f64> = Vec::with_capacity(src.len());
    for px in src.chunks_exact(3) {
        let (h, s, v) = rgb_to_hsv(
            f64::from(px[0]) / 255.0,
            f64::from(px[1]) / 255.0,
            f64::from(px[2]) / 255.0,
        );
        let h = (h + p.hue_shift_deg).rem_euclid(360.0);
        let s = (s * p.sat_scale).clamp(0.0, 1.0);
        let (r, g, b) = hsv_to_rgb(h, s, v);
        work.extend_from_slice(&[r * 255.0, g * 255.0, b * 255.0]);
    }
    let mean = work.iter().sum::<f64>() / work.len().max(1) as f64;
    let out = work
        .iter()
        .map(|&v| {
            let v = ((v - mean) * p.contrast_scale + mean) * p.brightness_scale;
            v.clamp(0.0, 255.0).round() as u8
        })
        .collect();
    RasterRGB::new(image.width(), image.height(), out).expect("same dimensions")
}

/// Applies the augmentation selected by four uniform draws.
pub fn augment(image: &RasterRGB, ranges: &AugmentRanges, draw: [f64; 4]) -> RasterRGB {
    augment_with(image, &ranges.params_from_draw(draw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_parameters() {
        let px: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = RasterRGB::new(4, 4, px).unwrap();
        assert_eq!(augment_with(&img, &AugmentParams::IDENTITY), img);
        // draw 0.5 on hue and any draw on degenerate intervals
        assert_eq!(augment(&img, &AugmentRanges::none(), [0.5, 0.3, 0.9, 0.1]), img);
    }

    #[test]
    fn brightness_on_gray() {
        let img = RasterRGB::filled(3, 3, [100, 100, 100]);
        let p = AugmentParams {
            brightness_scale: 1.25,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(augment_with(&img, &p), RasterRGB::filled(3, 3, [125, 125, 125]));
    }

    #[test]
    fn hue_is_periodic() {
        let px: Vec<u8> = (0..5 * 5 * 3).map(|i| (i * 53 % 256) as u8).collect();
        let img = RasterRGB::new(5, 5, px).unwrap();
        let p0 = AugmentParams::IDENTITY;
        let p360 = AugmentParams {
            hue_shift_deg: 360.0,
            ..p0
        };
        assert_eq!(augment_with(&img, &p0), augment_with(&img, &p360));
    }

    #[test]
    fn pure_hue_rotation() {
        // red rotated by 120 degrees is green
        let img = RasterRGB::filled(2, 1, [255, 0, 0]);
        let p = AugmentParams {
            hue_shift_deg: 120.0,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(augment_with(&img, &p).get(0, 0), [0, 255, 0]);
    }

    #[test]
    fn ranges_must_contain_one() {
        let mut r = AugmentRanges::default();
        r.sat_scale = [1.1, 1.3];
        assert!(r.validate().is_err());
        let mut r = AugmentRanges::default();
        r.hue_shift_max = 180.0;
        assert!(r.validate().is_err());
        AugmentRanges::default().validate().unwrap();
    }
}
