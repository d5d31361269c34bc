//! Foreground measurements: the per-frame set of moving-object pixels.
//!
//! Pixels either come from a measurement file or from a static-background
//! subtractor using color-distance and brightness-ratio tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One foreground pixel: integer image coordinates plus its RGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Measurement {
    pub x: u32,
    pub y: u32,
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Measurement {
    pub fn new(x: u32, y: u32, rgb: [u8; 3]) -> Self {
        Self {
            x,
            y,
            r: rgb[0],
            g: rgb[1],
            b: rgb[2],
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x as f64, self.y as f64)
    }

    pub fn rgb(&self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMeasurements {
    pub frame_index: u64,
    pub measurements: Vec<Measurement>,
    /// Stride of an earlier downsampling pass, if any.
    pub downsampled_stride: Option<usize>,
}

impl FrameMeasurements {
    pub fn new(frame_index: u64, measurements: Vec<Measurement>) -> Self {
        Self {
            frame_index,
            measurements,
            downsampled_stride: None,
        }
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.measurements.iter().map(Measurement::position).collect()
    }
}

/// Dense RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbGrid {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbGrid {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width;
        self.pixels[(y * w + x) as usize] = rgb;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubtractorParams {
    /// Color distance threshold (RGB units).
    pub color_threshold: f64,
    /// Lower brightness-ratio bound; darker ratios count as foreground.
    pub shadow_bound: f64,
    /// Upper brightness-ratio bound; brighter ratios count as foreground.
    pub highlight_bound: f64,
}

impl Default for SubtractorParams {
    fn default() -> Self {
        Self {
            color_threshold: 20.0,
            shadow_bound: 0.5,
            highlight_bound: 2.0,
        }
    }
}

impl SubtractorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.color_threshold > 0.0
            && 0.0 < self.shadow_bound
            && self.shadow_bound < 1.0
            && 1.0 < self.highlight_bound)
        {
            return Err(Error::ConfigInvalid(format!(
                "subtractor needs eps > 0 and 0 < alpha < 1 < beta, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn norm(c: [u8; 3]) -> f64 {
    c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
}

/// Per-pixel static background subtraction.
///
/// A pixel is foreground when its RGB distance to the background exceeds the
/// color threshold and its brightness ratio falls outside
/// `[shadow_bound, highlight_bound]`.
pub fn subtract_background(
    frame_index: u64,
    frame: &RgbGrid,
    background: &RgbGrid,
    params: &SubtractorParams,
) -> Result<FrameMeasurements> {
    if frame.width != background.width || frame.height != background.height {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", background.width, background.height),
            actual: format!("{}x{}", frame.width, frame.height),
        });
    }
    params.validate()?;
    let mut out = Vec::new();
    for y in 0..frame.height {
        for x in 0..frame.width {
            let f = frame.get(x, y);
            let bg = background.get(x, y);
            let dist = f
                .iter()
                .zip(bg.iter())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist <= params.color_threshold {
                continue;
            }
            let bg_norm = norm(bg);
            let ratio = if bg_norm > 0.0 {
                norm(f) / bg_norm
            } else {
                f64::INFINITY
            };
            if ratio < params.shadow_bound || ratio > params.highlight_bound {
                out.push(Measurement::new(x, y, f));
            }
        }
    }
    Ok(FrameMeasurements::new(frame_index, out))
}

/// Distance at or below which downsampling kicks in, metres.
pub const DOWNSAMPLE_TRIGGER_M: f64 = 0.80;

/// Keeps every `stride`-th measurement in (y, x) scan order when the closest
/// pair of targets is within 80 cm; otherwise returns the frame unchanged.
///
/// A frame already reduced with the same stride is returned as is.
pub fn downsample(
    frame: &FrameMeasurements,
    min_inter_target_distance: f64,
    stride: usize,
) -> FrameMeasurements {
    let stride = stride.max(1);
    if min_inter_target_distance > DOWNSAMPLE_TRIGGER_M
        || frame.downsampled_stride == Some(stride)
    {
        return frame.clone();
    }
    let mut sorted = frame.measurements.clone();
    sorted.sort_by_key(|m| (m.y, m.x));
    let kept = sorted.into_iter().step_by(stride).collect();
    FrameMeasurements {
        frame_index: frame.frame_index,
        measurements: kept,
        downsampled_stride: Some(stride),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_have_no_foreground() {
        let bg = RgbGrid::filled(8, 6, [40, 50, 60]);
        let out = subtract_background(0, &bg, &bg, &SubtractorParams::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn single_bright_pixel_is_detected() {
        let bg = RgbGrid::filled(5, 5, [0, 0, 15]);
        let mut frame = bg.clone();
        // distance 30, brightness ratio 3
        frame.set(2, 3, [0, 0, 45]);
        let out = subtract_background(4, &frame, &bg, &SubtractorParams::default()).unwrap();
        assert_eq!(out.measurements, vec![Measurement::new(2, 3, [0, 0, 45])]);
        assert_eq!(out.frame_index, 4);
    }

    #[test]
    fn ratio_inside_bounds_is_background() {
        // distance 30 but ratio 1.5 lies within [0.5, 2]
        let bg = RgbGrid::filled(2, 2, [0, 0, 60]);
        let mut frame = bg.clone();
        frame.set(0, 0, [0, 0, 90]);
        let out = subtract_background(0, &frame, &bg, &SubtractorParams::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn full_foreground() {
        let bg = RgbGrid::filled(7, 3, [100, 100, 100]);
        let frame = RgbGrid::filled(7, 3, [255, 255, 255]);
        let out = subtract_background(0, &frame, &bg, &SubtractorParams::default()).unwrap();
        assert_eq!(out.len(), 21);
    }

    #[test]
    fn dimension_mismatch() {
        let bg = RgbGrid::filled(7, 3, [0, 0, 0]);
        let frame = RgbGrid::filled(3, 7, [0, 0, 0]);
        assert!(matches!(
            subtract_background(0, &frame, &bg, &SubtractorParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn block(n: usize) -> FrameMeasurements {
        let w = 200u32;
        let ms = (0..n as u32)
            .map(|i| Measurement::new(i % w, i / w, [1, 2, 3]))
            .collect();
        FrameMeasurements::new(225, ms)
    }

    #[test]
    fn far_targets_leave_frame_untouched() {
        let f = block(11439);
        let out = downsample(&f, 2.2733, 9);
        assert_eq!(out, f);
    }

    #[test]
    fn close_targets_reduce_by_stride() {
        let out = downsample(&block(17792), 0.5, 9);
        assert_eq!(out.len(), 1977);
        assert_eq!(out.downsampled_stride, Some(9));
    }

    #[test]
    fn empty_stays_empty() {
        let out = downsample(&FrameMeasurements::default(), 0.1, 9);
        assert!(out.is_empty());
    }

    #[test]
    fn repeat_with_same_stride_is_noop() {
        let once = downsample(&block(1000), 0.3, 4);
        let twice = downsample(&once, 0.3, 4);
        assert_eq!(once, twice);
    }
}
