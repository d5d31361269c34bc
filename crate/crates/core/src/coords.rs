//! Planar homography between the image pixel plane and the ground plane.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point in the image, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

/// Point on the ground plane, metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl GroundPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &GroundPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub pixel: PixelPoint,
    pub ground: GroundPoint,
}

impl CalibrationPair {
    pub fn new(px: f64, py: f64, gx: f64, gy: f64) -> Self {
        Self {
            pixel: PixelPoint::new(px, py),
            ground: GroundPoint::new(gx, gy),
        }
    }
}

/// Projective map pixel -> ground with its cached inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

const MIN_W: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
            inverse: Matrix3::identity(),
        }
    }

    /// Builds a homography from a pixel->ground matrix. The matrix is rescaled
    /// so that its bottom-right entry is 1.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self> {
        let h22 = matrix[(2, 2)];
        if h22.abs() < MIN_W {
            return Err(Error::DegenerateConfiguration(
                "bottom-right entry is zero".into(),
            ));
        }
        let matrix = matrix / h22;
        if matrix.determinant().abs() <= 1e-12 {
            return Err(Error::DegenerateConfiguration(
                "matrix is not invertible".into(),
            ));
        }
        let inverse = matrix
            .try_inverse()
            .ok_or_else(|| Error::DegenerateConfiguration("matrix is not invertible".into()))?;
        Ok(Self { matrix, inverse })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn pixel_to_ground(&self, p: PixelPoint) -> Result<GroundPoint> {
        let (x, y) = apply(&self.matrix, p.x, p.y)?;
        Ok(GroundPoint::new(x, y))
    }

    pub fn ground_to_pixel(&self, g: GroundPoint) -> Result<PixelPoint> {
        let (x, y) = apply(&self.inverse, g.x, g.y)?;
        Ok(PixelPoint::new(x, y))
    }

    /// Pixel-plane velocity of a ground state, by differencing projected
    /// positions one time step apart.
    pub fn ground_velocity_to_pixel(
        &self,
        position: GroundPoint,
        velocity: (f64, f64),
        dt: f64,
    ) -> Result<(f64, f64)> {
        let a = self.ground_to_pixel(position)?;
        let b = self.ground_to_pixel(GroundPoint::new(
            position.x + velocity.0 * dt,
            position.y + velocity.1 * dt,
        ))?;
        Ok(((b.x - a.x) / dt, (b.y - a.y) / dt))
    }
}

fn apply(m: &Matrix3<f64>, x: f64, y: f64) -> Result<(f64, f64)> {
    let v = m * Vector3::new(x, y, 1.0);
    if v.z.abs() < MIN_W || !v.z.is_finite() {
        return Err(Error::PointAtInfinity(v.z));
    }
    Ok((v.x / v.z, v.y / v.z))
}

/// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
fn normalizer(points: &[(f64, f64); 4]) -> Matrix3<f64> {
    let cx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let mean_dist = points
        .iter()
        .map(|p| (p.0 - cx).hypot(p.1 - cy))
        .sum::<f64>()
        / 4.0;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn has_collinear_triple(points: &[(f64, f64); 4]) -> bool {
    let extent = points
        .iter()
        .flat_map(|a| points.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1)))
        .fold(0.0_f64, f64::max);
    let tol = 1e-9 * extent * extent;
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let (a, b, c) = (points[i], points[j], points[k]);
                let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                if cross.abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Four-point homography mapping each calibration pixel onto its ground point.
pub fn homography_from_points(pairs: &[CalibrationPair]) -> Result<Homography> {
    if pairs.len() != 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "need exactly 4 calibration pairs, got {}",
            pairs.len()
        )));
    }
    let src: [(f64, f64); 4] = std::array::from_fn(|i| (pairs[i].pixel.x, pairs[i].pixel.y));
    let dst: [(f64, f64); 4] = std::array::from_fn(|i| (pairs[i].ground.x, pairs[i].ground.y));
    if src.iter().chain(dst.iter()).any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::DegenerateConfiguration(
            "non-finite calibration coordinate".into(),
        ));
    }
    if has_collinear_triple(&src) {
        return Err(Error::DegenerateConfiguration(
            "three pixel points are collinear".into(),
        ));
    }

    let ts = normalizer(&src);
    let td = normalizer(&dst);
    let norm = |t: &Matrix3<f64>, p: (f64, f64)| {
        let v = t * Vector3::new(p.0, p.1, 1.0);
        (v.x, v.y)
    };

    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = norm(&ts, src[i]);
        let (u, v) = norm(&td, dst[i]);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        b[r] = u;
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::DegenerateConfiguration("calibration system is singular".into()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("ground points coincide".into()))?;
    Homography::from_matrix(td_inv * hn * ts)
}
