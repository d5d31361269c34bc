//! Target birth and death through the known entry/exit ("red") region.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foreground::Measurement;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifecycleParams {
    /// Probability threshold for a count change.
    pub thr: f64,
    /// Pixel constant of the red-region cluster probability.
    pub delta_p: f64,
    /// Distance constant of the existing-target probability, metres.
    pub delta_d: f64,
}

impl Default for LifecycleParams {
    fn default() -> Self {
        Self {
            thr: 0.5,
            delta_p: 300.0,
            delta_d: 0.5,
        }
    }
}

impl LifecycleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.thr > 0.0 && self.thr < 1.0 && self.delta_p > 0.0 && self.delta_d > 0.0) {
            return Err(Error::ConfigInvalid(format!("lifecycle: {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian model of the entry/exit region in pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedRegion {
    pub mu: Vector2<f64>,
    pub sigma: Matrix2<f64>,
    sigma_inv: Matrix2<f64>,
    /// Mahalanobis radius whose density is the membership cutoff.
    pub radius: f64,
}

impl RedRegion {
    pub fn new(mu: Vector2<f64>, sigma: Matrix2<f64>, radius: f64) -> Result<Self> {
        let symmetric = (sigma[(0, 1)] - sigma[(1, 0)]).abs() <= 1e-12 * sigma.abs().max();
        let spd = sigma[(0, 0)] > 0.0 && sigma.determinant() > 0.0;
        if !(symmetric && spd && radius > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "red region covariance must be SPD, got {sigma:?}"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            sigma_inv: sigma.try_inverse().expect("SPD matrix is invertible"),
            radius,
        })
    }

    pub fn mahalanobis(&self, x: f64, y: f64) -> f64 {
        let d = Vector2::new(x, y) - self.mu;
        (d.transpose() * self.sigma_inv * d)[0].sqrt()
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        let m = self.mahalanobis(x, y);
        (-0.5 * m * m).exp() / (std::f64::consts::TAU * self.sigma.determinant().sqrt())
    }

    /// Density at the membership radius.
    pub fn membership_threshold(&self) -> f64 {
        (-0.5 * self.radius * self.radius).exp()
            / (std::f64::consts::TAU * self.sigma.determinant().sqrt())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.density(x, y) > self.membership_threshold()
    }
}

/// Indices of the measurements whose region density exceeds the cutoff.
pub fn red_region_cluster(measurements: &[Measurement], region: &RedRegion) -> Vec<usize> {
    measurements
        .iter()
        .enumerate()
        .filter(|(_, m)| region.contains(m.x as f64, m.y as f64))
        .map(|(j, _)| j)
        .collect()
}

/// Probability that a cluster is present given its pixel count.
pub fn p_cluster(n_p: usize, params: &LifecycleParams) -> f64 {
    1.0 - (-(n_p as f64) / params.delta_p).exp()
}

/// Probability that the region cluster comes from an existing target at
/// distance `d_min`; zero without targets.
pub fn p_existing(d_min: Option<f64>, params: &LifecycleParams) -> f64 {
    d_min.map_or(0.0, |d| (-d / params.delta_d).exp())
}

pub fn p_death(n_p: usize, d_min: Option<f64>, params: &LifecycleParams) -> f64 {
    if d_min.is_none() {
        return 0.0;
    }
    p_cluster(n_p, params) * p_existing(d_min, params)
}

pub fn p_birth(n_p: usize, d_min: Option<f64>, params: &LifecycleParams) -> f64 {
    p_cluster(n_p, params) * (1.0 - p_existing(d_min, params))
}

/// Count change: -1, 0 or +1. A death never takes the count below zero.
pub fn update_count(n_prev: usize, p_birth: f64, p_death: f64, thr: f64) -> (usize, i32) {
    if p_death > p_birth && p_death > thr && n_prev > 0 {
        (n_prev - 1, -1)
    } else if p_birth > p_death && p_birth > thr {
        (n_prev + 1, 1)
    } else {
        (n_prev, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> RedRegion {
        RedRegion::new(Vector2::new(30.0, 150.0), Matrix2::new(225.0, 0.0, 0.0, 625.0), 2.0).unwrap()
    }

    #[test]
    fn region_membership() {
        let r = region();
        let near: Vec<_> = (0..10).map(|k| Measurement::new(28 + k % 5, 148 + k / 5, [0, 0, 0])).collect();
        assert_eq!(red_region_cluster(&near, &r).len(), 10);
        let far = [Measurement::new(200, 150, [0, 0, 0])];
        assert!(red_region_cluster(&far, &r).is_empty());
        assert!(red_region_cluster(&[], &r).is_empty());
        assert!(RedRegion::new(Vector2::zeros(), Matrix2::new(1.0, 2.0, 2.0, 1.0), 2.0).is_err());
    }

    #[test]
    fn death_probabilities() {
        let p = LifecycleParams::default();
        assert_eq!(p_death(0, Some(0.1), &p), 0.0);
        let e = (-1f64).exp();
        assert!((p_death(300, Some(0.5), &p) - (1.0 - e) * e).abs() < 1e-12);
        assert!(p_death(1_000_000, Some(0.0), &p) > 1.0 - 1e-12);
        assert_eq!(p_death(1000, None, &p), 0.0);
    }

    #[test]
    fn birth_probabilities() {
        let p = LifecycleParams::default();
        assert!((p_birth(300, None, &p) - (1.0 - (-1f64).exp())).abs() < 1e-12);
        assert_eq!(p_birth(300, Some(0.0), &p), 0.0);
        assert_eq!(p_birth(0, None, &p), 0.0);
    }

    #[test]
    fn count_rule() {
        assert_eq!(update_count(2, 0.3, 0.2, 0.5), (2, 0));
        assert_eq!(update_count(2, 0.8, 0.1, 0.5), (3, 1));
        assert_eq!(update_count(2, 0.2, 0.9, 0.5), (1, -1));
        assert_eq!(update_count(0, 0.2, 0.9, 0.5), (0, 0));
    }
}
