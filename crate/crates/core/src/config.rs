//! Run configuration, one TOML table per subsystem.

use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::association::AssociationParams;
use crate::error::{Error, Result};
use crate::metrics::MetricsParams;
use crate::socialforce::ForceParams;
use crate::tracker::lifecycle::{LifecycleParams, RedRegion};
use crate::vbcluster::ClusteringConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub n_particles: usize,
    pub frame_width: u32,
    pub frame_height: u32,
    pub downsample: bool,
    pub downsample_stride: usize,
    /// Position noise of freshly spawned particles, metres.
    pub init_pos_noise: f64,
    /// Velocity noise of freshly spawned particles, m/s.
    pub init_vel_noise: f64,
    /// Red-region Mahalanobis distance a target must clear before it may die.
    pub arm_radius: f64,
    /// Frames a departed target keeps suppressing births at the door.
    pub ghost_frames: u64,
    /// Most data-driven prior means used on the first frame.
    pub bootstrap_components: usize,
    /// First-frame seeds closer than this to an earlier seed are dropped, pixels.
    pub bootstrap_separation: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            n_particles: 60,
            frame_width: 360,
            frame_height: 288,
            downsample: true,
            downsample_stride: 9,
            init_pos_noise: 0.05,
            init_vel_noise: 0.2,
            arm_radius: 4.0,
            ghost_frames: 50,
            bootstrap_components: 8,
            bootstrap_separation: 70.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedRegionConfig {
    /// Pixel center.
    pub center: [f64; 2],
    /// Pixel covariance, row-major.
    pub covariance: [[f64; 2]; 2],
    /// Mahalanobis radius of the membership cutoff.
    pub radius: f64,
}

impl Default for RedRegionConfig {
    fn default() -> Self {
        Self {
            center: [30.0, 150.0],
            covariance: [[225.0, 0.0], [0.0, 625.0]],
            radius: 2.0,
        }
    }
}

impl RedRegionConfig {
    pub fn region(&self) -> Result<RedRegion> {
        let c = self.covariance;
        RedRegion::new(
            Vector2::new(self.center[0], self.center[1]),
            Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]),
            self.radius,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub tracker: TrackerParams,
    pub lifecycle: LifecycleParams,
    pub red_region: RedRegionConfig,
    pub social_force: ForceParams,
    pub clustering: ClusteringConfig,
    pub association: AssociationParams,
    pub metrics: MetricsParams,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tracker;
        if t.n_particles == 0 || t.frame_width == 0 || t.frame_height == 0 || t.downsample_stride == 0 {
            return Err(Error::ConfigInvalid(format!("tracker: {t:?}")));
        }
        if !(t.init_pos_noise >= 0.0 && t.init_vel_noise >= 0.0 && t.arm_radius > 0.0) {
            return Err(Error::ConfigInvalid(format!("tracker: {t:?}")));
        }
        self.lifecycle.validate()?;
        self.red_region.region()?;
        self.social_force.validate()?;
        self.clustering.validate()?;
        self.association.validate()?;
        self.metrics.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn round_trip() {
        let mut c = Config::default();
        c.association.clutter_density = Some(1e-4);
        c.tracker.n_particles = 30;
        assert_eq!(Config::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn sections_override_fields() {
        let c = Config::from_toml_str("[social_force]\nf_r = 250.0\n[lifecycle]\nthr = 0.6\n").unwrap();
        assert_eq!(c.social_force.f_r, 250.0);
        assert_eq!(c.lifecycle.thr, 0.6);
        assert_eq!(c.social_force.f_a, 500.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(Config::from_toml_str("[tracker]\nbogus = 1\n"), Err(Error::ConfigInvalid(_))));
        assert!(matches!(Config::from_toml_str("[lifecycle]\nthr = 1.5\n"), Err(Error::ConfigInvalid(_))));
    }
}
