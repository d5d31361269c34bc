//! Synthetic pedestrian scenes: waypoint-driven actors rendered as colored
//! ellipses, with nearer actors (larger pixel y) masking farther ones.
//!
//! Trajectories do not use the tracker's motion model, so ground truth is
//! independent of the model under test.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::RedRegionConfig;
use crate::coords::{homography_from_points, CalibrationPair, GroundPoint, Homography, PixelPoint};
use crate::error::{Error, Result};
use crate::foreground::{FrameMeasurements, Measurement};
use crate::metrics::TrackTable;
use crate::par;
use crate::rng::substream;

pub const MAX_SPEED: f64 = 2.5;

/// Default calibration: image corners of a 6 m × 4.5 m floor.
pub const DEFAULT_CALIBRATION: [[f64; 4]; 4] = [
    [40.0, 40.0, 0.0, 0.0],
    [320.0, 40.0, 6.0, 0.0],
    [350.0, 270.0, 6.0, 4.5],
    [10.0, 270.0, 0.0, 4.5],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub name: String,
    pub frames: u64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Seconds per frame.
    pub dt: f64,
    /// Rows of `px, py, gx, gy`.
    pub calibration: Vec<[f64; 4]>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            frames: 100,
            width: 360,
            height: 288,
            seed: 7,
            dt: 0.04,
            calibration: DEFAULT_CALIBRATION.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    /// Ground-truth id; several entries may share an id for re-entries.
    pub id: u64,
    pub entry_frame: u64,
    /// Last active frame, inclusive.
    pub exit_frame: u64,
    /// Ground waypoints, metres. The actor moves along them at constant speed.
    pub waypoints: Vec<[f64; 2]>,
    /// Ellipse semi-axes (x, y), pixels.
    #[serde(default = "default_radii")]
    pub radii: [f64; 2],
    pub color: [u8; 3],
    #[serde(default = "default_color_noise")]
    pub color_noise: f64,
}

fn default_radii() -> [f64; 2] {
    [12.0, 30.0]
}

fn default_color_noise() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub scenario: SceneParams,
    #[serde(default)]
    pub red_region: RedRegionConfig,
    #[serde(default, rename = "actor")]
    pub actors: Vec<ActorConfig>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn calibration_pairs(&self) -> Vec<CalibrationPair> {
        self.scenario
            .calibration
            .iter()
            .map(|c| CalibrationPair::new(c[0], c[1], c[2], c[3]))
            .collect()
    }

    pub fn homography(&self) -> Result<Homography> {
        homography_from_points(&self.calibration_pairs())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        let s = &self.scenario;
        if s.frames == 0 || s.width == 0 || s.height == 0 || !(s.dt > 0.0) {
            return bad(format!("scenario needs positive frames, size and dt: {s:?}"));
        }
        let h = self.homography()?;
        let region = self.red_region.region()?;
        let (lo, hi) = ground_bounds(&s.calibration);
        let at_door = |w: [f64; 2]| -> Result<bool> {
            let p = h.ground_to_pixel(GroundPoint::new(w[0], w[1]))?;
            Ok(region.contains(p.x, p.y))
        };
        for a in &self.actors {
            let tag = format!("actor {} (entry {})", a.id, a.entry_frame);
            if a.exit_frame < a.entry_frame || a.exit_frame >= s.frames {
                return bad(format!("{tag}: exit frame must lie in [entry, frames)"));
            }
            if a.waypoints.is_empty() {
                return bad(format!("{tag}: no waypoints"));
            }
            if !(a.radii[0] > 0.0 && a.radii[1] > 0.0) || !(a.color_noise >= 0.0) {
                return bad(format!("{tag}: radii must be positive and color noise nonnegative"));
            }
            for w in &a.waypoints {
                if w[0] < lo[0] || w[0] > hi[0] || w[1] < lo[1] || w[1] > hi[1] {
                    return bad(format!("{tag}: waypoint {w:?} outside the monitored area"));
                }
            }
            let length = path_length(&a.waypoints);
            let span = (a.exit_frame - a.entry_frame) as f64 * s.dt;
            if length > 0.0 && (span == 0.0 || length / span > MAX_SPEED + 1e-9) {
                return bad(format!("{tag}: speed exceeds {MAX_SPEED} m/s"));
            }
            if a.entry_frame > 0 && !at_door(a.waypoints[0])? {
                return bad(format!("{tag}: enters outside the entry region"));
            }
            if a.exit_frame + 1 < s.frames && !at_door(*a.waypoints.last().unwrap())? {
                return bad(format!("{tag}: exits outside the entry region"));
            }
        }
        for (i, a) in self.actors.iter().enumerate() {
            for b in &self.actors[i + 1..] {
                if a.id == b.id && a.entry_frame <= b.exit_frame && b.entry_frame <= a.exit_frame {
                    return bad(format!("actor {} has overlapping visits", a.id));
                }
            }
        }
        Ok(())
    }

    /// Ground position of every active actor at frame `k`, in config order.
    pub fn positions(&self, k: u64) -> Vec<(usize, [f64; 2])> {
        self.actors
            .iter()
            .enumerate()
            .filter(|(_, a)| a.entry_frame <= k && k <= a.exit_frame)
            .map(|(i, a)| (i, position_at(a, k)))
            .collect()
    }
}

fn ground_bounds(cal: &[[f64; 4]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in cal {
        for d in 0..2 {
            lo[d] = lo[d].min(c[2 + d]);
            hi[d] = hi[d].max(c[2 + d]);
        }
    }
    (lo, hi)
}

fn path_length(w: &[[f64; 2]]) -> f64 {
    w.windows(2).map(|p| (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1])).sum()
}

/// Constant-speed position along the waypoint polyline.
pub fn position_at(actor: &ActorConfig, k: u64) -> [f64; 2] {
    let w = &actor.waypoints;
    let total = path_length(w);
    if w.len() == 1 || total == 0.0 || actor.exit_frame == actor.entry_frame {
        return w[0];
    }
    let frac = (k.clamp(actor.entry_frame, actor.exit_frame) - actor.entry_frame) as f64
        / (actor.exit_frame - actor.entry_frame) as f64;
    let mut s = frac * total;
    for p in w.windows(2) {
        let len = (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]);
        if s <= len && len > 0.0 {
            let t = s / len;
            return [p[0][0] + t * (p[1][0] - p[0][0]), p[0][1] + t * (p[1][1] - p[0][1])];
        }
        s -= len;
    }
    *w.last().unwrap()
}

/// Pixels of an ellipse centered at `c`, clipped to the frame, in (y, x) order.
pub fn ellipse_pixels(c: PixelPoint, radii: [f64; 2], width: u32, height: u32) -> Vec<(u32, u32)> {
    let y0 = (c.y - radii[1]).ceil().max(0.0) as i64;
    let y1 = (c.y + radii[1]).floor().min(height as f64 - 1.0) as i64;
    let x0 = (c.x - radii[0]).ceil().max(0.0) as i64;
    let x1 = (c.x + radii[0]).floor().min(width as f64 - 1.0) as i64;
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f64 - c.x) / radii[0];
            let dy = (y as f64 - c.y) / radii[1];
            if dx * dx + dy * dy <= 1.0 {
                out.push((x as u32, y as u32));
            }
        }
    }
    out
}

/// Rendered output of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub frames: Vec<FrameMeasurements>,
    pub ground_truth: TrackTable,
}

/// Owner actor index of every covered pixel at frame `k` after masking.
pub fn owners(config: &ScenarioConfig, h: &Homography, k: u64) -> Result<BTreeMap<(u32, u32), usize>> {
    let s = &config.scenario;
    let mut active: Vec<(usize, PixelPoint)> = config
        .positions(k)
        .into_iter()
        .map(|(i, g)| Ok((i, h.ground_to_pixel(GroundPoint::new(g[0], g[1]))?)))
        .collect::<Result<_>>()?;
    // far to near; ties by config order
    active.sort_by(|a, b| a.1.y.total_cmp(&b.1.y).then(a.0.cmp(&b.0)));
    // keyed by (y, x) for scan order
    let mut owner = BTreeMap::new();
    for (i, c) in active {
        for (x, y) in ellipse_pixels(c, config.actors[i].radii, s.width, s.height) {
            owner.insert((y, x), i);
        }
    }
    Ok(owner)
}

fn render_frame(config: &ScenarioConfig, h: &Homography, k: u64) -> Result<FrameMeasurements> {
    let owner = owners(config, h, k)?;
    let mut rng = substream(config.scenario.seed, "render", k);
    let ms = owner
        .into_iter()
        .map(|((y, x), i)| {
            let a = &config.actors[i];
            let rgb = jitter(a.color, a.color_noise, &mut rng);
            Measurement::new(x, y, rgb)
        })
        .collect();
    Ok(FrameMeasurements::new(k, ms))
}

fn jitter<R: Rng>(base: [u8; 3], std: f64, rng: &mut R) -> [u8; 3] {
    if std == 0.0 {
        return base;
    }
    let n = Normal::new(0.0, std).expect("std is nonnegative");
    base.map(|c| (c as f64 + n.sample(rng)).round().clamp(0.0, 255.0) as u8)
}

/// Renders every frame and the matching ground truth.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let h = config.homography()?;
    let frames = par::map_range(config.scenario.frames as usize, |k| render_frame(config, &h, k as u64))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut ground_truth = TrackTable::new();
    for k in 0..config.scenario.frames {
        let mut rows: Vec<(u64, f64, f64)> = config
            .positions(k)
            .into_iter()
            .map(|(i, g)| (config.actors[i].id, g[0], g[1]))
            .collect();
        rows.sort_by_key(|r| r.0);
        if !rows.is_empty() {
            ground_truth.insert(k, rows);
        }
    }
    Ok(Scenario { frames, ground_truth })
}

/// Ground point under the red region center for the default calibration.
pub fn door(config: &ScenarioConfig) -> Result<[f64; 2]> {
    let c = config.red_region.center;
    let g = config.homography()?.pixel_to_ground(PixelPoint::new(c[0], c[1]))?;
    Ok([g.x, g.y])
}

pub const PRESETS: [&str; 4] = ["single_walk", "two_cross", "three_cross_reentry", "five_corridor"];

const COLORS: [[u8; 3]; 5] = [[200, 40, 40], [40, 60, 200], [40, 170, 60], [210, 190, 40], [170, 50, 170]];

fn actor(id: u64, entry: u64, exit: u64, waypoints: Vec<[f64; 2]>, color: usize) -> ActorConfig {
    ActorConfig {
        id,
        entry_frame: entry,
        exit_frame: exit,
        waypoints,
        radii: default_radii(),
        color: COLORS[color],
        color_noise: default_color_noise(),
    }
}

fn scene(name: &str, frames: u64) -> ScenarioConfig {
    ScenarioConfig {
        scenario: SceneParams {
            name: name.into(),
            frames,
            ..SceneParams::default()
        },
        ..ScenarioConfig::default()
    }
}

/// Looks up a shipped scenario by name.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let mut cfg = scene(name, 0);
    let d = door(&cfg).expect("default calibration is valid");
    match name {
        "single_walk" => {
            cfg.scenario.frames = 200;
            cfg.actors = vec![actor(1, 0, 199, vec![[1.5, 1.0], [4.5, 1.0], [4.5, 3.5], [2.0, 3.5]], 0)];
        }
        "two_cross" => {
            cfg.scenario.frames = 300;
            cfg.actors = vec![
                actor(1, 0, 299, vec![[1.0, 1.6], [5.2, 1.6], [5.2, 0.6], [3.5, 0.6]], 0),
                actor(2, 0, 299, vec![[5.2, 2.2], [1.0, 2.2], [1.0, 3.8], [2.5, 3.8]], 1),
            ];
        }
        "three_cross_reentry" => {
            cfg.scenario.frames = 500;
            cfg.actors = vec![
                actor(1, 0, 499, vec![[3.0, 0.8], [5.2, 0.8], [5.2, 3.8], [3.0, 3.8], [3.0, 0.8], [5.2, 0.8]], 0),
                actor(2, 40, 260, vec![d, [2.0, d[1]], [4.2, d[1]], [2.0, d[1]], d], 1),
                actor(3, 120, 499, vec![d, [1.8, d[1]], [1.8, 3.8], [2.6, 3.8], [2.6, 1.0], [1.8, 1.0], [1.8, 3.0]], 2),
                actor(2, 330, 499, vec![d, [2.2, d[1]], [4.0, 3.0], [4.0, 1.5]], 1),
            ];
        }
        "five_corridor" => {
            cfg.scenario.frames = 400;
            cfg.actors = vec![
                actor(1, 0, 399, vec![[1.5, 0.6], [5.5, 0.6], [1.5, 0.6]], 0),
                actor(2, 0, 399, vec![[5.5, 1.4], [1.5, 1.4], [5.5, 1.4]], 1),
                actor(3, 0, 399, vec![[2.0, 3.0], [5.5, 3.0], [2.0, 3.0]], 2),
                actor(4, 50, 399, vec![d, [2.0, d[1]], [5.0, 2.2], [2.0, 2.2]], 3),
                actor(5, 120, 399, vec![d, [1.5, d[1]], [1.5, 4.0], [5.5, 4.0]], 4),
            ];
        }
        _ => return None,
    }
    Some(cfg)
}

/// Every preset, in `PRESETS` order.
pub fn preset_scenarios() -> Vec<ScenarioConfig> {
    PRESETS.iter().map(|n| preset(n).expect("listed preset exists")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in preset_scenarios() {
            p.validate().unwrap_or_else(|e| panic!("{}: {e}", p.scenario.name));
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn stationary_actor_repeats() {
        let mut cfg = scene("still", 10);
        cfg.actors = vec![actor(1, 0, 9, vec![[3.0, 2.0]], 0)];
        cfg.actors[0].color_noise = 0.0;
        let s = generate(&cfg).unwrap();
        let h = cfg.homography().unwrap();
        let c = h.ground_to_pixel(GroundPoint::new(3.0, 2.0)).unwrap();
        for f in &s.frames {
            assert_eq!(f.measurements, s.frames[0].measurements);
        }
        let n = s.frames[0].len() as f64;
        let mx = s.frames[0].measurements.iter().map(|m| m.x as f64).sum::<f64>() / n;
        let my = s.frames[0].measurements.iter().map(|m| m.y as f64).sum::<f64>() / n;
        assert!((mx - c.x).abs() <= 0.5 && (my - c.y).abs() <= 0.5, "{mx},{my} vs {c:?}");
    }

    #[test]
    fn position_interpolates() {
        let a = actor(1, 10, 20, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 0);
        assert_eq!(position_at(&a, 10), [0.0, 0.0]);
        assert_eq!(position_at(&a, 15), [1.0, 0.0]);
        assert_eq!(position_at(&a, 20), [1.0, 1.0]);
    }

    #[test]
    fn too_fast_rejected() {
        let mut cfg = scene("fast", 10);
        cfg.actors = vec![actor(1, 0, 9, vec![[0.5, 0.5], [5.5, 0.5]], 0)];
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn entry_away_from_door_rejected() {
        let mut cfg = scene("bad", 100);
        cfg.actors = vec![actor(1, 5, 99, vec![[3.0, 3.0]], 0)];
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn toml_round_trip() {
        let p = preset("two_cross").unwrap();
        let back = ScenarioConfig::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(back, p);
    }
}
