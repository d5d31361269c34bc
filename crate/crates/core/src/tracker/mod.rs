//! Per-frame tracking loop: prediction, clustering, target-count update,
//! association, particle weighting, estimation and resampling.

pub mod lifecycle;

use std::time::Instant;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::association::{
    association_probabilities, clutter_scores, color_histogram, cost_matrix,
    murty_kbest_with_clutter, occlusion_probability, particle_log_likelihoods, AssociationMatrix,
    ClusterView, ColorHistogram, TargetView,
};
use crate::config::Config;
use crate::coords::{GroundPoint, Homography, PixelPoint};
use crate::error::{Error, Result};
use crate::foreground::{downsample, FrameMeasurements, Measurement};
use crate::par;
use crate::rng::substream;
use crate::socialforce::{build_links, predict_particles, GroundState};
use crate::vbcluster::{self, farthest_point_seeds, init_priors, ClusterSet};

use lifecycle::{p_birth, p_death, red_region_cluster, update_count, RedRegion};

#[derive(Debug, Clone)]
pub struct Target {
    pub id: u64,
    pub particles: Vec<GroundState>,
    pub weights: Vec<f64>,
    pub estimate: GroundState,
    pub reference: ColorHistogram,
    pub birth_frame: u64,
    /// Set once the target has been seen clear of the red region; only
    /// armed targets can die.
    pub armed: bool,
}

impl Target {
    fn mean_state(&self) -> GroundState {
        weighted_mean(&self.particles, &self.weights)
    }
}

fn weighted_mean(particles: &[GroundState], weights: &[f64]) -> GroundState {
    let mut s = GroundState::default();
    for (p, w) in particles.iter().zip(weights) {
        s.position += *w * p.position;
        s.velocity += *w * p.velocity;
    }
    s
}

/// Recently departed target that still accounts for pixels at the door.
#[derive(Debug, Clone, Copy)]
struct Ghost {
    position: Vector2<f64>,
    frames_left: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEstimate {
    pub id: u64,
    pub ground: GroundPoint,
    pub velocity: (f64, f64),
    pub pixel: PixelPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub id: usize,
    pub mean: (f64, f64),
    pub pixel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub measurements: usize,
    pub clustered_measurements: usize,
    pub downsampled: bool,
    pub vb_iterations: usize,
    pub lower_bound: f64,
    pub hypotheses: usize,
    pub p_birth: f64,
    pub p_death: f64,
    pub count_change: i32,
    pub degraded: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: u64,
    pub estimates: Vec<TargetEstimate>,
    pub clusters: Vec<ClusterSummary>,
    /// (cluster id, x, y) for every clustered pixel.
    pub cluster_pixels: Vec<(usize, u32, u32)>,
    /// Target ids in the row order of `association`.
    pub association_ids: Vec<u64>,
    pub association: AssociationMatrix,
    /// Prior component means the clustering started from, pixels.
    pub prior_means: Vec<(f64, f64)>,
    pub diagnostics: Diagnostics,
}

impl FrameResult {
    pub fn target_count(&self) -> usize {
        self.estimates.len()
    }
}

pub struct Tracker {
    config: Config,
    homography: Homography,
    region: RedRegion,
    seed: u64,
    targets: Vec<Target>,
    next_id: u64,
    ghost: Option<Ghost>,
    bootstrapped: bool,
    force_undetected: bool,
}

/// Intermediate state of one step shared by its stages.
struct Work {
    frame: FrameMeasurements,
    clusters: ClusterSet,
    prior_means: Vec<(f64, f64)>,
    diag: Diagnostics,
}

impl Tracker {
    pub fn new(config: Config, homography: Homography, seed: u64) -> Result<Self> {
        config.validate()?;
        let region = config.red_region.region()?;
        Ok(Self {
            config,
            homography,
            region,
            seed,
            targets: Vec::new(),
            next_id: 1,
            ghost: None,
            bootstrapped: false,
            force_undetected: false,
        })
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Treats every target as undetected, reducing a step to pure prediction.
    pub fn set_force_undetected(&mut self, on: bool) {
        self.force_undetected = on;
    }

    fn to_pixel(&self, p: Vector2<f64>) -> Result<PixelPoint> {
        self.homography.ground_to_pixel(GroundPoint::new(p.x, p.y))
    }

    fn to_ground(&self, x: f64, y: f64) -> Result<Vector2<f64>> {
        let g = self.homography.pixel_to_ground(PixelPoint::new(x, y))?;
        Ok(Vector2::new(g.x, g.y))
    }

    /// Processes one frame. Failures inside the step degrade the frame to
    /// pure prediction instead of aborting.
    pub fn step(&mut self, frame: &FrameMeasurements) -> FrameResult {
        let start = Instant::now();
        let snapshot = self.targets.clone();
        let mut result = match self.try_step(frame) {
            Ok(r) => r,
            Err(_) => {
                self.targets = snapshot;
                self.predict_only(frame)
            }
        };
        result.diagnostics.wall_time_s = start.elapsed().as_secs_f64();
        result
    }

    fn predict_only(&mut self, frame: &FrameMeasurements) -> FrameResult {
        if self.predict_all(frame.frame_index).is_err() {
            for t in &mut self.targets {
                let dt = self.config.social_force.dt;
                t.estimate.position += t.estimate.velocity * dt;
            }
        } else {
            for t in &mut self.targets {
                let n = t.particles.len();
                t.weights = vec![1.0 / n as f64; n];
                t.estimate = t.mean_state();
            }
        }
        let ids = self.targets.iter().map(|t| t.id).collect();
        FrameResult {
            frame_index: frame.frame_index,
            estimates: self.estimates(),
            clusters: Vec::new(),
            cluster_pixels: Vec::new(),
            association_ids: ids,
            association: AssociationMatrix::all_undetected(self.targets.len(), 0),
            prior_means: Vec::new(),
            diagnostics: Diagnostics {
                measurements: frame.len(),
                degraded: true,
                ..Diagnostics::default()
            },
        }
    }

    fn estimates(&self) -> Vec<TargetEstimate> {
        self.targets
            .iter()
            .map(|t| {
                let pixel = self
                    .to_pixel(t.estimate.position)
                    .unwrap_or(PixelPoint::new(f64::NAN, f64::NAN));
                TargetEstimate {
                    id: t.id,
                    ground: GroundPoint::new(t.estimate.position.x, t.estimate.position.y),
                    velocity: (t.estimate.velocity.x, t.estimate.velocity.y),
                    pixel,
                }
            })
            .collect()
    }

    /// Social-force prediction of every target's particles, with forces from
    /// the previous estimates.
    fn predict_all(&mut self, frame_index: u64) -> Result<()> {
        let states: Vec<GroundState> = self.targets.iter().map(|t| t.estimate).collect();
        let links = build_links(&states, &self.config.social_force);
        let params = self.config.social_force;
        let seed = self.seed;
        let predicted = par::map_range(self.targets.len(), |i| {
            let t = &self.targets[i];
            let neighbors: Vec<GroundState> = links[i].iter().map(|&j| states[j]).collect();
            let mut rng = substream(seed, "predict", (t.id << 32) ^ frame_index);
            predict_particles(&t.particles, &t.estimate, &neighbors, &params, &mut rng)
        });
        for (t, p) in self.targets.iter_mut().zip(predicted) {
            t.particles = p?;
        }
        Ok(())
    }

    fn min_target_distance(&self) -> f64 {
        let means: Vec<Vector2<f64>> = self.targets.iter().map(|t| t.mean_state().position).collect();
        let mut best = f64::INFINITY;
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                best = best.min((means[i] - means[j]).norm());
            }
        }
        best
    }

    fn try_step(&mut self, frame: &FrameMeasurements) -> Result<FrameResult> {
        if !self.bootstrapped {
            if frame.is_empty() {
                return Ok(self.empty_result(frame));
            }
            self.bootstrapped = true;
            return self.bootstrap(frame);
        }

        self.predict_all(frame.frame_index)?;

        let mut diag = Diagnostics {
            measurements: frame.len(),
            ..Diagnostics::default()
        };
        let tp = self.config.tracker;
        let working = if tp.downsample {
            downsample(frame, self.min_target_distance(), tp.downsample_stride)
        } else {
            frame.clone()
        };
        diag.downsampled = working.downsampled_stride.is_some();
        diag.clustered_measurements = working.len();

        let predicted_pixels = self
            .targets
            .iter()
            .map(|t| self.to_pixel(t.mean_state().position).map(|p| (p.x, p.y)))
            .collect::<Result<Vec<_>>>()?;
        let priors = init_priors(
            &predicted_pixels,
            &[(self.region.mu.x, self.region.mu.y)],
            &self.config.clustering,
        );
        let mut clustering = self.config.clustering;
        if let Some(stride) = working.downsampled_stride {
            // each kept pixel stands for `stride` originals
            clustering.min_cluster_size = clustering.min_cluster_size.div_ceil(stride);
        }
        let clusters = vbcluster::cluster(&working, &priors, &clustering)?;
        diag.vb_iterations = clusters.iterations;
        diag.lower_bound = clusters.lower_bound;

        let mut work = Work {
            frame: working,
            clusters,
            prior_means: priors.m0.iter().map(|m| (m.x, m.y)).collect(),
            diag,
        };
        self.lifecycle(frame, &mut work)?;
        self.associate_and_update(work)
    }

    fn empty_result(&self, frame: &FrameMeasurements) -> FrameResult {
        FrameResult {
            frame_index: frame.frame_index,
            estimates: Vec::new(),
            clusters: Vec::new(),
            cluster_pixels: Vec::new(),
            association_ids: Vec::new(),
            association: AssociationMatrix::all_undetected(0, 0),
            prior_means: Vec::new(),
            diagnostics: Diagnostics {
                measurements: frame.len(),
                ..Diagnostics::default()
            },
        }
    }

    /// First frame with data: one target per surviving cluster.
    fn bootstrap(&mut self, frame: &FrameMeasurements) -> Result<FrameResult> {
        let positions = frame.positions();
        let start = (self.region.mu.x, self.region.mu.y);
        let tp = self.config.tracker;
        let mut seeds = farthest_point_seeds(&positions, tp.bootstrap_components, start, tp.bootstrap_separation);
        seeds.push(start);
        let priors = init_priors(&[], &seeds, &self.config.clustering);
        let clusters = vbcluster::cluster(frame, &priors, &self.config.clustering)?;
        for c in &clusters.clusters {
            let members: Vec<Measurement> = c.members.iter().map(|&j| frame.measurements[j]).collect();
            self.spawn(&members, frame.frame_index)?;
        }
        let mut diag = Diagnostics {
            measurements: frame.len(),
            clustered_measurements: frame.len(),
            vb_iterations: clusters.iterations,
            lower_bound: clusters.lower_bound,
            count_change: self.targets.len() as i32,
            ..Diagnostics::default()
        };
        diag.hypotheses = 0;
        let n_clusters = clusters.len();
        let ids: Vec<u64> = self.targets.iter().map(|t| t.id).collect();
        let mut association = AssociationMatrix::all_undetected(ids.len(), n_clusters);
        for (i, row) in association.assoc.iter_mut().enumerate() {
            row[i] = 1.0;
            association.undetected[i] = 0.0;
        }
        Ok(FrameResult {
            frame_index: frame.frame_index,
            estimates: self.estimates(),
            clusters: summarize(&clusters),
            cluster_pixels: cluster_pixels(frame, &clusters),
            association_ids: ids,
            association,
            prior_means: seeds.clone(),
            diagnostics: diag,
        })
    }

    /// New target at the ground image of the members' centroid.
    fn spawn(&mut self, members: &[Measurement], frame_index: u64) -> Result<u64> {
        if members.is_empty() {
            return Err(Error::EmptyBirthCluster);
        }
        let n = members.len() as f64;
        let cx = members.iter().map(|m| m.x as f64).sum::<f64>() / n;
        let cy = members.iter().map(|m| m.y as f64).sum::<f64>() / n;
        let center = self.to_ground(cx, cy)?;
        let reference = color_histogram(members)?;
        let id = self.next_id;
        self.next_id += 1;
        let tp = self.config.tracker;
        let mut rng = substream(self.seed, "spawn", id);
        let pos = normal(tp.init_pos_noise);
        let vel = normal(tp.init_vel_noise);
        let particles: Vec<GroundState> = (0..tp.n_particles)
            .map(|_| GroundState {
                position: center + Vector2::new(draw(&pos, &mut rng), draw(&pos, &mut rng)),
                velocity: Vector2::new(draw(&vel, &mut rng), draw(&vel, &mut rng)),
            })
            .collect();
        let weights = vec![1.0 / tp.n_particles as f64; tp.n_particles];
        let estimate = weighted_mean(&particles, &weights);
        self.targets.push(Target {
            id,
            particles,
            weights,
            estimate,
            reference,
            birth_frame: frame_index,
            armed: false,
        });
        Ok(id)
    }

    /// Birth/death decision from the red-region pixels of the full frame.
    fn lifecycle(&mut self, frame: &FrameMeasurements, work: &mut Work) -> Result<()> {
        let params = self.config.lifecycle;
        let zr: Vec<Measurement> = red_region_cluster(&frame.measurements, &self.region)
            .into_iter()
            .map(|j| frame.measurements[j])
            .collect();
        if zr.is_empty() {
            self.ghost = None;
            return Ok(());
        }
        let n = zr.len() as f64;
        let cx = zr.iter().map(|m| m.x as f64).sum::<f64>() / n;
        let cy = zr.iter().map(|m| m.y as f64).sum::<f64>() / n;
        let centroid = self.to_ground(cx, cy)?;

        let dist = |p: Vector2<f64>| (p - centroid).norm();
        let nearest_armed = self
            .targets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.armed)
            .map(|(i, t)| (dist(t.estimate.position), i))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let nearest_any = self
            .targets
            .iter()
            .map(|t| dist(t.estimate.position))
            .chain(self.ghost.map(|g| dist(g.position)))
            .reduce(f64::min);

        let pd = p_death(zr.len(), nearest_armed.map(|x| x.0), &params);
        let pb = p_birth(zr.len(), nearest_any, &params);
        let (_, rho) = update_count(self.targets.len(), pb, pd, params.thr);
        work.diag.p_birth = pb;
        work.diag.p_death = pd;
        work.diag.count_change = rho;

        match rho {
            -1 => {
                let (_, i) = nearest_armed.expect("death requires an armed target");
                let gone = self.targets.remove(i);
                self.ghost = Some(Ghost {
                    position: gone.estimate.position,
                    frames_left: self.config.tracker.ghost_frames,
                });
            }
            1 => {
                self.spawn(&zr, frame.frame_index)?;
            }
            _ => {}
        }
        if let Some(g) = &mut self.ghost {
            if rho != -1 {
                g.position = centroid;
                g.frames_left = g.frames_left.saturating_sub(1);
            }
            if g.frames_left == 0 {
                self.ghost = None;
            }
        }
        Ok(())
    }

    fn associate_and_update(&mut self, work: Work) -> Result<FrameResult> {
        let Work {
            frame,
            clusters,
            prior_means,
            mut diag,
        } = work;
        let cfg = self.config;
        let views: Vec<ClusterView> = clusters
            .clusters
            .iter()
            .map(|c| {
                let members: Vec<&Measurement> = c.members.iter().map(|&j| &frame.measurements[j]).collect();
                Ok(ClusterView {
                    pixels: members.iter().map(|m| m.position()).collect(),
                    histogram: color_histogram(members.iter().copied())?,
                })
            })
            .collect::<Result<_>>()?;

        let particle_pixels: Vec<Vec<(f64, f64)>> = self
            .targets
            .iter()
            .map(|t| {
                t.particles
                    .iter()
                    .map(|p| self.to_pixel(p.position).map(|q| (q.x, q.y)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let means: Vec<Vector2<f64>> = self.targets.iter().map(|t| t.mean_state().position).collect();
        let p_occ: Vec<f64> = (0..self.targets.len())
            .map(|i| {
                let d: Vec<f64> = (0..means.len())
                    .filter(|&j| j != i)
                    .map(|j| (means[i] - means[j]).norm())
                    .collect();
                occlusion_probability(&d, cfg.association.delta_c)
            })
            .collect();
        let views_t: Vec<TargetView> = self
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| TargetView {
                id: t.id,
                particles: &particle_pixels[i],
                reference: Some(&t.reference),
                p_occ: p_occ[i],
            })
            .collect();

        let association = if self.force_undetected || self.targets.is_empty() {
            AssociationMatrix::all_undetected(self.targets.len(), views.len())
        } else {
            let cost = cost_matrix(&views, &views_t, &cfg.association)?;
            let log_gamma = cfg
                .association
                .log_clutter_density(cfg.tracker.frame_width, cfg.tracker.frame_height);
            let clutter = clutter_scores(&views, log_gamma);
            let hyps = murty_kbest_with_clutter(&cost, &clutter, cfg.association.k_best);
            diag.hypotheses = hyps.len();
            association_probabilities(&hyps, self.targets.len(), views.len())?
        };

        let var = cfg.association.spatial_var;
        let frame_index = frame.frame_index;
        let seed = self.seed;
        let updates = par::map_range(self.targets.len(), |i| {
            let lls = particle_log_likelihoods(i, &particle_pixels[i], &views, &association, var);
            let id = self.targets[i].id;
            let mut rng = substream(seed, "resample", (id << 32) ^ frame_index);
            weigh_and_resample(&self.targets[i].particles, &lls, &mut rng)
        });
        for (t, (_, estimate, resampled, ok)) in self.targets.iter_mut().zip(updates) {
            t.estimate = estimate;
            t.weights = vec![1.0 / resampled.len() as f64; resampled.len()];
            t.particles = resampled;
            diag.degraded |= !ok;
        }
        for i in 0..self.targets.len() {
            if !self.targets[i].armed {
                let p = self.to_pixel(self.targets[i].estimate.position)?;
                if self.region.mahalanobis(p.x, p.y) > cfg.tracker.arm_radius {
                    self.targets[i].armed = true;
                }
            }
        }

        Ok(FrameResult {
            frame_index,
            estimates: self.estimates(),
            clusters: summarize(&clusters),
            cluster_pixels: cluster_pixels(&frame, &clusters),
            association_ids: self.targets.iter().map(|t| t.id).collect(),
            association,
            prior_means,
            diagnostics: diag,
        })
    }
}

fn normal(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("positive std"))
}

fn draw<R: Rng + ?Sized>(dist: &Option<Normal<f64>>, rng: &mut R) -> f64 {
    dist.as_ref().map_or(0.0, |d| d.sample(rng))
}

/// Normalized weights from log-likelihoods, the MMSE estimate and a
/// systematically resampled particle set. Falls back to uniform weights when
/// every likelihood vanishes; the flag is false in that case.
pub fn weigh_and_resample<R: Rng + ?Sized>(
    particles: &[GroundState],
    log_likelihoods: &[f64],
    rng: &mut R,
) -> (Vec<f64>, GroundState, Vec<GroundState>, bool) {
    let n = particles.len();
    let weights = normalize_log_weights(log_likelihoods);
    let (weights, ok) = match weights {
        Some(w) => (w, true),
        None => (vec![1.0 / n as f64; n], false),
    };
    let estimate = weighted_mean(particles, &weights);
    let picks = systematic_resample(&weights, rng.random::<f64>());
    let resampled = picks.into_iter().map(|k| particles[k]).collect();
    (weights, estimate, resampled, ok)
}

/// exp-normalize in the log domain; `None` when no weight is finite.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|x| x / total).collect())
}

/// Indices chosen by systematic resampling with offset `u` in [0, 1).
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = 0.0;
    let mut k = 0;
    for m in 0..n {
        let target = (m as f64 + u) / n as f64;
        while k + 1 < n && cumulative + weights[k] <= target {
            cumulative += weights[k];
            k += 1;
        }
        out.push(k);
    }
    out
}

fn summarize(set: &ClusterSet) -> Vec<ClusterSummary> {
    set.clusters
        .iter()
        .map(|c| ClusterSummary {
            id: c.id,
            mean: (c.mean.x, c.mean.y),
            pixel_count: c.pixel_count(),
        })
        .collect()
}

fn cluster_pixels(frame: &FrameMeasurements, set: &ClusterSet) -> Vec<(usize, u32, u32)> {
    set.assignment
        .iter()
        .enumerate()
        .filter_map(|(j, a)| a.map(|c| (c, frame.measurements[j].x, frame.measurements[j].y)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn systematic_resampling_follows_weights() {
        let picks = systematic_resample(&[0.0, 1.0, 0.0], 0.3);
        assert_eq!(picks, vec![1, 1, 1]);
        let picks = systematic_resample(&[0.5, 0.5], 0.5);
        assert_eq!(picks, vec![0, 1]);
        let picks = systematic_resample(&[0.25; 4], 0.0);
        assert_eq!(picks, vec![0, 1, 2, 3]);
    }

    #[test]
    fn log_weights_normalize() {
        let w = normalize_log_weights(&[-1000.0, -1000.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_none());
        let w = normalize_log_weights(&[0.0, -1.0, -2.0]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
