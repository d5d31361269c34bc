//! Social-force motion model: pairwise attraction/repulsion between nearby
//! targets and per-mode particle prediction on the ground plane.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceParams {
    /// Boundary b of the exponential falloff, metres.
    pub b: f64,
    /// Radius of influence of one target, metres.
    pub r_i: f64,
    /// Mass, kg.
    pub m: f64,
    pub f_a: f64,
    pub f_r: f64,
    pub dt: f64,
    /// Link distance threshold, metres.
    pub d_hat: f64,
    /// Maximum number of links per target (nearest kept).
    pub max_links: usize,
    /// Largest admissible number of interaction modes.
    pub mode_cap: usize,
    /// System noise std on position, metres.
    pub pos_noise: f64,
    /// System noise std on velocity, m/s.
    pub vel_noise: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        Self {
            b: 3.0,
            r_i: 0.2,
            m: 80.0,
            f_a: 500.0,
            f_r: 500.0,
            dt: 1.0 / 25.0,
            d_hat: 3.0,
            max_links: 4,
            mode_cap: 81,
            pos_noise: 0.05,
            vel_noise: 0.1,
        }
    }
}

impl ForceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.b, self.r_i, self.m, self.f_a, self.f_r, self.dt, self.d_hat]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
            && self.pos_noise >= 0.0
            && self.vel_noise >= 0.0
            && self.mode_cap >= 1;
        if !ok {
            return Err(Error::ConfigInvalid(format!("social_force: {self:?}")));
        }
        Ok(())
    }

    /// Sum of both targets' radii of influence.
    pub fn r_ij(&self) -> f64 {
        2.0 * self.r_i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroundState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
}

impl GroundState {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64) -> Self {
        Self {
            position: Vector2::new(px, py),
            velocity: Vector2::new(vx, vy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Behavior {
    Repulsion,
    Attraction,
    NonInteraction,
}

const BEHAVIORS: [Behavior; 3] = [
    Behavior::Repulsion,
    Behavior::Attraction,
    Behavior::NonInteraction,
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InteractionMode(pub Vec<Behavior>);

const COINCIDENT: f64 = 1e-9;

/// Neighbor lists: for each target, the indices of targets closer than
/// `d_hat`, nearest first, truncated to `max_links`. Coincident pairs get no
/// link since their force direction is undefined.
pub fn build_links(states: &[GroundState], params: &ForceParams) -> Vec<Vec<usize>> {
    states
        .iter()
        .enumerate()
        .map(|(i, si)| {
            let mut near: Vec<(f64, usize)> = states
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, sj)| ((si.position - sj.position).norm(), j))
                .filter(|&(d, _)| d < params.d_hat && d >= COINCIDENT)
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(params.max_links);
            near.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Unit vector from `from` to `to` and their distance.
fn direction(from: &GroundState, to: &GroundState) -> Result<(Vector2<f64>, f64)> {
    let d = to.position - from.position;
    let n = d.norm();
    if n < COINCIDENT {
        return Err(Error::CoincidentTargets);
    }
    Ok((d / n, n))
}

/// Force pushing `i` away from `j`.
pub fn repulsive_force(i: &GroundState, j: &GroundState, params: &ForceParams) -> Result<Vector2<f64>> {
    let (u_ji, d) = direction(j, i)?;
    Ok(params.f_r * ((params.r_ij() - d) / params.b).exp() * u_ji)
}

/// Force pulling `i` toward `j`.
pub fn attractive_force(i: &GroundState, j: &GroundState, params: &ForceParams) -> Result<Vector2<f64>> {
    let (u_ij, d) = direction(i, j)?;
    Ok(params.f_a * (-(params.r_ij() - d) / params.b).exp() * u_ij)
}

/// All 3^n behavior vectors in lexicographic order.
pub fn enumerate_modes(n_links: usize, cap: usize) -> Result<Vec<InteractionMode>> {
    let count = 3usize
        .checked_pow(n_links as u32)
        .filter(|&c| c <= cap)
        .ok_or(Error::ModeExplosion {
            modes: 3usize.saturating_pow(n_links as u32),
            cap,
        })?;
    Ok((0..count)
        .map(|mut code| {
            let mut v = vec![Behavior::NonInteraction; n_links];
            for slot in v.iter_mut().rev() {
                *slot = BEHAVIORS[code % 3];
                code /= 3;
            }
            InteractionMode(v)
        })
        .collect())
}

/// Sum of per-link forces on `i` under `mode`.
pub fn mode_force(
    i: &GroundState,
    neighbors: &[GroundState],
    mode: &InteractionMode,
    params: &ForceParams,
) -> Result<Vector2<f64>> {
    if mode.0.len() != neighbors.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} behaviors", neighbors.len()),
            actual: mode.0.len().to_string(),
        });
    }
    let mut total = Vector2::zeros();
    for (j, behavior) in neighbors.iter().zip(&mode.0) {
        total += match behavior {
            Behavior::Repulsion => repulsive_force(i, j, params)?,
            Behavior::Attraction => attractive_force(i, j, params)?,
            Behavior::NonInteraction => Vector2::zeros(),
        };
    }
    Ok(total)
}

/// One step of the force-driven dynamics. `noise` is (px, py, vx, vy).
pub fn predict(state: &GroundState, force: Vector2<f64>, params: &ForceParams, noise: [f64; 4]) -> GroundState {
    let dt = params.dt;
    let accel = force / params.m;
    GroundState {
        position: state.position + state.velocity * dt + 0.5 * accel * dt * dt
            + Vector2::new(noise[0], noise[1]),
        velocity: state.velocity + accel * dt + Vector2::new(noise[2], noise[3]),
    }
}

fn draw_noise<R: Rng + ?Sized>(params: &ForceParams, rng: &mut R) -> [f64; 4] {
    let sample = |std: f64, rng: &mut R| {
        if std > 0.0 {
            Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    };
    [
        sample(params.pos_noise, rng),
        sample(params.pos_noise, rng),
        sample(params.vel_noise, rng),
        sample(params.vel_noise, rng),
    ]
}

/// Predicts a target's particle set.
///
/// Particles are taken in blocks of S (the mode count). The first particle of
/// each block is perturbed by one noise draw and then propagated under every
/// mode, producing the whole block. A final partial block covers the leading
/// modes only. Mode forces come from the previous estimates of the target and
/// its linked neighbors.
pub fn predict_particles<R: Rng + ?Sized>(
    particles: &[GroundState],
    estimate: &GroundState,
    neighbors: &[GroundState],
    params: &ForceParams,
    rng: &mut R,
) -> Result<Vec<GroundState>> {
    let modes = enumerate_modes(neighbors.len(), params.mode_cap)?;
    let forces = modes
        .iter()
        .map(|m| mode_force(estimate, neighbors, m, params))
        .collect::<Result<Vec<_>>>()?;
    let s = forces.len();
    let mut out = Vec::with_capacity(particles.len());
    for block in (0..particles.len()).step_by(s) {
        let noise = draw_noise(params, rng);
        let src = &particles[block];
        let perturbed = GroundState {
            position: src.position + Vector2::new(noise[0], noise[1]),
            velocity: src.velocity + Vector2::new(noise[2], noise[3]),
        };
        let end = (block + s).min(particles.len());
        for force in &forces[..end - block] {
            out.push(predict(&perturbed, *force, params, [0.0; 4]));
        }
    }
    Ok(out)
}
