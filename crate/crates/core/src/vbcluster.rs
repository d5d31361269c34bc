//! Variational Bayesian Gaussian mixture over foreground pixel coordinates.
//!
//! Each component carries a Dirichlet weight and a Gaussian-Wishart
//! posterior over its mean and precision. Components that end up with fewer
//! than `min_cluster_size` hard-assigned pixels are dropped.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::foreground::FrameMeasurements;
use crate::par;

const D: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_PI: f64 = 1.144_729_885_849_400_2;
const REGULARIZER: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VbPriors {
    pub alpha0: f64,
    pub beta0: f64,
    pub nu0: f64,
    /// Wishart scale matrix shared by all components.
    pub w0: Matrix2<f64>,
    /// One prior mean per component, pixels.
    pub m0: Vec<Vector2<f64>>,
}

/// Knobs for building priors and running the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub alpha0: f64,
    pub beta0: f64,
    pub nu0: f64,
    /// Ellipse radii l1, l2 of the scale matrix before rotation.
    pub scale_l1: f64,
    pub scale_l2: f64,
    /// Pixel offset of each neighborhood hypothesis from its target.
    pub neighbor_offset: f64,
    pub neighbors_per_target: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub min_cluster_size: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.6,
            beta0: 1.0,
            nu0: 3.0,
            scale_l1: 500.0,
            scale_l2: 300.0,
            neighbor_offset: 40.0,
            neighbors_per_target: 1,
            tolerance: 1e-6,
            max_iterations: 500,
            min_cluster_size: 100,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha0 > 0.0
            && self.beta0 > 0.0
            && self.nu0 > D - 1.0
            && self.scale_l1 > 0.0
            && self.scale_l2 > 0.0
            && self.tolerance > 0.0
            && self.max_iterations > 0;
        if !ok {
            return Err(Error::ConfigInvalid(format!("clustering: {self:?}")));
        }
        Ok(())
    }

    /// `Uᵀ diag(l1, l2) U` with `U` the rotation by π/2.
    pub fn scale_matrix(&self) -> Matrix2<f64> {
        let (s, c) = std::f64::consts::FRAC_PI_2.sin_cos();
        let u = Matrix2::new(c, -s, s, c);
        let u = u.map(|v| if v.abs() < 1e-15 { 0.0 } else { v });
        u.transpose() * Matrix2::new(self.scale_l1, 0.0, 0.0, self.scale_l2) * u
    }

    pub fn priors(&self, m0: Vec<Vector2<f64>>) -> VbPriors {
        VbPriors {
            alpha0: self.alpha0,
            beta0: self.beta0,
            nu0: self.nu0,
            w0: self.scale_matrix(),
            m0,
        }
    }
}

/// Prior means: each target's pixel location, its neighborhood hypotheses,
/// then the fixed boundary means.
pub fn init_priors(
    target_pixels: &[(f64, f64)],
    boundary_means: &[(f64, f64)],
    config: &ClusteringConfig,
) -> VbPriors {
    let mut m0 = Vec::new();
    for &(x, y) in target_pixels {
        m0.push(Vector2::new(x, y));
    }
    for &(x, y) in target_pixels {
        for n in 0..config.neighbors_per_target {
            let angle = std::f64::consts::TAU * n as f64 / config.neighbors_per_target as f64;
            m0.push(Vector2::new(
                x + config.neighbor_offset * angle.cos(),
                y + config.neighbor_offset * angle.sin(),
            ));
        }
    }
    for &(x, y) in boundary_means {
        m0.push(Vector2::new(x, y));
    }
    config.priors(m0)
}

/// Farthest-point seeding: starts at the point nearest `start` and
/// repeatedly adds the point farthest from all chosen seeds, stopping early
/// once that distance is at most `min_separation`.
pub fn farthest_point_seeds(
    points: &[(f64, f64)],
    k: usize,
    start: (f64, f64),
    min_separation: f64,
) -> Vec<(f64, f64)> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let first = points
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| d2(a.1, start).total_cmp(&d2(b.1, start)).then(a.0.cmp(&b.0)))
        .map(|(_, p)| p)
        .unwrap();
    let mut seeds = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|&p| d2(p, first)).collect();
    while seeds.len() < k {
        let (idx, &best) = nearest
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if best <= 0.0 || best <= min_separation * min_separation {
            break;
        }
        let p = points[idx];
        seeds.push(p);
        for (n, &q) in nearest.iter_mut().zip(points) {
            *n = n.min(d2(p, q));
        }
    }
    seeds
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPosterior {
    pub alpha: f64,
    pub beta: f64,
    pub m: Vector2<f64>,
    pub w: Matrix2<f64>,
    pub nu: f64,
    /// Effective member count.
    pub n: f64,
    pub ybar: Vector2<f64>,
    pub s: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPosterior {
    pub components: Vec<ComponentPosterior>,
}

impl ClusterPosterior {
    /// Posterior equal to the prior (every N_q = 0).
    pub fn from_priors(priors: &VbPriors) -> Self {
        let components = priors
            .m0
            .iter()
            .map(|&m0| ComponentPosterior {
                alpha: priors.alpha0,
                beta: priors.beta0,
                m: m0,
                w: priors.w0,
                nu: priors.nu0,
                n: 0.0,
                ybar: m0,
                s: Matrix2::zeros(),
            })
            .collect();
        Self { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Row-major M×κ matrix of responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Responsibilities {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn argmax(&self, j: usize) -> usize {
        let row = self.row(j);
        let mut best = 0;
        for (q, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = q;
            }
        }
        best
    }
}

/// E[ln |Λ|] for a 2-D Wishart(W, ν).
fn expected_log_det(w: &Matrix2<f64>, nu: f64) -> f64 {
    digamma(nu / 2.0) + digamma((nu - 1.0) / 2.0) + D * std::f64::consts::LN_2 + w.determinant().ln()
}

struct ComponentTerms {
    log_weight: f64,
    half_log_det: f64,
    d_over_beta: f64,
    nu: f64,
    m: Vector2<f64>,
    w: Matrix2<f64>,
}

fn component_terms(post: &ClusterPosterior) -> Vec<ComponentTerms> {
    let alpha_sum: f64 = post.components.iter().map(|c| c.alpha).sum();
    let psi_sum = digamma(alpha_sum);
    post.components
        .iter()
        .map(|c| ComponentTerms {
            log_weight: digamma(c.alpha) - psi_sum,
            half_log_det: 0.5 * expected_log_det(&c.w, c.nu),
            d_over_beta: D / c.beta,
            nu: c.nu,
            m: c.m,
            w: c.w,
        })
        .collect()
}

const ROW_BLOCK: usize = 512;

/// Responsibilities under the current posterior, normalized in the log domain.
pub fn e_step(points: &[Vector2<f64>], post: &ClusterPosterior) -> Result<Responsibilities> {
    let k = post.len();
    if k == 0 {
        return Err(Error::DimensionMismatch {
            expected: "at least one component".into(),
            actual: "0".into(),
        });
    }
    let terms = component_terms(post);
    let mut data = vec![0.0; points.len() * k];
    let block = ROW_BLOCK * k;
    par::chunks_mut(&mut data, block, |b, out| {
        let mut log_rho = vec![0.0; k];
        for (local, row) in out.chunks_mut(k).enumerate() {
            let y = points[b * ROW_BLOCK + local];
            for (q, t) in terms.iter().enumerate() {
                let d = y - t.m;
                let quad = t.d_over_beta + t.nu * (d.transpose() * t.w * d)[0];
                log_rho[q] = t.log_weight + t.half_log_det - LN_2PI - 0.5 * quad;
            }
            let max = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY || max.is_nan() {
                row.iter_mut().for_each(|v| *v = f64::NAN);
                continue;
            }
            let mut sum = 0.0;
            for (r, &l) in row.iter_mut().zip(&log_rho) {
                // below e^-60 the share is far under f64 resolution of the row sum
                *r = if l - max < -60.0 { 0.0 } else { (l - max).exp() };
                sum += *r;
            }
            for r in row.iter_mut() {
                *r /= sum;
            }
        }
    });
    if let Some(j) = data.chunks(k).position(|row| row[0].is_nan()) {
        return Err(Error::NumericalUnderflow(j));
    }
    Ok(Responsibilities {
        rows: points.len(),
        cols: k,
        data,
    })
}

/// Posterior parameters given responsibilities.
pub fn m_step(
    points: &[Vector2<f64>],
    r: &Responsibilities,
    priors: &VbPriors,
) -> Result<ClusterPosterior> {
    let k = priors.m0.len();
    if r.cols != k || r.rows != points.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", points.len(), k),
            actual: format!("{}x{}", r.rows, r.cols),
        });
    }
    let mut n = vec![0.0; k];
    let mut sum = vec![Vector2::zeros(); k];
    for (j, y) in points.iter().enumerate() {
        for (q, &rq) in r.row(j).iter().enumerate() {
            n[q] += rq;
            sum[q] += rq * y;
        }
    }
    let ybar: Vec<Vector2<f64>> = (0..k)
        .map(|q| if n[q] > 0.0 { sum[q] / n[q] } else { priors.m0[q] })
        .collect();
    let mut scatter = vec![Matrix2::zeros(); k];
    for (j, y) in points.iter().enumerate() {
        for (q, &rq) in r.row(j).iter().enumerate() {
            let d = y - ybar[q];
            scatter[q] += rq * d * d.transpose();
        }
    }
    let w0_inv = priors
        .w0
        .try_inverse()
        .ok_or(Error::SingularScale(usize::MAX))?;
    let mut components = Vec::with_capacity(k);
    for q in 0..k {
        let s = if n[q] > 0.0 { scatter[q] / n[q] } else { Matrix2::zeros() };
        let beta = priors.beta0 + n[q];
        let m = (priors.beta0 * priors.m0[q] + n[q] * ybar[q]) / beta;
        let dm = ybar[q] - priors.m0[q];
        let w_inv = w0_inv
            + n[q] * s
            + (priors.beta0 * n[q] / beta) * dm * dm.transpose()
            + Matrix2::identity() * REGULARIZER;
        let w = w_inv.try_inverse().ok_or(Error::SingularScale(q))?;
        if !(w.determinant() > 0.0) {
            return Err(Error::SingularScale(q));
        }
        components.push(ComponentPosterior {
            alpha: priors.alpha0 + n[q],
            beta,
            m,
            w,
            nu: priors.nu0 + n[q],
            n: n[q],
            ybar: ybar[q],
            s,
        });
    }
    Ok(ClusterPosterior { components })
}

/// ln B(W, ν) of the Wishart normalizer, D = 2.
fn ln_wishart_norm(w: &Matrix2<f64>, nu: f64) -> f64 {
    -0.5 * nu * w.determinant().ln()
        - (0.5 * nu * D * std::f64::consts::LN_2
            + 0.25 * D * (D - 1.0) * LN_PI
            + ln_gamma(nu / 2.0)
            + ln_gamma((nu - 1.0) / 2.0))
}

fn ln_dirichlet_norm(alphas: &[f64]) -> f64 {
    ln_gamma(alphas.iter().sum()) - alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

/// Variational lower bound of the joint model.
///
/// Data enters only through the sufficient statistics stored in `post`.
pub fn lower_bound(
    r: &Responsibilities,
    post: &ClusterPosterior,
    priors: &VbPriors,
) -> f64 {
    let k = post.len();
    let terms = component_terms(post);
    let w0_inv = priors.w0.try_inverse().unwrap_or_else(Matrix2::zeros);
    let ln_b0 = ln_wishart_norm(&priors.w0, priors.nu0);

    let mut data_term = 0.0;
    let mut prior_mu_lambda = 0.0;
    let mut q_mu_lambda = 0.0;
    let mut sum_ln_pi = 0.0;
    let mut q_pi_weighted = 0.0;
    for (q, (c, t)) in post.components.iter().zip(&terms).enumerate() {
        let ln_lambda = 2.0 * t.half_log_det;
        let ln_pi = t.log_weight;
        sum_ln_pi += ln_pi;
        q_pi_weighted += (c.alpha - 1.0) * ln_pi;

        let dy = c.ybar - c.m;
        data_term += 0.5
            * c.n
            * (ln_lambda
                - D / c.beta
                - c.nu * (c.s * c.w).trace()
                - c.nu * (dy.transpose() * c.w * dy)[0]
                - D * LN_2PI);

        let dm = c.m - priors.m0[q];
        prior_mu_lambda += 0.5
            * (D * (priors.beta0 / std::f64::consts::TAU).ln() + ln_lambda
                - D * priors.beta0 / c.beta
                - priors.beta0 * c.nu * (dm.transpose() * c.w * dm)[0])
            + 0.5 * (priors.nu0 - D - 1.0) * ln_lambda
            - 0.5 * c.nu * (w0_inv * c.w).trace()
            + ln_b0;

        let entropy = -ln_wishart_norm(&c.w, c.nu) - 0.5 * (c.nu - D - 1.0) * ln_lambda
            + 0.5 * c.nu * D;
        q_mu_lambda +=
            0.5 * ln_lambda + 0.5 * D * (c.beta / std::f64::consts::TAU).ln() - 0.5 * D - entropy;
    }

    let mut z_term = 0.0;
    let mut q_z = 0.0;
    for j in 0..r.rows {
        for (q, &rq) in r.row(j).iter().enumerate() {
            if rq > 0.0 {
                z_term += rq * terms[q].log_weight;
                q_z += rq * rq.ln();
            }
        }
    }

    let alphas: Vec<f64> = post.components.iter().map(|c| c.alpha).collect();
    let prior_pi = ln_dirichlet_norm(&vec![priors.alpha0; k]) + (priors.alpha0 - 1.0) * sum_ln_pi;
    let q_pi = q_pi_weighted + ln_dirichlet_norm(&alphas);

    data_term + z_term + prior_pi + prior_mu_lambda - q_z - q_pi - q_mu_lambda
}

/// Full state of a converged (or iteration-capped) fit.
#[derive(Debug, Clone)]
pub struct VbFit {
    pub responsibilities: Responsibilities,
    pub posterior: ClusterPosterior,
    /// Lower bound after every E/M pass.
    pub bounds: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs E/M passes until the bound changes by less than the tolerance.
///
/// The first responsibilities come from the prior parameters.
pub fn fit(points: &[Vector2<f64>], priors: &VbPriors, config: &ClusteringConfig) -> Result<VbFit> {
    let prior_post = ClusterPosterior::from_priors(priors);
    let mut r = e_step(points, &prior_post)?;
    let mut post = m_step(points, &r, priors)?;
    let mut bounds = vec![lower_bound(&r, &post, priors)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        r = e_step(points, &post)?;
        post = m_step(points, &r, priors)?;
        let l = lower_bound(&r, &post, priors);
        let prev = *bounds.last().unwrap();
        bounds.push(l);
        if (l - prev).abs() < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(VbFit {
        responsibilities: r,
        posterior: post,
        bounds,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    /// Mean of member pixels.
    pub mean: Vector2<f64>,
    /// Responsibility-weighted scatter of the fitted component.
    pub covariance: Matrix2<f64>,
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn pixel_count(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    /// Hard assignment per measurement; `None` when its cluster was pruned.
    pub assignment: Vec<Option<usize>>,
    pub iterations: usize,
    pub lower_bound: f64,
    pub converged: bool,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

pub fn to_points(frame: &FrameMeasurements) -> Vec<Vector2<f64>> {
    frame
        .measurements
        .iter()
        .map(|m| Vector2::new(m.x as f64, m.y as f64))
        .collect()
}

/// Fits the mixture, hard-assigns every pixel and drops small clusters.
pub fn cluster(
    frame: &FrameMeasurements,
    priors: &VbPriors,
    config: &ClusteringConfig,
) -> Result<ClusterSet> {
    if frame.is_empty() || priors.m0.is_empty() {
        return Ok(ClusterSet {
            assignment: vec![None; frame.len()],
            ..ClusterSet::default()
        });
    }
    let points = to_points(frame);
    let fit = fit(&points, priors, config)?;
    let k = priors.m0.len();
    let mut members = vec![Vec::new(); k];
    for j in 0..points.len() {
        members[fit.responsibilities.argmax(j)].push(j);
    }
    let mut clusters = Vec::new();
    let mut assignment = vec![None; points.len()];
    for (q, idx) in members.into_iter().enumerate() {
        if idx.len() < config.min_cluster_size || idx.is_empty() {
            continue;
        }
        let id = clusters.len();
        let mean = idx.iter().map(|&j| points[j]).sum::<Vector2<f64>>() / idx.len() as f64;
        for &j in &idx {
            assignment[j] = Some(id);
        }
        clusters.push(Cluster {
            id,
            mean,
            covariance: fit.posterior.components[q].s,
            members: idx,
        });
    }
    Ok(ClusterSet {
        clusters,
        assignment,
        iterations: fit.iterations,
        lower_bound: *fit.bounds.last().unwrap(),
        converged: fit.converged,
    })
}
