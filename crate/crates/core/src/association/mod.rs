//! Cluster-to-target association: appearance features, occlusion gating,
//! the cost matrix, k-best joint hypotheses and association probabilities.

mod murty;

pub use murty::{hypothesis_score, murty_kbest, murty_kbest_with_clutter, Hypothesis};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foreground::Measurement;
use crate::par;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const BINS_PER_CHANNEL: usize = 16;
pub const HISTOGRAM_BINS: usize = BINS_PER_CHANNEL * BINS_PER_CHANNEL * BINS_PER_CHANNEL;

#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    pub bins: Vec<f64>,
}

impl ColorHistogram {
    pub fn bin_index(rgb: [u8; 3]) -> usize {
        let b = |v: u8| v as usize / 16;
        (b(rgb[0]) * BINS_PER_CHANNEL + b(rgb[1])) * BINS_PER_CHANNEL + b(rgb[2])
    }

    pub fn get(&self, r: usize, g: usize, b: usize) -> f64 {
        self.bins[(r * BINS_PER_CHANNEL + g) * BINS_PER_CHANNEL + b]
    }
}

/// Normalized 16×16×16 RGB histogram of a pixel set.
pub fn color_histogram<'a, I>(members: I) -> Result<ColorHistogram>
where
    I: IntoIterator<Item = &'a Measurement>,
{
    let mut bins = vec![0.0; HISTOGRAM_BINS];
    let mut count = 0usize;
    for m in members {
        bins[ColorHistogram::bin_index(m.rgb())] += 1.0;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCluster);
    }
    let n = count as f64;
    bins.iter_mut().for_each(|b| *b /= n);
    Ok(ColorHistogram { bins })
}

pub fn bhattacharyya_distance(h1: &ColorHistogram, h2: &ColorHistogram) -> f64 {
    let rho: f64 = h1
        .bins
        .iter()
        .zip(&h2.bins)
        .map(|(a, b)| (a * b).sqrt())
        .sum();
    (1.0 - rho).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationParams {
    /// Number of joint hypotheses kept.
    pub k_best: usize,
    /// Occlusion probability above which appearance is used.
    pub theta: f64,
    /// Distance constant of the occlusion probability, metres.
    pub delta_c: f64,
    /// Appearance noise variance.
    pub sigma2: f64,
    /// Per-axis variance of the pixel likelihood around a particle, px².
    pub spatial_var: f64,
    /// Per-pixel clutter density; unset means one over the frame area.
    pub clutter_density: Option<f64>,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            k_best: 10,
            theta: 0.4,
            delta_c: 1.0,
            sigma2: 0.1,
            spatial_var: 400.0,
            clutter_density: None,
        }
    }
}

impl AssociationParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k_best >= 1
            && self.delta_c > 0.0
            && self.sigma2 > 0.0
            && self.spatial_var > 0.0
            && self.clutter_density.is_none_or(|g| g > 0.0);
        if !ok {
            return Err(Error::ConfigInvalid(format!("association: {self:?}")));
        }
        Ok(())
    }

    /// Log clutter density per pixel for a frame of the given size.
    pub fn log_clutter_density(&self, width: u32, height: u32) -> f64 {
        self.clutter_density
            .unwrap_or(1.0 / (width as f64 * height as f64))
            .ln()
    }
}

/// exp(-d_min / Δc) over the distances to every other target; 0 when alone.
pub fn occlusion_probability(distances_to_others: &[f64], delta_c: f64) -> f64 {
    distances_to_others
        .iter()
        .copied()
        .reduce(f64::min)
        .map_or(0.0, |d| (-d / delta_c).exp())
}

/// Appearance factor of a cluster for a target; exactly 1 unless the target
/// is likely occluded.
pub fn cluster_feature_likelihood(
    reference: Option<&ColorHistogram>,
    target_id: u64,
    cluster: &ColorHistogram,
    p_occ: f64,
    params: &AssociationParams,
) -> Result<f64> {
    if p_occ <= params.theta {
        return Ok(1.0);
    }
    let reference = reference.ok_or(Error::MissingReferenceHistogram(target_id))?;
    Ok((-bhattacharyya_distance(reference, cluster) / (2.0 * params.sigma2)).exp())
}

/// log N(y | mu, var·I) in two dimensions.
pub fn log_gaussian(y: (f64, f64), mu: (f64, f64), var: f64) -> f64 {
    let d2 = (y.0 - mu.0).powi(2) + (y.1 - mu.1).powi(2);
    -LN_2PI - var.ln() - 0.5 * d2 / var
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Σ_j log( (1/N_s) Σ_s N(y_j | μ_s, var·I) ) over the members.
pub fn spatial_cluster_likelihood(members: &[(f64, f64)], particles: &[(f64, f64)], var: f64) -> f64 {
    if particles.is_empty() {
        return f64::NEG_INFINITY;
    }
    let ln_ns = (particles.len() as f64).ln();
    members
        .iter()
        .map(|&y| log_sum_exp(particles.iter().map(|&mu| log_gaussian(y, mu, var))) - ln_ns)
        .sum()
}

/// What the association step needs to know about one target.
#[derive(Debug, Clone)]
pub struct TargetView<'a> {
    pub id: u64,
    /// Predicted particle positions, pixels.
    pub particles: &'a [(f64, f64)],
    pub reference: Option<&'a ColorHistogram>,
    pub p_occ: f64,
}

/// Cluster as seen by the association step.
#[derive(Debug, Clone)]
pub struct ClusterView {
    pub pixels: Vec<(f64, f64)>,
    pub histogram: ColorHistogram,
}

/// κ×N matrix of log scores: spatial log-likelihood plus log appearance factor.
pub fn cost_matrix(
    clusters: &[ClusterView],
    targets: &[TargetView],
    params: &AssociationParams,
) -> Result<Vec<Vec<f64>>> {
    let n = targets.len();
    let features = clusters
        .iter()
        .flat_map(|c| {
            targets.iter().map(move |t| {
                cluster_feature_likelihood(t.reference, t.id, &c.histogram, t.p_occ, params)
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let spatial = par::map_range(clusters.len() * n, |e| {
        let (q, i) = (e / n, e % n);
        spatial_cluster_likelihood(&clusters[q].pixels, targets[i].particles, params.spatial_var)
    });
    Ok((0..clusters.len())
        .map(|q| (0..n).map(|i| spatial[q * n + i] + features[q * n + i].ln()).collect())
        .collect())
}

/// Clutter log score of each cluster: pixel count times log clutter density.
pub fn clutter_scores(clusters: &[ClusterView], log_density: f64) -> Vec<f64> {
    clusters
        .iter()
        .map(|c| c.pixels.len() as f64 * log_density)
        .collect()
}

/// Per-target probabilities of each cluster and of no detection.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    /// `assoc[i][q]`: probability that cluster q belongs to target i.
    pub assoc: Vec<Vec<f64>>,
    /// Probability that target i received no cluster.
    pub undetected: Vec<f64>,
}

impl AssociationMatrix {
    /// Every target undetected.
    pub fn all_undetected(n_targets: usize, n_clusters: usize) -> Self {
        Self {
            assoc: vec![vec![0.0; n_clusters]; n_targets],
            undetected: vec![1.0; n_targets],
        }
    }
}

/// Posterior-weighted marginals of the hypothesis set.
pub fn association_probabilities(
    hypotheses: &[Hypothesis],
    n_targets: usize,
    n_clusters: usize,
) -> Result<AssociationMatrix> {
    let max = hypotheses
        .iter()
        .map(|h| h.log_prob)
        .fold(f64::NEG_INFINITY, f64::max);
    if hypotheses.is_empty() || max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    let weights: Vec<f64> = hypotheses.iter().map(|h| (h.log_prob - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut assoc = vec![vec![0.0; n_clusters]; n_targets];
    let mut undetected = vec![0.0; n_targets];
    for (h, w) in hypotheses.iter().zip(&weights) {
        let p = w / total;
        let mut detected = vec![false; n_targets];
        for (q, a) in h.assignment.iter().enumerate() {
            if let Some(i) = *a {
                assoc[i][q] += p;
                detected[i] = true;
            }
        }
        for (u, d) in undetected.iter_mut().zip(detected) {
            if !d {
                *u += p;
            }
        }
    }
    Ok(AssociationMatrix { assoc, undetected })
}

/// Log particle likelihood ln(A_o + Σ_j A_{q(j)} N(y_j | μ_s)) for every
/// particle of target `i`.
pub fn particle_log_likelihoods(
    i: usize,
    particles: &[(f64, f64)],
    clusters: &[ClusterView],
    a: &AssociationMatrix,
    var: f64,
) -> Vec<f64> {
    let undetected = a.undetected[i];
    let active: Vec<(f64, &ClusterView)> = clusters
        .iter()
        .enumerate()
        .filter(|(q, _)| a.assoc[i][*q] > 0.0)
        .map(|(q, c)| (a.assoc[i][q].ln(), c))
        .collect();
    par::map(particles, |&mu| {
        let terms = std::iter::once(undetected.ln()).chain(active.iter().flat_map(|(ln_a, c)| {
            c.pixels.iter().map(move |&y| ln_a + log_gaussian(y, mu, var))
        }));
        log_sum_exp(terms)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_of(colors: &[[u8; 3]]) -> ColorHistogram {
        let ms: Vec<Measurement> = colors.iter().map(|&c| Measurement::new(0, 0, c)).collect();
        color_histogram(&ms).unwrap()
    }

    #[test]
    fn histogram_bins() {
        let h = hist_of(&[[255, 0, 0]; 4]);
        assert_eq!(h.get(15, 0, 0), 1.0);
        let h = hist_of(&[[255, 0, 0], [0, 0, 255]]);
        assert_eq!(h.get(15, 0, 0), 0.5);
        assert_eq!(h.get(0, 0, 15), 0.5);
        assert!(matches!(color_histogram(&[]), Err(Error::EmptyCluster)));
    }

    #[test]
    fn bhattacharyya_cases() {
        let red = hist_of(&[[255, 0, 0]]);
        let blue = hist_of(&[[0, 0, 255]]);
        let half = hist_of(&[[255, 0, 0], [0, 0, 255]]);
        assert_eq!(bhattacharyya_distance(&red, &red), 0.0);
        assert_eq!(bhattacharyya_distance(&red, &blue), 1.0);
        let d = bhattacharyya_distance(&red, &half);
        assert!((d - (1.0 - 0.5f64.sqrt()).sqrt()).abs() < 1e-12);
        assert!((d - 0.5412).abs() < 1e-4);
    }

    #[test]
    fn occlusion_cases() {
        assert_eq!(occlusion_probability(&[0.0], 1.0), 1.0);
        assert!((occlusion_probability(&[1.0, 3.0], 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(occlusion_probability(&[], 1.0), 0.0);
    }

    #[test]
    fn feature_gate() {
        let p = AssociationParams::default();
        let red = hist_of(&[[255, 0, 0]]);
        let half = hist_of(&[[255, 0, 0], [0, 0, 255]]);
        assert_eq!(cluster_feature_likelihood(None, 1, &half, 0.3, &p).unwrap(), 1.0);
        assert_eq!(cluster_feature_likelihood(Some(&red), 1, &red, 0.9, &p).unwrap(), 1.0);
        let f = cluster_feature_likelihood(Some(&red), 1, &half, 0.9, &p).unwrap();
        let d = (1.0 - 0.5f64.sqrt()).sqrt();
        assert!((f - (-d / 0.2).exp()).abs() < 1e-15);
        assert!((f - 0.0668).abs() < 1e-4);
        assert!(matches!(
            cluster_feature_likelihood(None, 7, &half, 0.9, &p),
            Err(Error::MissingReferenceHistogram(7))
        ));
    }

    #[test]
    fn spatial_cases() {
        let l = spatial_cluster_likelihood(&[(3.0, 4.0)], &[(3.0, 4.0)], 1.0);
        assert!((l + (std::f64::consts::TAU).ln()).abs() < 1e-12);
        assert!(spatial_cluster_likelihood(&[(1000.0, 0.0)], &[(0.0, 0.0)], 1.0) < -1e5);
        let two = spatial_cluster_likelihood(&[(0.0, 0.0)], &[(0.0, 0.0), (1.0, 0.0)], 1.0);
        let g0 = 1.0 / std::f64::consts::TAU;
        let g1 = g0 * (-0.5f64).exp();
        assert!((two - (0.5 * (g0 + g1)).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_hypothesis_probabilities() {
        let h = [Hypothesis { assignment: vec![Some(0)], log_prob: -3.0 }];
        let a = association_probabilities(&h, 1, 1).unwrap();
        assert_eq!(a.assoc[0][0], 1.0);
        assert_eq!(a.undetected[0], 0.0);
    }

    #[test]
    fn equal_hypotheses_split() {
        let h = [
            Hypothesis { assignment: vec![Some(0)], log_prob: -3.0 },
            Hypothesis { assignment: vec![None], log_prob: -3.0 },
        ];
        let a = association_probabilities(&h, 1, 1).unwrap();
        assert_eq!(a.assoc[0][0], 0.5);
        assert_eq!(a.undetected[0], 0.5);
        let dead = [Hypothesis { assignment: vec![None], log_prob: f64::NEG_INFINITY }];
        assert!(matches!(association_probabilities(&dead, 1, 1), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn undetected_target_has_flat_likelihood() {
        let a = AssociationMatrix::all_undetected(1, 1);
        let c = ClusterView {
            pixels: vec![(0.0, 0.0)],
            histogram: hist_of(&[[1, 1, 1]]),
        };
        let l = particle_log_likelihoods(0, &[(0.0, 0.0), (50.0, 50.0)], &[c], &a, 400.0);
        assert_eq!(l, vec![0.0, 0.0]);
    }

    #[test]
    fn near_particle_outweighs_far() {
        let a = AssociationMatrix { assoc: vec![vec![1.0]], undetected: vec![0.0] };
        let c = ClusterView {
            pixels: vec![(10.0, 10.0), (12.0, 10.0)],
            histogram: hist_of(&[[1, 1, 1]]),
        };
        let l = particle_log_likelihoods(0, &[(11.0, 10.0), (60.0, 10.0)], &[c], &a, 400.0);
        assert!(l[0] > l[1]);
    }

    #[test]
    fn clutter_log_density_defaults_to_frame_area() {
        let p = AssociationParams::default();
        assert!((p.log_clutter_density(360, 288) - (1.0 / 103_680.0f64).ln()).abs() < 1e-12);
    }
}
