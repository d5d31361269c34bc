//! CLEAR MOT rates and precision, plus an OSPAMT-variant track distance.
//!
//! Positions are ground metres; reported distances are centimetres.
//!
//! OSPAMT variant: estimated tracks are matched one-to-one to true tracks by
//! a whole-sequence optimal assignment whose pair cost sums, over frames,
//! `min(dist, c)^p` when both tracks are present and `c^p` when only one is.
//! Estimated tracks left over join the true track with the smallest mean
//! truncated distance over shared frames, if that mean is below `c`. Per
//! frame, a present true track contributes `min(dist, c)^p` to its nearest
//! present assigned estimate (0 if none) to the localization sum, and the
//! cardinality sum follows the standard multi-assignment penalty with `Δ`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::assignment::solve_min;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    /// CLEAR MOT match threshold, metres.
    pub threshold: f64,
    /// OSPAMT cutoff, cm.
    pub c: f64,
    /// OSPAMT assignment parameter, cm.
    pub delta: f64,
    /// OSPAMT order.
    pub p: f64,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self {
            threshold: 0.45,
            c: 80.0,
            delta: 10.0,
            p: 2.0,
        }
    }
}

impl MetricsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.c > 0.0 && self.delta > 0.0 && self.p >= 1.0) {
            return Err(Error::ConfigInvalid(format!("metrics: {self:?}")));
        }
        Ok(())
    }
}

/// Per-frame sets of `(id, x, y)` keyed by frame index.
pub type TrackTable = BTreeMap<u64, Vec<(u64, f64, f64)>>;

/// Builds a table from `(frame, id, x, y)` rows.
pub fn table_from_rows(rows: impl IntoIterator<Item = (u64, u64, f64, f64)>) -> TrackTable {
    let mut t = TrackTable::new();
    for (frame, id, x, y) in rows {
        t.entry(frame).or_default().push((id, x, y));
    }
    t
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// (gt id, est id, distance in metres)
    pub matches: Vec<(u64, u64, f64)>,
    pub misses: usize,
    pub false_positives: usize,
    pub mismatches: usize,
}

/// Matches one frame. `carry` holds the last known est id of every gt id and
/// is updated in place.
pub fn match_frame(
    gt: &[(u64, f64, f64)],
    est: &[(u64, f64, f64)],
    threshold: f64,
    carry: &mut HashMap<u64, u64>,
) -> FrameMatch {
    let mut gt_done = vec![false; gt.len()];
    let mut est_done = vec![false; est.len()];
    let mut matches = Vec::new();

    for (gi, g) in gt.iter().enumerate() {
        if let Some(&eid) = carry.get(&g.0) {
            if let Some(ei) = est.iter().position(|e| e.0 == eid) {
                let d = dist((g.1, g.2), (est[ei].1, est[ei].2));
                if !est_done[ei] && d <= threshold {
                    gt_done[gi] = true;
                    est_done[ei] = true;
                    matches.push((g.0, eid, d));
                }
            }
        }
    }

    let rest_g: Vec<usize> = (0..gt.len()).filter(|&i| !gt_done[i]).collect();
    let rest_e: Vec<usize> = (0..est.len()).filter(|&i| !est_done[i]).collect();
    let mut mismatches = 0;
    if !rest_g.is_empty() && !rest_e.is_empty() {
        // A match is worth far more than any distance, so cardinality comes first.
        const MATCH_BONUS: f64 = 1e3;
        let cols = rest_e.len() + rest_g.len();
        let cost: Vec<Vec<f64>> = rest_g
            .iter()
            .enumerate()
            .map(|(r, &gi)| {
                let mut row = vec![f64::INFINITY; cols];
                for (c, &ei) in rest_e.iter().enumerate() {
                    let d = dist((gt[gi].1, gt[gi].2), (est[ei].1, est[ei].2));
                    if d <= threshold {
                        row[c] = d - MATCH_BONUS;
                    }
                }
                row[rest_e.len() + r] = 0.0;
                row
            })
            .collect();
        let (cols_of, _) = solve_min(&cost).expect("dummy columns keep it feasible");
        for (r, &c) in cols_of.iter().enumerate() {
            if c < rest_e.len() {
                let (gi, ei) = (rest_g[r], rest_e[c]);
                gt_done[gi] = true;
                est_done[ei] = true;
                let d = dist((gt[gi].1, gt[gi].2), (est[ei].1, est[ei].2));
                if carry.get(&gt[gi].0).is_some_and(|&prev| prev != est[ei].0) {
                    mismatches += 1;
                }
                matches.push((gt[gi].0, est[ei].0, d));
            }
        }
    }
    for &(g, e, _) in &matches {
        carry.insert(g, e);
    }
    matches.sort_by_key(|m| (m.0, m.1));
    FrameMatch {
        misses: gt_done.iter().filter(|d| !**d).count(),
        false_positives: est_done.iter().filter(|d| !**d).count(),
        mismatches,
        matches,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotFrame {
    pub frame: u64,
    pub misses: usize,
    pub false_positives: usize,
    pub mismatches: usize,
    pub gt_count: usize,
    pub match_count: usize,
    /// Sum of matched distances this frame, metres.
    pub distance_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotReport {
    pub frames: Vec<MotFrame>,
    pub miss_rate: f64,
    pub mismatch_rate: f64,
    pub false_positive_rate: f64,
    /// Mean matched distance, cm; `None` without matches.
    pub motp_cm: Option<f64>,
}

/// Runs frame matching over every frame present in either table.
pub fn clear_mot(gt: &TrackTable, est: &TrackTable, threshold: f64) -> Result<MotReport> {
    let frames: BTreeSet<u64> = gt.keys().chain(est.keys()).copied().collect();
    let mut carry = HashMap::new();
    let empty = Vec::new();
    let per_frame: Vec<MotFrame> = frames
        .into_iter()
        .map(|k| {
            let g = gt.get(&k).unwrap_or(&empty);
            let e = est.get(&k).unwrap_or(&empty);
            let m = match_frame(g, e, threshold, &mut carry);
            MotFrame {
                frame: k,
                misses: m.misses,
                false_positives: m.false_positives,
                mismatches: m.mismatches,
                gt_count: g.len(),
                match_count: m.matches.len(),
                distance_sum: m.matches.iter().map(|x| x.2).sum(),
            }
        })
        .collect();
    let (m, mme, fp) = mot_rates(&per_frame)?;
    Ok(MotReport {
        motp_cm: motp(&per_frame).ok(),
        frames: per_frame,
        miss_rate: m,
        mismatch_rate: mme,
        false_positive_rate: fp,
    })
}

/// (miss, mismatch, false-positive) rates over the total gt count.
pub fn mot_rates(frames: &[MotFrame]) -> Result<(f64, f64, f64)> {
    let gt: usize = frames.iter().map(|f| f.gt_count).sum();
    if gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let total = |f: fn(&MotFrame) -> usize| frames.iter().map(f).sum::<usize>() as f64 / gt as f64;
    Ok((total(|f| f.misses), total(|f| f.mismatches), total(|f| f.false_positives)))
}

/// Mean matched distance in cm.
pub fn motp(frames: &[MotFrame]) -> Result<f64> {
    let c: usize = frames.iter().map(|f| f.match_count).sum();
    if c == 0 {
        return Err(Error::NoMatches);
    }
    Ok(100.0 * frames.iter().map(|f| f.distance_sum).sum::<f64>() / c as f64)
}

/// Running MOTP after each frame, cm; `None` until the first match.
pub fn motp_cumulative(frames: &[MotFrame]) -> Vec<Option<f64>> {
    let mut d = 0.0;
    let mut c = 0usize;
    frames
        .iter()
        .map(|f| {
            d += f.distance_sum;
            c += f.match_count;
            (c > 0).then(|| 100.0 * d / c as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OspamtFrame {
    pub frame: u64,
    pub loc: f64,
    pub card: f64,
}

type Track = BTreeMap<u64, (f64, f64)>;

fn tracks(table: &TrackTable) -> BTreeMap<u64, Track> {
    let mut out: BTreeMap<u64, Track> = BTreeMap::new();
    for (&k, objs) in table {
        for &(id, x, y) in objs {
            out.entry(id).or_default().insert(k, (x, y));
        }
    }
    out
}

/// Per-frame OSPAMT-variant localization and cardinality distances, cm.
pub fn ospamt(gt: &TrackTable, est: &TrackTable, params: &MetricsParams) -> Result<Vec<OspamtFrame>> {
    let frames: BTreeSet<u64> = gt.keys().chain(est.keys()).copied().collect();
    if frames.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let (c, p) = (params.c, params.p);
    let cp = c.powf(p);
    let trunc = |a: (f64, f64), b: (f64, f64)| (100.0 * dist(a, b)).min(c);

    let gt_tracks: Vec<Track> = tracks(gt).into_values().collect();
    let est_tracks: Vec<Track> = tracks(est).into_values().collect();
    let (ng, ne) = (gt_tracks.len(), est_tracks.len());

    // assigned[j] = gt track of est track j
    let mut assigned: Vec<Option<usize>> = vec![None; ne];
    if ng > 0 && ne > 0 {
        let pair_cost = |g: &Track, e: &Track| -> f64 {
            frames
                .iter()
                .map(|k| match (g.get(k), e.get(k)) {
                    (Some(&a), Some(&b)) => trunc(a, b).powf(p),
                    (None, None) => 0.0,
                    _ => cp,
                })
                .sum()
        };
        let unassigned = |t: &Track| t.len() as f64 * cp;
        // square problem: each side may stay unassigned at the cost of its whole track
        let size = ng + ne;
        let mut m = vec![vec![f64::INFINITY; size]; size];
        for (i, g) in gt_tracks.iter().enumerate() {
            for (j, e) in est_tracks.iter().enumerate() {
                m[i][j] = pair_cost(g, e);
            }
            m[i][ne + i] = unassigned(g);
        }
        for (j, e) in est_tracks.iter().enumerate() {
            m[ng + j][j] = unassigned(e);
            for col in m[ng + j].iter_mut().skip(ne) {
                *col = 0.0;
            }
        }
        let (cols, _) = solve_min(&m).expect("diagonal fallback keeps it feasible");
        for (i, &col) in cols.iter().take(ng).enumerate() {
            if col < ne {
                assigned[col] = Some(i);
            }
        }
        for (j, e) in est_tracks.iter().enumerate() {
            if assigned[j].is_some() {
                continue;
            }
            let best = gt_tracks
                .iter()
                .enumerate()
                .filter_map(|(i, g)| {
                    let shared: Vec<f64> = e
                        .iter()
                        .filter_map(|(k, &b)| g.get(k).map(|&a| trunc(a, b)))
                        .collect();
                    (!shared.is_empty()).then(|| (shared.iter().sum::<f64>() / shared.len() as f64, i))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((mean, i)) = best {
                if mean < c {
                    assigned[j] = Some(i);
                }
            }
        }
    }

    let dp = params.delta.powf(p);
    Ok(frames
        .into_iter()
        .map(|k| {
            let n_gt = gt_tracks.iter().filter(|g| g.contains_key(&k)).count();
            let n_est = est_tracks.iter().filter(|e| e.contains_key(&k)).count();
            let n_t = n_gt.max(n_est);
            if n_t == 0 {
                return OspamtFrame { frame: k, loc: 0.0, card: 0.0 };
            }
            let mut loc_sum = 0.0;
            let mut s = 0.0;
            let mut covered = 0usize;
            for (i, g) in gt_tracks.iter().enumerate() {
                let Some(&a) = g.get(&k) else { continue };
                let present: Vec<(f64, f64)> = est_tracks
                    .iter()
                    .zip(&assigned)
                    .filter(|(_, asg)| **asg == Some(i))
                    .filter_map(|(e, _)| e.get(&k).copied())
                    .collect();
                let n_bar = present.len();
                if let Some(d) = present.iter().map(|&b| trunc(a, b)).reduce(f64::min) {
                    loc_sum += d.powf(p);
                }
                s += n_bar.saturating_sub(1) as f64 * (dp + cp);
                covered += n_bar;
            }
            s += cp * n_t.saturating_sub(covered) as f64;
            OspamtFrame {
                frame: k,
                loc: (loc_sum / n_t as f64).powf(1.0 / p),
                card: (s / n_t as f64).powf(1.0 / p),
            }
        })
        .collect())
}
