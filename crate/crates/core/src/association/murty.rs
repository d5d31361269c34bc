//! k-best joint cluster-to-target hypotheses by Murty's partitioning.
//!
//! A hypothesis gives every cluster either a target or clutter, with each
//! target taking at most one cluster. Scores are log-likelihoods and are
//! maximized. Each subproblem is solved as a square assignment in which
//! clusters may take their own clutter column and one dummy row per target
//! absorbs the columns left over. Partitioning acts on cluster rows only, so
//! every hypothesis is produced once.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::assignment::solve_min;

/// One joint association: `assignment[q]` is the target of cluster `q`, or
/// `None` for clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub assignment: Vec<Option<usize>>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Clusters left as clutter.
    pub fn clutter_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }

    /// True when target `i` receives no cluster.
    pub fn undetected(&self, i: usize) -> bool {
        !self.assignment.contains(&Some(i))
    }
}

/// Score of a full assignment, summed in cluster order.
pub fn hypothesis_score(cost: &[Vec<f64>], clutter: &[f64], assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(q, a)| match a {
            Some(i) => cost[q][*i],
            None => clutter[q],
        })
        .sum()
}

#[derive(Debug, Clone)]
struct Node {
    score: f64,
    assignment: Vec<Option<usize>>,
    /// Choices fixed for cluster rows.
    fixed: Vec<Option<Option<usize>>>,
    /// Choices forbidden per cluster row.
    forbidden: Vec<Vec<Option<usize>>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: higher score first, then lexicographically smaller assignment
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.assignment.cmp(&self.assignment))
    }
}

fn solve_node(
    cost: &[Vec<f64>],
    clutter: &[f64],
    fixed: &[Option<Option<usize>>],
    forbidden: &[Vec<Option<usize>>],
) -> Option<Vec<Option<usize>>> {
    let kappa = cost.len();
    let n = if kappa > 0 { cost[0].len() } else { 0 };
    let size = kappa + n;
    let inf = f64::INFINITY;
    let mut m = vec![vec![inf; size]; size];
    for q in 0..kappa {
        let allowed = |choice: Option<usize>| match fixed[q] {
            Some(f) => f == choice,
            None => !forbidden[q].contains(&choice),
        };
        for i in 0..n {
            if allowed(Some(i)) && cost[q][i] > f64::NEG_INFINITY && !cost[q][i].is_nan() {
                m[q][i] = -cost[q][i];
            }
        }
        if allowed(None) && clutter[q] > f64::NEG_INFINITY {
            m[q][n + q] = -clutter[q];
        }
    }
    for i in 0..n {
        let row = &mut m[kappa + i];
        row[i] = 0.0;
        for c in row.iter_mut().skip(n) {
            *c = 0.0;
        }
    }
    let (cols, _) = solve_min(&m)?;
    Some(
        cols[..kappa]
            .iter()
            .map(|&c| if c < n { Some(c) } else { None })
            .collect(),
    )
}

/// The `k` best hypotheses under per-cluster clutter scores, best first.
///
/// Ties at equal score are ordered lexicographically by assignment (clutter
/// before any target). A tie straddling the k-th place is resolved by the
/// same order.
pub fn murty_kbest_with_clutter(cost: &[Vec<f64>], clutter: &[f64], k: usize) -> Vec<Hypothesis> {
    let kappa = cost.len();
    assert_eq!(clutter.len(), kappa, "one clutter score per cluster");
    if k == 0 {
        return Vec::new();
    }
    let fixed = vec![None; kappa];
    let forbidden = vec![Vec::new(); kappa];
    let mut heap = BinaryHeap::new();
    if let Some(a) = solve_node(cost, clutter, &fixed, &forbidden) {
        heap.push(Node {
            score: hypothesis_score(cost, clutter, &a),
            assignment: a,
            fixed,
            forbidden,
        });
    }
    let mut out: Vec<Hypothesis> = Vec::new();
    while let Some(node) = heap.pop() {
        if out.len() >= k && node.score < out[k - 1].log_prob {
            break;
        }
        for t in 0..kappa {
            if node.fixed[t].is_some() {
                continue;
            }
            let mut fixed = node.fixed.clone();
            for (q, f) in fixed.iter_mut().enumerate().take(t) {
                *f = Some(node.assignment[q]);
            }
            let mut forbidden = node.forbidden.clone();
            forbidden[t].push(node.assignment[t]);
            if let Some(a) = solve_node(cost, clutter, &fixed, &forbidden) {
                heap.push(Node {
                    score: hypothesis_score(cost, clutter, &a),
                    assignment: a,
                    fixed,
                    forbidden,
                });
            }
        }
        out.push(Hypothesis {
            assignment: node.assignment,
            log_prob: node.score,
        });
    }
    out.sort_by(|a, b| {
        b.log_prob
            .total_cmp(&a.log_prob)
            .then_with(|| a.assignment.cmp(&b.assignment))
    });
    out.truncate(k);
    out
}

/// k-best with zero clutter score.
pub fn murty_kbest(cost: &[Vec<f64>], k: usize) -> Vec<Hypothesis> {
    let clutter = vec![0.0; cost.len()];
    murty_kbest_with_clutter(cost, &clutter, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_has_two_hypotheses() {
        let h = murty_kbest(&[vec![-1.0]], 10);
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].assignment, vec![None]);
        assert_eq!(h[1].assignment, vec![Some(0)]);
        let h = murty_kbest(&[vec![2.0]], 10);
        assert_eq!(h[0].assignment, vec![Some(0)]);
        assert_eq!(h[0].log_prob, 2.0);
    }

    #[test]
    fn two_by_two_has_seven() {
        let h = murty_kbest(&[vec![1.0, 2.0], vec![3.0, -4.0]], 10);
        assert_eq!(h.len(), 7);
        assert_eq!(h[0].assignment, vec![Some(1), Some(0)]);
        assert_eq!(h[0].log_prob, 5.0);
        for w in h.windows(2) {
            assert!(w[0].log_prob >= w[1].log_prob);
        }
    }

    #[test]
    fn no_clusters_gives_the_empty_hypothesis() {
        let h = murty_kbest(&[], 10);
        assert_eq!(h, vec![Hypothesis { assignment: vec![], log_prob: 0.0 }]);
    }

    #[test]
    fn forbidden_pairing_never_appears() {
        let h = murty_kbest(&[vec![f64::NEG_INFINITY, 1.0]], 10);
        assert!(h.iter().all(|x| x.assignment[0] != Some(0)));
        assert_eq!(h.len(), 2);
    }
}
