use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::{digamma, ln_gamma};

use vbtrack::foreground::{FrameMeasurements, Measurement};
use vbtrack::vbcluster::{
    cluster, e_step, farthest_point_seeds, fit, lower_bound, m_step, ClusterPosterior, ClusteringConfig,
    Responsibilities, VbPriors,
};

// Plain-array 2x2 helpers for the oracle.
type M2 = [[f64; 2]; 2];

fn det(a: M2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

fn inv(a: M2) -> M2 {
    let d = det(a);
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

fn quad(a: M2, v: [f64; 2]) -> f64 {
    v[0] * (a[0][0] * v[0] + a[0][1] * v[1]) + v[1] * (a[1][0] * v[0] + a[1][1] * v[1])
}

fn trace_prod(a: M2, b: M2) -> f64 {
    (0..2).map(|i| (0..2).map(|j| a[i][j] * b[j][i]).sum::<f64>()).sum()
}

fn m2(m: &nalgebra::Matrix2<f64>) -> M2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn ln_b(w: M2, nu: f64) -> f64 {
    -0.5 * nu * det(w).ln()
        - (nu * std::f64::consts::LN_2 + 0.5 * std::f64::consts::PI.ln() + ln_gamma(nu / 2.0) + ln_gamma((nu - 1.0) / 2.0))
}

fn ln_c(alphas: &[f64]) -> f64 {
    ln_gamma(alphas.iter().sum()) - alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

struct OracleComponent {
    alpha: f64,
    beta: f64,
    m: [f64; 2],
    w: M2,
    nu: f64,
    n: f64,
    xbar: [f64; 2],
    s: M2,
}

/// Textbook VB-GMM posterior from responsibilities, without regularization.
fn oracle_m_step(x: &[[f64; 2]], r: &[Vec<f64>], p: &VbPriors) -> Vec<OracleComponent> {
    let k = p.m0.len();
    let w0_inv = inv(m2(&p.w0));
    (0..k)
        .map(|q| {
            let n: f64 = r.iter().map(|row| row[q]).sum();
            let m0 = [p.m0[q].x, p.m0[q].y];
            let xbar = if n > 0.0 {
                let sx: f64 = x.iter().zip(r).map(|(v, row)| row[q] * v[0]).sum();
                let sy: f64 = x.iter().zip(r).map(|(v, row)| row[q] * v[1]).sum();
                [sx / n, sy / n]
            } else {
                m0
            };
            let mut s = [[0.0; 2]; 2];
            if n > 0.0 {
                for (v, row) in x.iter().zip(r) {
                    let d = [v[0] - xbar[0], v[1] - xbar[1]];
                    for i in 0..2 {
                        for j in 0..2 {
                            s[i][j] += row[q] * d[i] * d[j] / n;
                        }
                    }
                }
            }
            let beta = p.beta0 + n;
            let m = [(p.beta0 * m0[0] + n * xbar[0]) / beta, (p.beta0 * m0[1] + n * xbar[1]) / beta];
            let d = [xbar[0] - m0[0], xbar[1] - m0[1]];
            let mut wi = w0_inv;
            for i in 0..2 {
                for j in 0..2 {
                    wi[i][j] += n * s[i][j] + p.beta0 * n / beta * d[i] * d[j];
                }
            }
            OracleComponent {
                alpha: p.alpha0 + n,
                beta,
                m,
                w: inv(wi),
                nu: p.nu0 + n,
                n,
                xbar,
                s,
            }
        })
        .collect()
}

fn ln_lambda(c: &OracleComponent) -> f64 {
    digamma(c.nu / 2.0) + digamma((c.nu - 1.0) / 2.0) + 2.0 * std::f64::consts::LN_2 + det(c.w).ln()
}

fn ln_pi(comps: &[OracleComponent]) -> Vec<f64> {
    let total: f64 = comps.iter().map(|c| c.alpha).sum();
    comps.iter().map(|c| digamma(c.alpha) - digamma(total)).collect()
}

/// Textbook responsibilities.
fn oracle_e_step(x: &[[f64; 2]], comps: &[OracleComponent]) -> Vec<Vec<f64>> {
    let lp = ln_pi(comps);
    x.iter()
        .map(|v| {
            let l: Vec<f64> = comps
                .iter()
                .zip(&lp)
                .map(|(c, lpi)| {
                    let d = [v[0] - c.m[0], v[1] - c.m[1]];
                    lpi + 0.5 * ln_lambda(c) - (2.0 * std::f64::consts::PI).ln() - 0.5 * (2.0 / c.beta + c.nu * quad(c.w, d))
                })
                .collect();
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Textbook bound, term by term.
fn oracle_bound(r: &[Vec<f64>], comps: &[OracleComponent], p: &VbPriors) -> f64 {
    let dd = 2.0;
    let k = comps.len() as f64;
    let lp = ln_pi(comps);
    let w0 = m2(&p.w0);
    let w0_inv = inv(w0);
    let tau = std::f64::consts::TAU;
    let mut e_px = 0.0;
    let mut e_pml = 0.0;
    let mut e_qml = 0.0;
    for (q, c) in comps.iter().enumerate() {
        let ll = ln_lambda(c);
        let d = [c.xbar[0] - c.m[0], c.xbar[1] - c.m[1]];
        e_px += 0.5 * c.n * (ll - dd / c.beta - c.nu * trace_prod(c.s, c.w) - c.nu * quad(c.w, d) - dd * tau.ln());
        let dm = [c.m[0] - p.m0[q].x, c.m[1] - p.m0[q].y];
        e_pml += 0.5 * (dd * (p.beta0 / tau).ln() + ll - dd * p.beta0 / c.beta - p.beta0 * c.nu * quad(c.w, dm))
            + 0.5 * (p.nu0 - dd - 1.0) * ll
            - 0.5 * c.nu * trace_prod(w0_inv, c.w);
        let h = -ln_b(c.w, c.nu) - 0.5 * (c.nu - dd - 1.0) * ll + 0.5 * c.nu * dd;
        e_qml += 0.5 * ll + 0.5 * dd * (c.beta / tau).ln() - 0.5 * dd - h;
    }
    e_pml += k * ln_b(w0, p.nu0);
    let mut e_pz = 0.0;
    let mut e_qz = 0.0;
    for row in r {
        for (q, &v) in row.iter().enumerate() {
            if v > 0.0 {
                e_pz += v * lp[q];
                e_qz += v * v.ln();
            }
        }
    }
    let e_ppi = ln_c(&vec![p.alpha0; comps.len()]) + (p.alpha0 - 1.0) * lp.iter().sum::<f64>();
    let alphas: Vec<f64> = comps.iter().map(|c| c.alpha).collect();
    let e_qpi = comps.iter().zip(&lp).map(|(c, l)| (c.alpha - 1.0) * l).sum::<f64>() + ln_c(&alphas);
    e_px + e_pz + e_ppi + e_pml - e_qz - e_qpi - e_qml
}

fn blobs(rng: &mut ChaCha8Rng, centers: &[(f64, f64)], n: usize, sigma: f64) -> Vec<[f64; 2]> {
    let noise = Normal::new(0.0, sigma).unwrap();
    centers
        .iter()
        .flat_map(|&(cx, cy)| (0..n).map(|_| [cx + noise.sample(rng), cy + noise.sample(rng)]).collect::<Vec<_>>())
        .collect()
}

fn vecs(x: &[[f64; 2]]) -> Vec<Vector2<f64>> {
    x.iter().map(|v| Vector2::new(v[0], v[1])).collect()
}

fn rows(r: &Responsibilities) -> Vec<Vec<f64>> {
    (0..r.rows).map(|j| r.row(j).to_vec()).collect()
}

fn random_priors(rng: &mut ChaCha8Rng, k: usize) -> VbPriors {
    let cfg = ClusteringConfig::default();
    cfg.priors((0..k).map(|_| Vector2::new(rng.random_range(0.0..120.0), rng.random_range(0.0..120.0))).collect())
}

#[test]
fn m_step_matches_textbook_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let x = blobs(&mut rng, &[(20.0, 30.0), (80.0, 90.0)], 60, 6.0);
        let priors = random_priors(&mut rng, 4);
        let r = e_step(&vecs(&x), &ClusterPosterior::from_priors(&priors)).unwrap();
        let post = m_step(&vecs(&x), &r, &priors).unwrap();
        let oracle = oracle_m_step(&x, &rows(&r), &priors);
        for (c, o) in post.components.iter().zip(&oracle) {
            assert!((c.alpha - o.alpha).abs() < 1e-9 && (c.beta - o.beta).abs() < 1e-9 && (c.nu - o.nu).abs() < 1e-9);
            assert!((c.m.x - o.m[0]).abs() < 1e-9 && (c.m.y - o.m[1]).abs() < 1e-9);
            let w = m2(&c.w);
            for i in 0..2 {
                for j in 0..2 {
                    let tol = 1e-6 * o.w[i][i].abs().max(o.w[j][j].abs());
                    assert!((w[i][j] - o.w[i][j]).abs() <= tol, "{w:?} vs {:?}", o.w);
                }
            }
        }
    }
}

#[test]
fn e_step_and_bound_match_textbook() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let x = blobs(&mut rng, &[(20.0, 30.0), (60.0, 40.0), (90.0, 100.0)], 50, 5.0);
        let priors = random_priors(&mut rng, 5);
        let pts = vecs(&x);
        let r0 = e_step(&pts, &ClusterPosterior::from_priors(&priors)).unwrap();
        let post = m_step(&pts, &r0, &priors).unwrap();
        let r = e_step(&pts, &post).unwrap();
        let post = m_step(&pts, &r, &priors).unwrap();

        // oracle driven by the implementation's W so the tiny regularizer cancels
        let mut oracle = oracle_m_step(&x, &rows(&r), &priors);
        for (o, c) in oracle.iter_mut().zip(&post.components) {
            o.w = m2(&c.w);
        }
        let bound = lower_bound(&r, &post, &priors);
        let expect = oracle_bound(&rows(&r), &oracle, &priors);
        assert!((bound - expect).abs() <= 1e-9 * expect.abs().max(1.0), "{bound} vs {expect}");

        let r_next = e_step(&pts, &post).unwrap();
        let o_next = oracle_e_step(&x, &oracle);
        for (j, row) in o_next.iter().enumerate() {
            for (a, b) in r_next.row(j).iter().zip(row) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn responsibility_rows_sum_to_one_every_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = blobs(&mut rng, &[(30.0, 30.0), (100.0, 40.0)], 200, 8.0);
    let pts = vecs(&x);
    let priors = random_priors(&mut rng, 6);
    let mut post = ClusterPosterior::from_priors(&priors);
    for _ in 0..60 {
        let r = e_step(&pts, &post).unwrap();
        for j in 0..r.rows {
            let s: f64 = r.row(j).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(r.row(j).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        post = m_step(&pts, &r, &priors).unwrap();
    }
}

#[test]
fn bound_never_decreases_on_twenty_datasets() {
    let cfg = ClusteringConfig {
        tolerance: 0.0,
        max_iterations: 60,
        ..ClusteringConfig::default()
    };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n_blobs = rng.random_range(1..=4);
        let centers: Vec<(f64, f64)> =
            (0..n_blobs).map(|_| (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0))).collect();
        let sigma = rng.random_range(3.0..12.0);
        let x = blobs(&mut rng, &centers, 150, sigma);
        let priors = random_priors(&mut rng, n_blobs + 2);
        let f = fit(&vecs(&x), &priors, &cfg).unwrap();
        assert!(f.bounds.len() >= 51, "seed {seed}: {} passes", f.bounds.len());
        for w in f.bounds.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

fn blob_frame(x: &[[f64; 2]]) -> FrameMeasurements {
    let ms = x
        .iter()
        .map(|v| Measurement::new(v[0].round().max(0.0) as u32, v[1].round().max(0.0) as u32, [0, 0, 0]))
        .collect();
    FrameMeasurements::new(0, ms)
}

/// Recovered count on three 500-point blobs at 6σ separation or more,
/// seeded from six farthest points.
fn three_blob_recoveries(runs: u64, cfg: &ClusteringConfig) -> usize {
    let sigma = 6.0;
    (0..runs)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = (rng.random_range(60.0..100.0), rng.random_range(60.0..100.0));
            let sep = 6.0 * sigma + rng.random_range(0.0..30.0);
            let centers = [base, (base.0 + sep, base.1), (base.0 + sep / 2.0, base.1 + sep)];
            let x = blobs(&mut rng, &centers, 500, sigma);
            let frame = blob_frame(&x);
            let seeds = farthest_point_seeds(&frame.positions(), 6, frame.positions()[0], 0.0);
            let priors = cfg.priors(seeds.iter().map(|&(a, b)| Vector2::new(a, b)).collect());
            cluster(&frame, &priors, cfg).unwrap().len() == 3
        })
        .count()
}

#[test]
fn converged_fit_recovers_three_blobs() {
    // spare components drain slowly, so let every fit run to the tolerance
    let cfg = ClusteringConfig {
        max_iterations: 20_000,
        ..ClusteringConfig::default()
    };
    assert_eq!(three_blob_recoveries(40, &cfg), 40);
}

#[test]
fn clusters_under_the_minimum_are_always_pruned() {
    let cfg = ClusteringConfig::default();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = rng.random_range(5..100);
        let mut x = blobs(&mut rng, &[(40.0, 40.0)], 400, 5.0);
        x.extend(blobs(&mut rng, &[(160.0, 160.0)], small, 3.0));
        let frame = blob_frame(&x);
        let priors = cfg.priors(vec![Vector2::new(40.0, 40.0), Vector2::new(160.0, 160.0)]);
        let set = cluster(&frame, &priors, &cfg).unwrap();
        assert!(set.clusters.iter().all(|c| c.pixel_count() >= 100));
        assert_eq!(set.len(), 1, "seed {seed}, small blob of {small}");
        let unassigned = set.assignment.iter().filter(|a| a.is_none()).count();
        assert_eq!(unassigned, frame.len() - set.clusters[0].pixel_count());
    }
}

