//! Independently written reference implementations (oracles) shared by
//! the focused oracle tests and the end-to-end acceptance suite. None of
//! this code is shared with the library internals it checks.

#![allow(dead_code)]

use curveclust::dataset::{Curve, FunctionalDataset};
use curveclust::mixhmmr::{forward_backward, MarkovChainParams};
use curveclust::mixreg::FitOptions;
use curveclust::mixrhlp::{irls_gradient, irls_multiclass, irls_objective, LogisticParams};
use curveclust::pwrm::{dp_segment, fit_cem_pwrm, CemOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------
// Exhaustive segmentation oracle for the dynamic program.

/// Closed-form pooled weighted RSS of one segment [a, b).
fn segment_rss(
    xs: &[f64],
    curves: &[Vec<f64>],
    weights: &[f64],
    a: usize,
    b: usize,
    degree: usize,
) -> f64 {
    let w_total: f64 = weights.iter().sum();
    let len = (b - a) as f64;
    let sx: f64 = xs[a..b].iter().sum();
    let sxx: f64 = xs[a..b].iter().map(|x| x * x).sum();
    let mut t0 = 0.0;
    let mut t1 = 0.0;
    let mut q = 0.0;
    for (ys, &w) in curves.iter().zip(weights) {
        for j in a..b {
            t0 += w * ys[j];
            t1 += w * xs[j] * ys[j];
            q += w * ys[j] * ys[j];
        }
    }
    match degree {
        0 => q - t0 * t0 / (w_total * len),
        1 => {
            // normal equations for the pooled line fit
            let s00 = w_total * len;
            let s01 = w_total * sx;
            let s11 = w_total * sxx;
            let det = s00 * s11 - s01 * s01;
            let b0 = (s11 * t0 - s01 * t1) / det;
            let b1 = (s00 * t1 - s01 * t0) / det;
            q - b0 * t0 - b1 * t1
        }
        _ => unreachable!(),
    }
}

/// Enumerate all cut vectors 0 = c_0 < ... < c_R = m with segments of at
/// least `degree + 1` points, lexicographically, keeping the first
/// minimizer under strict improvement.
fn brute_force_segmentation(
    xs: &[f64],
    curves: &[Vec<f64>],
    weights: &[f64],
    r: usize,
    degree: usize,
) -> (Vec<usize>, f64) {
    let m = xs.len();
    let min_len = degree + 1;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut cuts = vec![0usize; r + 1];
    cuts[r] = m;
    fn rec(
        xs: &[f64],
        curves: &[Vec<f64>],
        weights: &[f64],
        degree: usize,
        min_len: usize,
        cuts: &mut Vec<usize>,
        pos: usize,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        let r = cuts.len() - 1;
        if pos == r {
            let cost: f64 = (0..r)
                .map(|s| segment_rss(xs, curves, weights, cuts[s], cuts[s + 1], degree))
                .sum();
            if best.as_ref().map_or(true, |(_, c)| cost < *c) {
                *best = Some((cuts.clone(), cost));
            }
            return;
        }
        let lo = cuts[pos - 1] + min_len;
        let hi = cuts[r] - min_len * (r - pos);
        for c in lo..=hi {
            cuts[pos] = c;
            rec(xs, curves, weights, degree, min_len, cuts, pos + 1, best);
        }
    }
    rec(xs, curves, weights, degree, min_len, &mut cuts, 1, &mut best);
    best.unwrap()
}

fn dp_random_instance(
    seed: u64,
    m: usize,
    n: usize,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, FunctionalDataset<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..m).map(|j| j as f64).collect();
    // a step in the mean so segmentations are nontrivial
    let jump_at = rng.gen_range(1..m);
    let mut curves_ys = Vec::with_capacity(n);
    let mut curves = Vec::with_capacity(n);
    for i in 0..n {
        let ys: Vec<f64> = (0..m)
            .map(|j| {
                let base = if j < jump_at { 0.0 } else { 2.0 };
                base + 0.3 * j as f64 * rng.gen::<f64>() + rng.gen::<f64>()
            })
            .collect();
        curves.push(Curve::new(format!("c{i}"), xs.clone(), ys.clone(), None).unwrap());
        curves_ys.push(ys);
    }
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    let dataset = FunctionalDataset::new(curves).unwrap();
    (xs, curves_ys, weights, dataset)
}

/// Run dp_segment against exhaustive enumeration over the full small
/// grid (m up to 12, R in 1..=3, degree in {0,1}); exact boundary match,
/// cost within 1e-9 relative. Returns the number of instances checked.
pub fn dp_check_grid() -> usize {
    let mut checked = 0usize;
    for m in [4usize, 6, 9, 12] {
        for r in 1usize..=3 {
            for degree in 0usize..=1 {
                if m < (degree + 1) * r {
                    continue;
                }
                for seed in 0..4u64 {
                    let (xs, ys, weights, dataset) =
                        dp_random_instance(seed.wrapping_add((m * 100 + r * 10 + degree) as u64), m, 3);
                    let fit = dp_segment(&dataset, &weights, r, degree, 1e-8).unwrap();
                    let (oracle_cuts, oracle_cost) =
                        brute_force_segmentation(&xs, &ys, &weights, r, degree);
                    assert_eq!(
                        fit.segmentation.cuts, oracle_cuts,
                        "boundaries differ (m={m} R={r} degree={degree} seed={seed})"
                    );
                    let tol = 1e-9 * oracle_cost.abs().max(1.0);
                    assert!(
                        (fit.cost - oracle_cost).abs() <= tol,
                        "cost {} vs oracle {} (m={m} R={r} degree={degree} seed={seed})",
                        fit.cost,
                        oracle_cost
                    );
                    checked += 1;
                }
            }
        }
    }
    checked
}

// ---------------------------------------------------------------------
// Path-enumeration oracle for the forward-backward recursions.

fn normal_pdf(y: f64, mean: f64, s2: f64) -> f64 {
    (-(y - mean) * (y - mean) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
}

pub struct PathOracle {
    pub gamma: DMatrix<f64>,
    pub xi: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

/// Sum the joint density over every one of the R^m state paths directly:
/// no recursion, no rescaling.
pub fn enumerate_paths(
    ys: &[f64],
    design: &DMatrix<f64>,
    chain: &MarkovChainParams<f64>,
    betas: &[DVector<f64>],
    sigma2s: &[f64],
) -> PathOracle {
    let m = ys.len();
    let r = chain.r();
    let emis: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            (0..r)
                .map(|s| {
                    let mean = design.row(j).transpose().dot(&betas[s]);
                    normal_pdf(ys[j], mean, sigma2s[s])
                })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    let mut gamma = DMatrix::zeros(m, r);
    let mut xi = vec![DMatrix::zeros(r, r); m - 1];
    let paths = (r as u64).pow(m as u32);
    let mut path = vec![0usize; m];
    for code in 0..paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = (c % r as u64) as usize;
            c /= r as u64;
        }
        let mut p = chain.initial[path[0]] * emis[0][path[0]];
        for j in 1..m {
            p *= chain.transition[(path[j - 1], path[j])] * emis[j][path[j]];
        }
        total += p;
        for j in 0..m {
            gamma[(j, path[j])] += p;
        }
        for j in 0..m - 1 {
            xi[j][(path[j], path[j + 1])] += p;
        }
    }
    gamma /= total;
    for x in &mut xi {
        *x /= total;
    }
    PathOracle {
        gamma,
        xi,
        loglik: total.ln(),
    }
}

fn random_chain(rng: &mut ChaCha8Rng, r: usize, left_right: bool) -> MarkovChainParams<f64> {
    let mut initial: Vec<f64> = (0..r).map(|_| rng.gen_range(0.1..1.0)).collect();
    if left_right {
        // mass concentrated on the first state, as the fitter uses
        for (s, v) in initial.iter_mut().enumerate() {
            if s > 0 {
                *v *= 0.2;
            }
        }
    }
    let tot: f64 = initial.iter().sum();
    for v in &mut initial {
        *v /= tot;
    }
    let mut transition = DMatrix::zeros(r, r);
    for l in 0..r {
        let from = if left_right { l } else { 0 };
        for s in from..r {
            transition[(l, s)] = rng.gen_range(0.1..1.0);
        }
        let row: f64 = (0..r).map(|s| transition[(l, s)]).sum();
        for s in 0..r {
            transition[(l, s)] /= row;
        }
    }
    MarkovChainParams {
        initial,
        transition,
        left_right,
    }
}

/// Check gamma, xi and the log-likelihood against path enumeration on
/// `cases` random parameterizations (1e-10 absolute).
pub fn fb_check(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..cases {
        let r = rng.gen_range(1..=3usize);
        let m = rng.gen_range(2..=8usize);
        let left_right = case % 2 == 0;
        let chain = random_chain(&mut rng, r, left_right);
        let xs: Vec<f64> = (0..m).map(|j| j as f64 / m as f64).collect();
        let design = DMatrix::from_fn(m, 2, |j, c| if c == 0 { 1.0 } else { xs[j] });
        let betas: Vec<DVector<f64>> = (0..r)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let sigma2s: Vec<f64> = (0..r).map(|_| rng.gen_range(0.3..2.0)).collect();
        let ys: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();

        let got = forward_backward(&ys, &design, &chain, &betas, &sigma2s).unwrap();
        let want = enumerate_paths(&ys, &design, &chain, &betas, &sigma2s);

        assert!(
            (got.loglik - want.loglik).abs() <= 1e-10,
            "loglik {} vs {} (case {case})",
            got.loglik,
            want.loglik
        );
        for j in 0..m {
            for s in 0..r {
                assert!(
                    (got.gamma[(j, s)] - want.gamma[(j, s)]).abs() <= 1e-10,
                    "gamma[({j},{s})] differs (case {case})"
                );
            }
        }
        for j in 0..m - 1 {
            for l in 0..r {
                for s in 0..r {
                    assert!(
                        (got.xi[j][(l, s)] - want.xi[j][(l, s)]).abs() <= 1e-10,
                        "xi[{j}][({l},{s})] differs (case {case})"
                    );
                }
            }
        }
    }
}

// ---------------------------------------------------------------------
// Finite-difference oracle for the IRLS gradient.

fn irls_random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, DMatrix<f64>, LogisticParams<f64>) {
    let m = rng.gen_range(5..=40usize);
    let r = rng.gen_range(2..=4usize);
    let xs: Vec<f64> = (0..m).map(|j| j as f64 / m as f64).collect();
    // posterior-like target rows: nonnegative, row mass in (0, 1]
    let mut targets = DMatrix::zeros(m, r);
    for j in 0..m {
        let mut row: Vec<f64> = (0..r).map(|_| rng.gen_range(0.0..1.0)).collect();
        let tot: f64 = row.iter().sum();
        let mass = rng.gen_range(0.2..1.0);
        for v in &mut row {
            *v *= mass / tot;
        }
        for (s, &v) in row.iter().enumerate() {
            targets[(j, s)] = v;
        }
    }
    let w = LogisticParams {
        w: (0..r - 1)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-5.0..5.0)])
            .collect(),
    };
    (xs, targets, w)
}

/// Analytic gradient vs. central finite differences, 1e-5 relative.
pub fn irls_gradient_check(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..cases {
        let (xs, targets, w) = irls_random_instance(&mut rng);
        let grad = irls_gradient(&xs, &targets, &w);
        let h = 1e-6;
        for idx in 0..grad.len() {
            let (r, c) = (idx / 2, idx % 2);
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus.w[r][c] += h;
            minus.w[r][c] -= h;
            let fd =
                (irls_objective(&xs, &targets, &plus) - irls_objective(&xs, &targets, &minus))
                    / (2.0 * h);
            let denom = grad[idx].abs().max(fd.abs()).max(1e-4);
            assert!(
                (grad[idx] - fd).abs() / denom <= 1e-5,
                "component {idx}: analytic {} vs fd {} (case {case})",
                grad[idx],
                fd
            );
        }
    }
}

/// The step-halved Newton ascent never ends below its starting value.
pub fn irls_ascent_check(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..cases {
        let (xs, targets, init) = irls_random_instance(&mut rng);
        let start = irls_objective(&xs, &targets, &init);
        let (fitted, report) = irls_multiclass(&xs, &targets, &init).unwrap();
        let end = irls_objective(&xs, &targets, &fitted);
        assert!(
            end >= start - 1e-12 && report.objective >= start - 1e-12,
            "objective decreased: {start} -> {end} (case {case})"
        );
    }
}

// ---------------------------------------------------------------------
// Distortion-minimization (segmental K-means) oracle for constrained
// CEM on the piecewise mixture.

pub struct DistortionState {
    pub labels: Vec<usize>,
    pub cuts: Vec<Vec<usize>>,
}

/// Mean-based RSS of members over segment [a, b).
fn seg_cost(ys: &[&[f64]], a: usize, b: usize) -> f64 {
    let cnt = (ys.len() * (b - a)) as f64;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for y in ys {
        for j in a..b {
            sum += y[j];
            sq += y[j] * y[j];
        }
    }
    sq - sum * sum / cnt
}

/// Exhaustive best segmentation into `r` nonempty segments; first
/// minimizer in lexicographic cut order wins.
fn best_cuts(ys: &[&[f64]], m: usize, r: usize) -> (Vec<usize>, Vec<f64>) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut cuts = vec![0usize; r + 1];
    cuts[r] = m;
    fn rec(ys: &[&[f64]], cuts: &mut Vec<usize>, pos: usize, best: &mut Option<(Vec<usize>, f64)>) {
        let r = cuts.len() - 1;
        let m = cuts[r];
        if pos == r {
            let cost: f64 = (0..r).map(|s| seg_cost(ys, cuts[s], cuts[s + 1])).sum();
            if best.as_ref().map_or(true, |(_, c)| cost < *c) {
                *best = Some((cuts.clone(), cost));
            }
            return;
        }
        for c in (cuts[pos - 1] + 1)..=(m - (r - pos)) {
            cuts[pos] = c;
            rec(ys, cuts, pos + 1, best);
        }
    }
    rec(ys, &mut cuts, 1, &mut best);
    let (cuts, _) = best.unwrap();
    // segment means for the distortion step
    let means = (0..r)
        .map(|s| {
            let cnt = (ys.len() * (cuts[s + 1] - cuts[s])) as f64;
            ys.iter()
                .map(|y| y[cuts[s]..cuts[s + 1]].iter().sum::<f64>())
                .sum::<f64>()
                / cnt
        })
        .collect();
    (cuts, means)
}

fn distortion(y: &[f64], cuts: &[usize], means: &[f64]) -> f64 {
    let mut d = 0.0;
    for s in 0..means.len() {
        for j in cuts[s]..cuts[s + 1] {
            let e = y[j] - means[s];
            d += e * e;
        }
    }
    d
}

/// Alternate (a) per-cluster optimal piecewise-constant segmentation by
/// exhaustive cut enumeration and (b) nearest-distortion reassignment,
/// with the fitter's tie-breaking (earliest cut vector, smallest cluster
/// index) and its empty-cluster repair rule.
pub fn distortion_loop(
    data: &[Vec<f64>],
    init: &[usize],
    k: usize,
    r: usize,
    max_iter: usize,
) -> DistortionState {
    let n = data.len();
    let m = data[0].len();
    let mut labels = init.to_vec();
    let mut cuts = vec![Vec::new(); k];
    for _ in 0..max_iter {
        // same repair rule as the fitter: refill an empty cluster with
        // the smallest-energy curve of the largest cluster
        for kk in 0..k {
            if !labels.contains(&kk) {
                let mut counts = vec![0usize; k];
                for &l in &labels {
                    counts[l] += 1;
                }
                let donor = (0..k).max_by_key(|&c| counts[c]).unwrap();
                let victim = (0..n)
                    .filter(|&i| labels[i] == donor)
                    .min_by(|&a, &b| {
                        let da: f64 = data[a].iter().map(|y| y * y).sum();
                        let db: f64 = data[b].iter().map(|y| y * y).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                labels[victim] = kk;
            }
        }
        let mut means = vec![Vec::new(); k];
        for kk in 0..k {
            let members: Vec<&[f64]> = (0..n)
                .filter(|&i| labels[i] == kk)
                .map(|i| data[i].as_slice())
                .collect();
            let (c, mu) = best_cuts(&members, m, r);
            cuts[kk] = c;
            means[kk] = mu;
        }
        let new_labels: Vec<usize> = (0..n)
            .map(|i| {
                let mut best = 0usize;
                let mut best_d = distortion(&data[i], &cuts[0], &means[0]);
                for kk in 1..k {
                    let d = distortion(&data[i], &cuts[kk], &means[kk]);
                    if d < best_d {
                        best_d = d;
                        best = kk;
                    }
                }
                best
            })
            .collect();
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }
    DistortionState { labels, cuts }
}

/// Constrained CEM and the distortion loop must agree exactly —
/// identical hard partitions, identical per-cluster boundaries — on
/// `datasets` random small instances.
pub fn cem_distortion_check(datasets: usize) {
    for seed in 0..datasets as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(6..=10usize);
        let m = rng.gen_range(6..=9usize);
        let k = 2usize;
        let r = 2usize;
        let xs: Vec<f64> = (0..m).map(|j| j as f64).collect();
        let mut data = Vec::with_capacity(n);
        let mut curves = Vec::with_capacity(n);
        for i in 0..n {
            let group = i % k;
            let jump = if group == 0 { m / 3 } else { 2 * m / 3 };
            let ys: Vec<f64> = (0..m)
                .map(|j| {
                    let base = if j < jump { 0.0 } else { 3.0 + group as f64 };
                    base + rng.gen_range(-0.5..0.5)
                })
                .collect();
            data.push(ys.clone());
            curves.push(Curve::new(format!("c{i}"), xs.clone(), ys, None).unwrap());
        }
        let dataset = FunctionalDataset::new(curves).unwrap();
        let init: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();

        let opts = FitOptions::<f64> {
            max_iter: 100,
            ..FitOptions::default()
        };
        let cem = CemOptions {
            constrained: true,
            initial_labels: Some(init.clone()),
        };
        let fit = fit_cem_pwrm(&dataset, 0, &[r; 2], &opts, &cem).unwrap();
        let got_labels = fit.partition.hard_labels();
        let want = distortion_loop(&data, &init, k, r, 100);

        assert_eq!(got_labels, want.labels, "partition differs (seed {seed})");
        for kk in 0..k {
            assert_eq!(
                fit.params.clusters[kk].segmentation.cuts, want.cuts[kk],
                "cluster {kk} boundaries differ (seed {seed})"
            );
        }
    }
}
