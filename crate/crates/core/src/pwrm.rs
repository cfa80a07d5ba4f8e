//! Piecewise regression mixtures: simultaneous clustering of curves and
//! optimal segmentation of each cluster, via exact dynamic programming
//! inside EM or CEM. Requires a common abscissa grid because segment
//! index sets are shared by all curves of a cluster.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::mixreg::{random_partition, FitOptions, FitReport, SoftPartition};
use crate::scalar::{log_normal_pdf, log_sum_exp, Scalar};

/// Contiguous segmentation of a common grid of `m` points into `R`
/// segments: cut indices `0 = c_0 < c_1 < ... < c_R = m`, segment `r`
/// covering `[c_r, c_{r+1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub cuts: Vec<usize>,
}

impl Segmentation {
    pub fn r(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn segment(&self, r: usize) -> std::ops::Range<usize> {
        self.cuts[r]..self.cuts[r + 1]
    }
}

/// One cluster of a piecewise regression mixture: a segmentation plus
/// per-segment polynomial coefficients and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PwrmCluster<F> {
    pub segmentation: Segmentation,
    pub betas: Vec<DVector<F>>,
    pub sigma2s: Vec<F>,
}

/// Parameters of a K-cluster piecewise regression mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct PwrmParams<F> {
    pub alphas: Vec<F>,
    pub clusters: Vec<PwrmCluster<F>>,
}

impl<F: Scalar> PwrmParams<F> {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }
}

/// Result of one weighted optimal segmentation.
#[derive(Debug, Clone)]
pub struct DpSegmentFit<F> {
    pub segmentation: Segmentation,
    pub betas: Vec<DVector<F>>,
    /// Total weighted residual sum of squares.
    pub cost: F,
}

/// A fitted piecewise regression mixture.
#[derive(Debug, Clone)]
pub struct PwrmFit<F> {
    pub params: PwrmParams<F>,
    pub partition: SoftPartition<F>,
    pub report: FitReport<F>,
}

/// Shortest admissible segment: enough points for a determined
/// polynomial fit.
pub fn min_seg_len(degree: usize) -> usize {
    degree + 1
}

fn require_common_grid<F: Scalar>(dataset: &FunctionalDataset<F>) -> Result<()> {
    if dataset.common_grid() {
        Ok(())
    } else {
        Err(Error::NonCommonGrid(dataset.grid_offenders().join(", ")))
    }
}

/// Weighted per-point sufficient statistics over the curve set:
/// `s_j = sum_i w_i y_ij`, `q_j = sum_i w_i y_ij^2`, and `W = sum_i w_i`.
struct PointStats<F> {
    s: Vec<F>,
    q: Vec<F>,
    total_weight: F,
}

fn point_stats<F: Scalar>(dataset: &FunctionalDataset<F>, weights: &[F]) -> PointStats<F> {
    let m = dataset.curves()[0].len();
    let mut s = vec![F::zero(); m];
    let mut q = vec![F::zero(); m];
    let mut total_weight = F::zero();
    for (c, &w) in dataset.curves().iter().zip(weights) {
        total_weight += w;
        if w <= F::zero() {
            continue;
        }
        for (j, &y) in c.ys().iter().enumerate() {
            s[j] += w * y;
            q[j] += w * y * y;
        }
    }
    PointStats { s, q, total_weight }
}

/// All-pairs weighted segment costs.
///
/// `cost[a][b - a - min_len]` is the optimal weighted RSS over points
/// `[a, b)`; each entry costs one `p x p` solve thanks to incremental
/// Gram accumulation.
fn segment_costs<F: Scalar>(
    design: &DMatrix<F>,
    stats: &PointStats<F>,
    min_len: usize,
    ridge: F,
) -> Result<Vec<Vec<F>>> {
    let m = design.nrows();
    let p = design.ncols();
    let mut costs = vec![Vec::new(); m];
    for (a, row) in costs.iter_mut().enumerate() {
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut q_sum = F::zero();
        for b in a + 1..=m {
            let j = b - 1;
            let x = design.row(j).transpose();
            gram += &x * x.transpose() * stats.total_weight;
            rhs += &x * stats.s[j];
            q_sum += stats.q[j];
            if b - a >= min_len {
                let beta = solve_spd(&gram, &rhs, ridge)?;
                let mut c = q_sum - beta.dot(&rhs);
                if c < F::zero() {
                    c = F::zero();
                }
                row.push(c);
            }
        }
    }
    Ok(costs)
}

#[inline]
fn seg_cost<F: Scalar>(costs: &[Vec<F>], a: usize, b: usize, min_len: usize) -> F {
    costs[a][b - a - min_len]
}

/// Weighted OLS fit of one segment `[a, b)`.
fn segment_beta<F: Scalar>(
    design: &DMatrix<F>,
    stats: &PointStats<F>,
    a: usize,
    b: usize,
    ridge: F,
) -> Result<DVector<F>> {
    let p = design.ncols();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for j in a..b {
        let x = design.row(j).transpose();
        gram += &x * x.transpose() * stats.total_weight;
        rhs += &x * stats.s[j];
    }
    solve_spd(&gram, &rhs, ridge)
}

/// Optimal weighted segmentation of the common grid into `r` contiguous
/// polynomial segments, by exact dynamic programming over cut positions.
///
/// Minimizes `sum_r sum_i w_i sum_{j in I_r} (y_ij - beta_r' x_j)^2`;
/// ties are broken toward the lexicographically earliest cut vector.
pub fn dp_segment<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    weights: &[F],
    r: usize,
    degree: usize,
    ridge: F,
) -> Result<DpSegmentFit<F>> {
    require_common_grid(dataset)?;
    if weights.len() != dataset.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} curves",
            weights.len(),
            dataset.n()
        )));
    }
    if weights.iter().any(|w| *w < F::zero()) {
        return Err(Error::InvalidConfig("negative curve weight".into()));
    }
    let stats = point_stats(dataset, weights);
    if !(stats.total_weight > F::zero()) {
        return Err(Error::InvalidConfig("curve weights sum to zero".into()));
    }
    let grid = dataset.grid().unwrap();
    let m = grid.len();
    let min_len = min_seg_len(degree);
    if r < 1 || m < r * min_len {
        return Err(Error::InfeasibleSegmentation {
            m,
            segments: r,
            min_len,
        });
    }
    let design = DMatrix::from_fn(m, degree + 1, |i, j| grid[i].powi(j as i32));
    let costs = segment_costs(&design, &stats, min_len, ridge)?;

    // suffix[t][a]: optimal cost of covering [a, m) with t segments
    let mut suffix = vec![vec![F::fl(f64::INFINITY); m + 1]; r + 1];
    suffix[0][m] = F::zero();
    for t in 1..=r {
        // [a, m) must host t segments
        for a in (0..=m.saturating_sub(t * min_len)).rev() {
            let mut best = F::fl(f64::INFINITY);
            let hi = m - (t - 1) * min_len;
            for b in (a + min_len)..=hi {
                let tail = suffix[t - 1][b];
                if !tail.is_finite() {
                    continue;
                }
                let c = seg_cost(&costs, a, b, min_len) + tail;
                if c < best {
                    best = c;
                }
            }
            suffix[t][a] = best;
        }
    }
    let total = suffix[r][0];
    if !total.is_finite() {
        return Err(Error::InfeasibleSegmentation {
            m,
            segments: r,
            min_len,
        });
    }

    // left-to-right reconstruction keeps the earliest cut on ties
    let mut cuts = vec![0usize];
    let mut a = 0usize;
    for t in (1..=r).rev() {
        if t == 1 {
            cuts.push(m);
            break;
        }
        let hi = m - (t - 1) * min_len;
        let mut best = F::fl(f64::INFINITY);
        let mut best_b = a + min_len;
        for b in (a + min_len)..=hi {
            let tail = suffix[t - 1][b];
            if !tail.is_finite() {
                continue;
            }
            let c = seg_cost(&costs, a, b, min_len) + tail;
            if c < best {
                best = c;
                best_b = b;
            }
        }
        cuts.push(best_b);
        a = best_b;
    }
    let segmentation = Segmentation { cuts };
    let betas = (0..r)
        .map(|t| {
            let seg = segmentation.segment(t);
            segment_beta(&design, &stats, seg.start, seg.end, ridge)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DpSegmentFit {
        segmentation,
        betas,
        cost: total,
    })
}

/// Log-density of curve `i` under cluster `k`'s piecewise model.
pub fn cluster_loglik<F: Scalar>(
    ys: &[F],
    design: &DMatrix<F>,
    cluster: &PwrmCluster<F>,
) -> F {
    let mut ll = F::zero();
    for r in 0..cluster.segmentation.r() {
        let beta = &cluster.betas[r];
        let s2 = cluster.sigma2s[r];
        for j in cluster.segmentation.segment(r) {
            let mean = design.row(j).transpose().dot(beta);
            ll += log_normal_pdf(ys[j], mean, s2);
        }
    }
    ll
}

struct PwrmContext<F> {
    design: DMatrix<F>,
    floor: F,
    m: usize,
}

fn pwrm_context<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    opts: &FitOptions<F>,
) -> Result<PwrmContext<F>> {
    require_common_grid(dataset)?;
    let grid = dataset.grid().unwrap();
    let design = DMatrix::from_fn(grid.len(), degree + 1, |i, j| grid[i].powi(j as i32));
    let floor = opts
        .variance_floor
        .unwrap_or_else(|| F::fl(crate::mixreg::VARIANCE_FLOOR_FACTOR) * dataset.response_variance());
    Ok(PwrmContext {
        design,
        floor,
        m: grid.len(),
    })
}

fn e_step_pwrm<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &PwrmContext<F>,
    params: &PwrmParams<F>,
) -> Result<(SoftPartition<F>, F)> {
    let n = dataset.n();
    let k = params.k();
    let mut tau = DMatrix::zeros(n, k);
    let mut loglik = F::zero();
    let mut row = vec![F::zero(); k];
    for (i, c) in dataset.curves().iter().enumerate() {
        for (kk, r) in row.iter_mut().enumerate() {
            *r = params.alphas[kk].ln() + cluster_loglik(c.ys(), &ctx.design, &params.clusters[kk]);
        }
        let lse = log_sum_exp(&row);
        if !lse.is_finite() {
            return Err(Error::Degenerate(format!(
                "curve {i} has zero density under every cluster"
            )));
        }
        for kk in 0..k {
            tau[(i, kk)] = (row[kk] - lse).exp();
        }
        loglik += lse;
    }
    Ok((SoftPartition { tau }, loglik))
}

/// Per-cluster M-step: optimal segmentation on the weighted curves,
/// then per-segment weighted variances.
fn m_step_cluster<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &PwrmContext<F>,
    weights: &[F],
    r: usize,
    degree: usize,
    ridge: F,
) -> Result<PwrmCluster<F>> {
    let fit = dp_segment(dataset, weights, r, degree, ridge)?;
    let mass: F = weights.iter().fold(F::zero(), |a, &b| a + b);
    let mut sigma2s = Vec::with_capacity(r);
    for t in 0..r {
        let seg = fit.segmentation.segment(t);
        let beta = &fit.betas[t];
        let mut ssr = F::zero();
        for (c, &w) in dataset.curves().iter().zip(weights) {
            if w <= F::zero() {
                continue;
            }
            for j in seg.clone() {
                let resid = c.ys()[j] - ctx.design.row(j).transpose().dot(beta);
                ssr += w * resid * resid;
            }
        }
        let len = F::fl((seg.end - seg.start) as f64);
        let mut s2 = ssr / (mass * len);
        if s2 < ctx.floor {
            s2 = ctx.floor;
        }
        sigma2s.push(s2);
    }
    Ok(PwrmCluster {
        segmentation: fit.segmentation,
        betas: fit.betas,
        sigma2s,
    })
}

fn m_step_pwrm<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &PwrmContext<F>,
    partition: &SoftPartition<F>,
    rs: &[usize],
    degree: usize,
    ridge: F,
) -> Result<PwrmParams<F>> {
    let n = dataset.n();
    let nf = F::fl(n as f64);
    let k = rs.len();
    let mut alphas = Vec::with_capacity(k);
    let mut clusters = Vec::with_capacity(k);
    for kk in 0..k {
        let weights: Vec<F> = (0..n).map(|i| partition.tau[(i, kk)]).collect();
        let mass: F = weights.iter().fold(F::zero(), |a, &b| a + b);
        if mass < F::one() / (nf * nf) {
            return Err(Error::EmptyComponent { k: kk });
        }
        alphas.push(mass / nf);
        clusters.push(m_step_cluster(dataset, ctx, &weights, rs[kk], degree, ridge)?);
    }
    Ok(PwrmParams { alphas, clusters })
}

/// Fit a piecewise regression mixture by EM; cluster `k` has `rs[k]`
/// segments of polynomials of `degree`.
pub fn fit_em_pwrm<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    rs: &[usize],
    opts: &FitOptions<F>,
) -> Result<PwrmFit<F>> {
    let k = rs.len();
    if k < 1 {
        return Err(Error::InvalidConfig("at least one cluster required".into()));
    }
    let ctx = pwrm_context(dataset, degree, opts)?;
    let n = dataset.n();
    let mut best: Option<PwrmFit<F>> = None;
    let mut last_err = None;
    for t in 0..opts.n_init.max(1) {
        let seed = opts.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = random_partition::<F>(n, k, &mut rng);
        let run = (|| {
            let mut params =
                m_step_pwrm(dataset, &ctx, &SoftPartition { tau }, rs, degree, opts.ridge)?;
            let mut trace = Vec::new();
            let mut converged = false;
            let mut partition;
            loop {
                let (tau, loglik) = e_step_pwrm(dataset, &ctx, &params)?;
                partition = tau;
                if let Some(&prev) = trace.last() {
                    let denom: F = if prev == F::zero() { F::one() } else { prev };
                    if ((loglik - prev) / denom).mag() <= opts.tol {
                        trace.push(loglik);
                        converged = true;
                        break;
                    }
                }
                trace.push(loglik);
                if trace.len() >= opts.max_iter {
                    break;
                }
                params = m_step_pwrm(dataset, &ctx, &partition, rs, degree, opts.ridge)?;
            }
            let loglik = *trace.last().unwrap();
            Ok(PwrmFit {
                params,
                partition,
                report: FitReport {
                    iterations: trace.len(),
                    objective_trace: trace,
                    converged,
                    final_k: k,
                    loglik,
                    seed,
                },
            })
        })();
        match run {
            Ok(fit) => {
                if best
                    .as_ref()
                    .map_or(true, |b| fit.report.loglik > b.report.loglik)
                {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::Degenerate("all restarts failed".into())))
}

/// Options specific to the classification-EM fitter.
#[derive(Debug, Clone, Default)]
pub struct CemOptions {
    /// Equal proportions, one shared variance, degree 0: the optimized
    /// criterion becomes the distortion of the K-means-like algorithm.
    pub constrained: bool,
    /// Starting hard assignment (0-based); random partition when absent.
    pub initial_labels: Option<Vec<usize>>,
}

/// Fit by CEM: a hard classification step follows each E-step and the
/// complete-data log-likelihood is maximized.
pub fn fit_cem_pwrm<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    rs: &[usize],
    opts: &FitOptions<F>,
    cem: &CemOptions,
) -> Result<PwrmFit<F>> {
    let k = rs.len();
    if k < 1 {
        return Err(Error::InvalidConfig("at least one cluster required".into()));
    }
    if cem.constrained && degree != 0 {
        return Err(Error::InvalidConfig(
            "constrained mode requires degree 0 (piecewise-constant means)".into(),
        ));
    }
    let ctx = pwrm_context(dataset, degree, opts)?;
    let n = dataset.n();
    if let Some(init) = &cem.initial_labels {
        if init.len() != n || init.iter().any(|&l| l >= k) {
            return Err(Error::InvalidConfig(
                "initial labels must assign every curve to a valid cluster".into(),
            ));
        }
    }

    let run_from = |labels: Vec<usize>, seed: u64| -> Result<PwrmFit<F>> {
        let mut labels = labels;
        let mut trace: Vec<F> = Vec::new();
        let mut converged = false;
        let mut repairs = 0usize;
        let mut params;
        loop {
            // M-step from the current hard partition
            for kk in 0..k {
                if !labels.contains(&kk) {
                    // repair: move the worst-explained curve of the
                    // largest cluster into the empty one
                    repairs += 1;
                    if repairs > 3 {
                        return Err(Error::EmptyComponent { k: kk });
                    }
                    let mut counts = vec![0usize; k];
                    for &l in &labels {
                        counts[l] += 1;
                    }
                    let donor = (0..k).max_by_key(|&c| counts[c]).unwrap();
                    let victim = (0..n)
                        .filter(|&i| labels[i] == donor)
                        .min_by(|&a, &b| {
                            let ya = dataset.curves()[a].ys();
                            let yb = dataset.curves()[b].ys();
                            let da: F = ya.iter().fold(F::zero(), |s, &y| s + y * y);
                            let db: F = yb.iter().fold(F::zero(), |s, &y| s + y * y);
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap();
                    labels[victim] = kk;
                }
            }
            let mut tau = DMatrix::zeros(n, k);
            for (i, &l) in labels.iter().enumerate() {
                tau[(i, l)] = F::one();
            }
            let hard = SoftPartition { tau };
            params = m_step_pwrm(dataset, &ctx, &hard, rs, degree, opts.ridge)?;
            if cem.constrained {
                let mut counts = vec![0usize; k];
                for &l in &labels {
                    counts[l] += 1;
                }
                constrain_params(&ctx, &mut params, &counts, n)?;
            }

            // E-step + C-step
            let (soft, _) = e_step_pwrm(dataset, &ctx, &params)?;
            let new_labels = soft.hard_labels();
            let mut cll = F::zero();
            for (i, c) in dataset.curves().iter().enumerate() {
                let l = new_labels[i];
                cll += params.alphas[l].ln()
                    + cluster_loglik(c.ys(), &ctx.design, &params.clusters[l]);
            }
            let stable = new_labels == labels;
            labels = new_labels;
            trace.push(cll);
            if stable {
                converged = true;
                break;
            }
            if trace.len() >= opts.max_iter {
                break;
            }
        }
        let loglik = *trace.last().unwrap();
        let mut tau = DMatrix::zeros(n, k);
        for (i, &l) in labels.iter().enumerate() {
            tau[(i, l)] = F::one();
        }
        Ok(PwrmFit {
            params,
            partition: SoftPartition { tau },
            report: FitReport {
                iterations: trace.len(),
                objective_trace: trace,
                converged,
                final_k: k,
                loglik,
                seed,
            },
        })
    };

    if let Some(init) = &cem.initial_labels {
        return run_from(init.clone(), opts.seed);
    }
    let mut best: Option<PwrmFit<F>> = None;
    let mut last_err = None;
    for t in 0..opts.n_init.max(1) {
        let seed = opts.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = random_partition::<F>(n, k, &mut rng);
        let labels = SoftPartition { tau }.hard_labels();
        match run_from(labels, seed) {
            Ok(fit) => {
                if best
                    .as_ref()
                    .map_or(true, |b| fit.report.loglik > b.report.loglik)
                {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::Degenerate("all restarts failed".into())))
}

/// Equal proportions and the single maximum-likelihood variance shared
/// by every segment of every cluster: `sigma^2 = total RSS / (n m)`.
///
/// With a common variance and equal proportions the classification step
/// reduces to nearest weighted residual sum of squares, i.e. exactly the
/// distortion criterion of the K-means-like algorithm.
fn constrain_params<F: Scalar>(
    ctx: &PwrmContext<F>,
    params: &mut PwrmParams<F>,
    counts: &[usize],
    n: usize,
) -> Result<()> {
    let k = params.k();
    let kf = F::fl(k as f64);
    for a in params.alphas.iter_mut() {
        *a = F::one() / kf;
    }
    // reconstruct each cluster's RSS from its per-segment variances
    // (sigma2_kr = SSR_kr / (count_k * len_r) under a hard partition)
    let mut total_rss = F::zero();
    for (cluster, &count) in params.clusters.iter().zip(counts) {
        for r in 0..cluster.segmentation.r() {
            let seg = cluster.segmentation.segment(r);
            let len = F::fl((seg.end - seg.start) as f64);
            total_rss += cluster.sigma2s[r] * F::fl(count as f64) * len;
        }
    }
    let mut shared = total_rss / F::fl((n * ctx.m) as f64);
    if shared < ctx.floor {
        shared = ctx.floor;
    }
    for cluster in params.clusters.iter_mut() {
        for s2 in cluster.sigma2s.iter_mut() {
            *s2 = shared;
        }
    }
    Ok(())
}

/// Fitted cluster mean on the grid (piecewise polynomial, possibly
/// discontinuous at the cuts).
pub fn pwrm_mean_curve<F: Scalar>(cluster: &PwrmCluster<F>, grid: &[F], degree: usize) -> Vec<F> {
    let design = DMatrix::from_fn(grid.len(), degree + 1, |i, j| grid[i].powi(j as i32));
    let mut out = vec![F::zero(); grid.len()];
    for r in 0..cluster.segmentation.r() {
        for j in cluster.segmentation.segment(r) {
            out[j] = design.row(j).transpose().dot(&cluster.betas[r]);
        }
    }
    out
}
