//! Mixture of hidden Markov model regressions: each cluster is an HMM
//! whose states emit points around state-specific polynomial regression
//! means. Fitting is EM with a scaled forward-backward E-step.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::mixreg::{random_partition, FitOptions, FitReport, SoftPartition};
use crate::scalar::{log_normal_pdf, log_sum_exp, Scalar};

/// Emission densities are floored here before normalization so a single
/// outlying point cannot zero out every state.
const EMISSION_FLOOR: f64 = 1e-300;

/// Initial distribution and transition matrix of one hidden chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainParams<F> {
    pub initial: Vec<F>,
    /// Row-stochastic, row `l` to column `r`.
    pub transition: DMatrix<F>,
    /// Upper-triangular transitions (states only move forward).
    pub left_right: bool,
}

impl<F: Scalar> MarkovChainParams<F> {
    pub fn r(&self) -> usize {
        self.initial.len()
    }

    /// Left-right chain started in state 1: self-transition `stay`,
    /// remaining mass to the next state.
    pub fn left_right_default(r: usize, stay: F) -> Self {
        let mut transition = DMatrix::zeros(r, r);
        for l in 0..r {
            if l + 1 < r {
                transition[(l, l)] = stay;
                transition[(l, l + 1)] = F::one() - stay;
            } else {
                transition[(l, l)] = F::one();
            }
        }
        let mut initial = vec![F::zero(); r];
        initial[0] = F::one();
        Self {
            initial,
            transition,
            left_right: true,
        }
    }

    /// Unconstrained chain: uniform initial law, dominant self-transition.
    pub fn ergodic_default(r: usize, stay: F) -> Self {
        let rf = F::fl(r as f64);
        let off = if r > 1 {
            (F::one() - stay) / F::fl((r - 1) as f64)
        } else {
            F::zero()
        };
        let transition = DMatrix::from_fn(r, r, |l, c| {
            if l == c {
                if r > 1 {
                    stay
                } else {
                    F::one()
                }
            } else {
                off
            }
        });
        Self {
            initial: vec![F::one() / rf; r],
            transition,
            left_right: false,
        }
    }
}

/// One cluster: a hidden chain plus per-state regression coefficients
/// and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct MixHmmrCluster<F> {
    pub chain: MarkovChainParams<F>,
    pub betas: Vec<DVector<F>>,
    pub sigma2s: Vec<F>,
}

/// Parameters of a K-cluster HMM-regression mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixHmmrParams<F> {
    pub alphas: Vec<F>,
    pub clusters: Vec<MixHmmrCluster<F>>,
}

impl<F: Scalar> MixHmmrParams<F> {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }
}

/// Smoothed state posteriors of one curve under one cluster.
#[derive(Debug, Clone)]
pub struct HmmPosteriors<F> {
    /// `m x R`: gamma[(j, r)] = P(state_j = r | curve).
    pub gamma: DMatrix<F>,
    /// Length `m - 1`; xi[j][(l, r)] = P(state_j = l, state_{j+1} = r | curve).
    pub xi: Vec<DMatrix<F>>,
    pub loglik: F,
}

/// Scaled forward-backward over one curve.
///
/// Per-step normalization constants keep the recursions in range; the
/// log-likelihood is recovered as the sum of their logs (plus the
/// per-step emission rescaling).
pub fn forward_backward<F: Scalar>(
    ys: &[F],
    design: &DMatrix<F>,
    chain: &MarkovChainParams<F>,
    betas: &[DVector<F>],
    sigma2s: &[F],
) -> Result<HmmPosteriors<F>> {
    let m = ys.len();
    let r = chain.r();
    if design.nrows() != m || betas.len() != r || sigma2s.len() != r {
        return Err(Error::DimensionMismatch(
            "forward-backward inputs disagree on m or R".into(),
        ));
    }
    // emissions, rescaled per step by their max log-density
    let floor = F::fl(EMISSION_FLOOR);
    let mut emis = DMatrix::zeros(m, r);
    let mut max_logs = vec![F::zero(); m];
    for j in 0..m {
        let mut logs = vec![F::zero(); r];
        let mut max = F::fl(f64::NEG_INFINITY);
        for s in 0..r {
            let mean = design.row(j).transpose().dot(&betas[s]);
            logs[s] = log_normal_pdf(ys[j], mean, sigma2s[s]);
            if logs[s] > max {
                max = logs[s];
            }
        }
        if !max.is_finite() {
            return Err(Error::Degenerate(format!(
                "all emission densities vanished at step {j}"
            )));
        }
        max_logs[j] = max;
        for s in 0..r {
            let e = (logs[s] - max).exp();
            emis[(j, s)] = if e < floor { floor } else { e };
        }
    }

    // forward pass with per-step scaling
    let mut alpha = DMatrix::zeros(m, r);
    let mut scale = vec![F::zero(); m];
    for s in 0..r {
        alpha[(0, s)] = chain.initial[s] * emis[(0, s)];
        scale[0] += alpha[(0, s)];
    }
    if !(scale[0] > F::zero()) {
        return Err(Error::Degenerate("zero forward mass at step 0".into()));
    }
    for s in 0..r {
        alpha[(0, s)] /= scale[0];
    }
    for j in 1..m {
        for s in 0..r {
            let mut acc = F::zero();
            for l in 0..r {
                acc += alpha[(j - 1, l)] * chain.transition[(l, s)];
            }
            alpha[(j, s)] = acc * emis[(j, s)];
            scale[j] += alpha[(j, s)];
        }
        if !(scale[j] > F::zero()) {
            return Err(Error::Degenerate(format!("zero forward mass at step {j}")));
        }
        for s in 0..r {
            alpha[(j, s)] /= scale[j];
        }
    }
    let mut loglik = F::zero();
    for j in 0..m {
        loglik += scale[j].ln() + max_logs[j];
    }

    // backward pass reusing the forward scales
    let mut beta = DMatrix::zeros(m, r);
    for s in 0..r {
        beta[(m - 1, s)] = F::one();
    }
    for j in (0..m - 1).rev() {
        for l in 0..r {
            let mut acc = F::zero();
            for s in 0..r {
                acc += chain.transition[(l, s)] * emis[(j + 1, s)] * beta[(j + 1, s)];
            }
            beta[(j, l)] = acc / scale[j + 1];
        }
    }

    let mut gamma = DMatrix::zeros(m, r);
    for j in 0..m {
        for s in 0..r {
            gamma[(j, s)] = alpha[(j, s)] * beta[(j, s)];
        }
    }
    let mut xi = Vec::with_capacity(m.saturating_sub(1));
    for j in 0..m - 1 {
        let mut slice = DMatrix::zeros(r, r);
        for l in 0..r {
            for s in 0..r {
                slice[(l, s)] = alpha[(j, l)]
                    * chain.transition[(l, s)]
                    * emis[(j + 1, s)]
                    * beta[(j + 1, s)]
                    / scale[j + 1];
            }
        }
        xi.push(slice);
    }
    Ok(HmmPosteriors { gamma, xi, loglik })
}

/// A fitted HMM-regression mixture. `cluster_gammas` (tau-weighted mean
/// state posteriors on the common grid) is present only when the curves
/// share a grid.
#[derive(Debug, Clone)]
pub struct MixHmmrFit<F> {
    pub params: MixHmmrParams<F>,
    pub partition: SoftPartition<F>,
    pub report: FitReport<F>,
    pub cluster_gammas: Option<Vec<DMatrix<F>>>,
}

/// Options for the HMM-regression mixture fitter.
#[derive(Debug, Clone)]
pub struct HmmOptions<F> {
    pub base: FitOptions<F>,
    /// Constrain chains to move only forward through the states.
    pub left_right: bool,
    /// Initial self-transition probability.
    pub stay: F,
}

impl<F: Scalar> Default for HmmOptions<F> {
    fn default() -> Self {
        Self {
            base: FitOptions::default(),
            left_right: true,
            stay: F::fl(0.9),
        }
    }
}

struct HmmDesigns<F> {
    per_curve: Vec<DMatrix<F>>,
    floor: F,
}

fn hmm_designs<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    opts: &HmmOptions<F>,
) -> HmmDesigns<F> {
    let per_curve = dataset
        .curves()
        .iter()
        .map(|c| DMatrix::from_fn(c.len(), degree + 1, |i, j| c.xs()[i].powi(j as i32)))
        .collect();
    let floor = opts
        .base
        .variance_floor
        .unwrap_or_else(|| F::fl(crate::mixreg::VARIANCE_FLOOR_FACTOR) * dataset.response_variance());
    HmmDesigns { per_curve, floor }
}

/// E-step over all curves and clusters.
fn e_step_hmm<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &HmmDesigns<F>,
    params: &MixHmmrParams<F>,
) -> Result<(SoftPartition<F>, Vec<Vec<HmmPosteriors<F>>>, F)> {
    let n = dataset.n();
    let k = params.k();
    let mut tau = DMatrix::zeros(n, k);
    let mut posts: Vec<Vec<HmmPosteriors<F>>> = Vec::with_capacity(n);
    let mut loglik = F::zero();
    let mut row = vec![F::zero(); k];
    for (i, c) in dataset.curves().iter().enumerate() {
        let mut per_k = Vec::with_capacity(k);
        for (kk, r) in row.iter_mut().enumerate() {
            let cl = &params.clusters[kk];
            let post = forward_backward(c.ys(), &ctx.per_curve[i], &cl.chain, &cl.betas, &cl.sigma2s)?;
            *r = params.alphas[kk].ln() + post.loglik;
            per_k.push(post);
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
        posts.push(per_k);
    }
    Ok((SoftPartition { tau }, posts, loglik))
}

fn m_step_hmm<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &HmmDesigns<F>,
    partition: &SoftPartition<F>,
    posts: &[Vec<HmmPosteriors<F>>],
    params: &MixHmmrParams<F>,
    ridge: F,
) -> Result<MixHmmrParams<F>> {
    let n = dataset.n();
    let nf = F::fl(n as f64);
    let k = params.k();
    let p = ctx.per_curve[0].ncols();
    let mut new_alphas = Vec::with_capacity(k);
    let mut new_clusters = Vec::with_capacity(k);
    for kk in 0..k {
        let r = params.clusters[kk].chain.r();
        let mass: F = (0..n)
            .map(|i| partition.tau[(i, kk)])
            .fold(F::zero(), |a, b| a + b);
        if mass < F::one() / (nf * nf) {
            return Err(Error::EmptyComponent { k: kk });
        }
        new_alphas.push(mass / nf);

        // initial law: tau-weighted first-step state posterior
        let mut initial = vec![F::zero(); r];
        for i in 0..n {
            let w = partition.tau[(i, kk)];
            for s in 0..r {
                initial[s] += w * posts[i][kk].gamma[(0, s)];
            }
        }
        for v in initial.iter_mut() {
            *v /= mass;
        }

        // transition rows: normalized tau-weighted expected counts;
        // a never-left state keeps its previous row
        let mut counts = DMatrix::zeros(r, r);
        for i in 0..n {
            let w = partition.tau[(i, kk)];
            for slice in &posts[i][kk].xi {
                for l in 0..r {
                    for s in 0..r {
                        counts[(l, s)] += w * slice[(l, s)];
                    }
                }
            }
        }
        let old = &params.clusters[kk].chain;
        let mut transition = DMatrix::zeros(r, r);
        for l in 0..r {
            let row_sum: F = (0..r).map(|s| counts[(l, s)]).fold(F::zero(), |a, b| a + b);
            if row_sum > F::fl(1e-300) {
                for s in 0..r {
                    transition[(l, s)] = counts[(l, s)] / row_sum;
                }
            } else {
                for s in 0..r {
                    transition[(l, s)] = old.transition[(l, s)];
                }
            }
        }

        // per-state weighted regressions: weights tau_ik * gamma_ijr
        let mut betas = Vec::with_capacity(r);
        let mut sigma2s = Vec::with_capacity(r);
        for s in 0..r {
            let mut gram = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for (i, c) in dataset.curves().iter().enumerate() {
                let w = partition.tau[(i, kk)];
                if w <= F::zero() {
                    continue;
                }
                let design = &ctx.per_curve[i];
                for j in 0..c.len() {
                    let g = w * posts[i][kk].gamma[(j, s)];
                    if g > F::zero() {
                        let x = design.row(j).transpose();
                        gram += &x * x.transpose() * g;
                        rhs += &x * (g * c.ys()[j]);
                    }
                }
            }
            let beta = solve_spd(&gram, &rhs, ridge)?;
            let mut num = F::zero();
            let mut den = F::zero();
            for (i, c) in dataset.curves().iter().enumerate() {
                let w = partition.tau[(i, kk)];
                if w <= F::zero() {
                    continue;
                }
                let design = &ctx.per_curve[i];
                for j in 0..c.len() {
                    let g = w * posts[i][kk].gamma[(j, s)];
                    if g > F::zero() {
                        let resid = c.ys()[j] - design.row(j).transpose().dot(&beta);
                        num += g * resid * resid;
                        den += g;
                    }
                }
            }
            let mut s2 = if den > F::zero() {
                num / den
            } else {
                params.clusters[kk].sigma2s[s]
            };
            if s2 < ctx.floor {
                s2 = ctx.floor;
            }
            betas.push(beta);
            sigma2s.push(s2);
        }
        new_clusters.push(MixHmmrCluster {
            chain: MarkovChainParams {
                initial,
                transition,
                left_right: old.left_right,
            },
            betas,
            sigma2s,
        });
    }
    Ok(MixHmmrParams {
        alphas: new_alphas,
        clusters: new_clusters,
    })
}

/// Seed a cluster from a set of curves: a uniform R-way split of each
/// curve's index range, pooled OLS per piece.
fn seed_cluster<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &HmmDesigns<F>,
    members: &[usize],
    r: usize,
    opts: &HmmOptions<F>,
) -> Result<MixHmmrCluster<F>> {
    let p = ctx.per_curve[0].ncols();
    let mut betas = Vec::with_capacity(r);
    let mut sigma2s = Vec::with_capacity(r);
    for s in 0..r {
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for &i in members {
            let c = &dataset.curves()[i];
            let m = c.len();
            let (a, b) = (s * m / r, (s + 1) * m / r);
            for j in a..b {
                let x = ctx.per_curve[i].row(j).transpose();
                gram += &x * x.transpose();
                rhs += &x * c.ys()[j];
            }
        }
        let beta = solve_spd(&gram, &rhs, opts.base.ridge)?;
        let mut num = F::zero();
        let mut den = F::zero();
        for &i in members {
            let c = &dataset.curves()[i];
            let m = c.len();
            let (a, b) = (s * m / r, (s + 1) * m / r);
            for j in a..b {
                let resid = c.ys()[j] - ctx.per_curve[i].row(j).transpose().dot(&beta);
                num += resid * resid;
                den += F::one();
            }
        }
        let mut s2 = num / den;
        if s2 < ctx.floor {
            s2 = ctx.floor;
        }
        betas.push(beta);
        sigma2s.push(s2);
    }
    let chain = if opts.left_right {
        MarkovChainParams::left_right_default(r, opts.stay)
    } else {
        MarkovChainParams::ergodic_default(r, opts.stay)
    };
    Ok(MixHmmrCluster {
        chain,
        betas,
        sigma2s,
    })
}

/// Fit a K-cluster HMM-regression mixture by EM; cluster `k` has
/// `rs[k]` hidden states over polynomials of `degree`.
pub fn fit_em_mixhmmr<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    rs: &[usize],
    opts: &HmmOptions<F>,
) -> Result<MixHmmrFit<F>> {
    let k = rs.len();
    if k < 1 || rs.iter().any(|&r| r < 1) {
        return Err(Error::InvalidConfig("K and every R must be at least 1".into()));
    }
    let ctx = hmm_designs(dataset, degree, opts);
    let n = dataset.n();
    let mut best: Option<MixHmmrFit<F>> = None;
    let mut last_err = None;
    for t in 0..opts.base.n_init.max(1) {
        let seed = opts.base.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assign = random_partition::<F>(n, k, &mut rng);
        let run = (|| {
            let mut clusters = Vec::with_capacity(k);
            for kk in 0..k {
                let members: Vec<usize> =
                    (0..n).filter(|&i| assign[(i, kk)] > F::fl(0.5)).collect();
                clusters.push(seed_cluster(dataset, &ctx, &members, rs[kk], opts)?);
            }
            let counts: Vec<F> = (0..k)
                .map(|kk| {
                    (0..n)
                        .map(|i| assign[(i, kk)])
                        .fold(F::zero(), |a, b| a + b)
                        / F::fl(n as f64)
                })
                .collect();
            let mut params = MixHmmrParams {
                alphas: counts,
                clusters,
            };
            let mut trace = Vec::new();
            let mut converged = false;
            let mut partition;
            let mut posts;
            loop {
                let (tau, po, loglik) = e_step_hmm(dataset, &ctx, &params)?;
                partition = tau;
                posts = po;
                if let Some(&prev) = trace.last() {
                    let denom: F = if prev == F::zero() { F::one() } else { prev };
                    if ((loglik - prev) / denom).mag() <= opts.base.tol {
                        trace.push(loglik);
                        converged = true;
                        break;
                    }
                }
                trace.push(loglik);
                if trace.len() >= opts.base.max_iter {
                    break;
                }
                params = m_step_hmm(dataset, &ctx, &partition, &posts, &params, opts.base.ridge)?;
            }
            let loglik = *trace.last().unwrap();
            let cluster_gammas = if dataset.common_grid() {
                let m = dataset.curves()[0].len();
                let mut out = Vec::with_capacity(k);
                for kk in 0..k {
                    let mass: F = (0..n)
                        .map(|i| partition.tau[(i, kk)])
                        .fold(F::zero(), |a, b| a + b);
                    let mut g = DMatrix::zeros(m, rs[kk]);
                    for i in 0..n {
                        let w = partition.tau[(i, kk)];
                        for j in 0..m {
                            for s in 0..rs[kk] {
                                g[(j, s)] += w * posts[i][kk].gamma[(j, s)];
                            }
                        }
                    }
                    g /= mass;
                    out.push(g);
                }
                Some(out)
            } else {
                None
            };
            Ok(MixHmmrFit {
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
                cluster_gammas,
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

/// Cluster mean curve: pointwise mixture of state regression means
/// weighted by the average smoothed state probabilities.
pub fn hmmr_mean_curve<F: Scalar>(
    betas: &[DVector<F>],
    gamma_bar: &DMatrix<F>,
    design: &DMatrix<F>,
) -> Vec<F> {
    let m = design.nrows();
    let r = betas.len();
    (0..m)
        .map(|j| {
            let mut v = F::zero();
            for s in 0..r {
                v += gamma_bar[(j, s)] * design.row(j).transpose().dot(&betas[s]);
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Curve;

    fn design(xs: &[f64], degree: usize) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32))
    }

    #[test]
    fn single_state_chain_recovers_plain_loglik() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.2, 0.9, 2.1];
        let d = design(&xs, 1);
        let chain = MarkovChainParams::left_right_default(1, 0.9);
        let beta = DVector::from_vec(vec![0.0, 1.0]);
        let post = forward_backward(&ys, &d, &chain, &[beta.clone()], &[0.5]).unwrap();
        for j in 0..3 {
            assert!((post.gamma[(j, 0)] - 1.0).abs() < 1e-12);
        }
        let direct: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| crate::scalar::log_normal_pdf(y, beta[0] + beta[1] * x, 0.5))
            .sum();
        assert!((post.loglik - direct).abs() < 1e-12);
    }

    #[test]
    fn symmetric_chain_and_emissions_give_uniform_gamma() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.5, 0.1, 0.8, 0.3];
        let d = design(&xs, 0);
        let chain = MarkovChainParams::<f64>::ergodic_default(3, 1.0 / 3.0);
        let beta = DVector::from_vec(vec![0.4]);
        let post =
            forward_backward(&ys, &d, &chain, &[beta.clone(), beta.clone(), beta], &[1.0; 3])
                .unwrap();
        for j in 0..4 {
            for s in 0..3 {
                assert!((post.gamma[(j, s)] - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posteriors_marginalize_consistently() {
        let xs: Vec<f64> = (0..6).map(|j| j as f64).collect();
        let ys = [0.1, 0.3, 2.0, 2.2, 2.1, 0.4];
        let d = design(&xs, 0);
        let chain = MarkovChainParams::left_right_default(2, 0.8);
        let betas = [DVector::from_vec(vec![0.2]), DVector::from_vec(vec![2.1])];
        let post = forward_backward(&ys, &d, &chain, &betas, &[0.3, 0.3]).unwrap();
        for j in 0..6 {
            let row: f64 = (0..2).map(|s| post.gamma[(j, s)]).sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
        for j in 0..5 {
            for s in 0..2 {
                let from: f64 = (0..2).map(|l| post.xi[j][(l, s)]).sum();
                assert!((from - post.gamma[(j + 1, s)]).abs() < 1e-9);
                let to: f64 = (0..2).map(|l| post.xi[j][(s, l)]).sum();
                assert!((to - post.gamma[(j, s)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn left_right_zeros_survive_the_update() {
        let xs: Vec<f64> = (0..12).map(|j| j as f64).collect();
        let mut curves = Vec::new();
        for i in 0..6 {
            let ys: Vec<f64> = (0..12)
                .map(|j| if j < 6 { 0.0 } else { 5.0 } + 0.01 * ((i * 12 + j) % 7) as f64)
                .collect();
            curves.push(Curve::new(format!("c{i}"), xs.clone(), ys, None).unwrap());
        }
        let d = FunctionalDataset::new(curves).unwrap();
        let fit = fit_em_mixhmmr(&d, 0, &[2], &HmmOptions::default()).unwrap();
        let a = &fit.params.clusters[0].chain.transition;
        assert_eq!(a[(1, 0)], 0.0);
        let row0: f64 = a[(0, 0)] + a[(0, 1)];
        assert!((row0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k1_r1_is_pooled_regression() {
        let xs: Vec<f64> = (0..8).map(|j| j as f64).collect();
        let mk = |off: f64| -> Vec<f64> { xs.iter().map(|&x| 1.0 + 0.5 * x + off).collect() };
        let d = FunctionalDataset::new(vec![
            Curve::new("a", xs.clone(), mk(0.05), None).unwrap(),
            Curve::new("b", xs.clone(), mk(-0.05), None).unwrap(),
        ])
        .unwrap();
        let fit = fit_em_mixhmmr(&d, 1, &[1], &HmmOptions::default()).unwrap();
        let beta = &fit.params.clusters[0].betas[0];
        // pooled OLS: the +-offset cancels
        assert!((beta[0] - 1.0).abs() < 1e-8);
        assert!((beta[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn separable_regime_clusters_are_recovered() {
        let xs: Vec<f64> = (0..20).map(|j| j as f64).collect();
        let mut curves = Vec::new();
        for i in 0..8 {
            let cls = i % 2;
            let ys: Vec<f64> = (0..20)
                .map(|j| {
                    let base = if cls == 0 {
                        if j < 10 {
                            0.0
                        } else {
                            4.0
                        }
                    } else if j < 5 {
                        8.0
                    } else {
                        2.0
                    };
                    base + 0.02 * ((i * 20 + j) % 5) as f64
                })
                .collect();
            curves.push(Curve::new(format!("c{i}"), xs.clone(), ys, Some(cls + 1)).unwrap());
        }
        let d = FunctionalDataset::new(curves).unwrap();
        let opts = HmmOptions {
            base: FitOptions {
                n_init: 3,
                seed: 5,
                ..FitOptions::default()
            },
            ..HmmOptions::default()
        };
        let fit = fit_em_mixhmmr(&d, 0, &[2, 2], &opts).unwrap();
        let labels = fit.partition.hard_labels();
        let truth: Vec<usize> = d.curves().iter().map(|c| c.label.unwrap() - 1).collect();
        let direct: usize = labels.iter().zip(&truth).filter(|(a, b)| a != b).count();
        assert_eq!(direct.min(d.n() - direct), 0);
        for w in fit.report.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs());
        }
    }

    #[test]
    fn mean_curve_is_a_pointwise_convex_combination() {
        let xs: Vec<f64> = (0..5).map(|j| j as f64).collect();
        let d = design(&xs, 1);
        let betas = [DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![3.0, -0.5])];
        let gamma = DMatrix::from_fn(5, 2, |j, s| if s == 0 { 0.3 + 0.1 * j as f64 } else { 0.7 - 0.1 * j as f64 });
        let mean = hmmr_mean_curve(&betas, &gamma, &d);
        for j in 0..5 {
            let a = d.row(j).transpose().dot(&betas[0]);
            let b = d.row(j).transpose().dot(&betas[1]);
            assert!(mean[j] >= a.min(b) - 1e-12 && mean[j] <= a.max(b) + 1e-12);
        }
    }
}
