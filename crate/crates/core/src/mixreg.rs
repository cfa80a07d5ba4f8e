//! Gaussian regression mixtures over whole curves, fit by EM, plus the
//! entropy-penalized robust EM that starts from one component per curve
//! and estimates the number of clusters by discarding invalid ones.
//!
//! This module also hosts the fit plumbing (`FitOptions`, `SoftPartition`,
//! `FitReport`) shared by the other mixture families.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::BasisSpec;
use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::scalar::{log_sum_exp, Scalar};

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-6;

/// Parameters of a K-component Gaussian regression mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixRegParams<F> {
    pub alphas: Vec<F>,
    pub betas: Vec<DVector<F>>,
    pub sigma2s: Vec<F>,
}

impl<F: Scalar> MixRegParams<F> {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    /// Basis dimension of the component regressions.
    pub fn p(&self) -> usize {
        self.betas[0].len()
    }
}

/// Initialization strategy for EM restarts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Each curve assigned to a uniformly random component.
    RandomPartition,
    /// K-means on the raw response vectors (needs a common grid).
    KmeansPartition,
}

/// Knobs shared by all EM fitters.
#[derive(Debug, Clone)]
pub struct FitOptions<F> {
    pub max_iter: usize,
    /// Relative objective-change convergence threshold.
    pub tol: F,
    pub n_init: usize,
    pub init: Init,
    pub seed: u64,
    /// Lower bound on component variances; derived from the pooled
    /// response variance when absent.
    pub variance_floor: Option<F>,
    /// Ridge factor applied when a Gram matrix is singular.
    pub ridge: F,
}

impl<F: Scalar> Default for FitOptions<F> {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: F::fl(1e-8),
            n_init: 1,
            init: Init::RandomPartition,
            seed: 0,
            variance_floor: None,
            ridge: F::fl(DEFAULT_RIDGE),
        }
    }
}

/// Posterior membership probabilities, one row per curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPartition<F> {
    pub tau: DMatrix<F>,
}

impl<F: Scalar> SoftPartition<F> {
    pub fn n(&self) -> usize {
        self.tau.nrows()
    }

    pub fn k(&self) -> usize {
        self.tau.ncols()
    }

    /// MAP labels (0-based component indices); ties go to the smallest
    /// index.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.tau.nrows())
            .map(|i| {
                let mut best = 0;
                let mut best_v = self.tau[(i, 0)];
                for k in 1..self.tau.ncols() {
                    if self.tau[(i, k)] > best_v {
                        best_v = self.tau[(i, k)];
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Diagnostics accompanying a fitted model.
#[derive(Debug, Clone)]
pub struct FitReport<F> {
    /// Objective value per iteration (log-likelihood, or the penalized
    /// objective for the robust fitter).
    pub objective_trace: Vec<F>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of components retained at convergence.
    pub final_k: usize,
    /// Final observed-data log-likelihood.
    pub loglik: F,
    pub seed: u64,
}

/// A fitted regression mixture with its soft partition and diagnostics.
#[derive(Debug, Clone)]
pub struct MixRegFit<F> {
    pub params: MixRegParams<F>,
    pub partition: SoftPartition<F>,
    pub report: FitReport<F>,
}

/// Cached per-curve design cross-products.
///
/// Component log-likelihoods only need `y'y`, `X'y` and `X'X`, so each
/// evaluation is O(p^2) regardless of the number of observations.
#[derive(Debug, Clone)]
pub struct CurveDesign<F> {
    pub design: DMatrix<F>,
    pub gram: DMatrix<F>,
    pub xty: DVector<F>,
    pub yty: F,
    pub m: usize,
}

impl<F: Scalar> CurveDesign<F> {
    pub fn new(design: DMatrix<F>, ys: &[F]) -> Self {
        let y = DVector::from_column_slice(ys);
        let gram = design.transpose() * &design;
        let xty = design.transpose() * &y;
        let yty = y.dot(&y);
        Self {
            design,
            gram,
            xty,
            yty,
            m: ys.len(),
        }
    }

    /// Residual sum of squares of `beta` on this curve, clamped at 0
    /// against cancellation noise.
    pub fn rss(&self, beta: &DVector<F>) -> F {
        let quad = beta.dot(&(&self.gram * beta));
        let r = self.yty - F::fl(2.0) * beta.dot(&self.xty) + quad;
        if r < F::zero() {
            F::zero()
        } else {
            r
        }
    }
}

/// Expand every curve of `dataset` in the basis, with the domain taken
/// from the pooled abscissa range.
pub fn build_designs<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    spec: &BasisSpec<F>,
) -> Result<Vec<CurveDesign<F>>> {
    let (lo, hi) = dataset.domain();
    dataset
        .curves()
        .iter()
        .map(|c| {
            let design = spec.design(c.xs(), lo, hi)?;
            Ok(CurveDesign::new(design, c.ys()))
        })
        .collect()
}

/// Gaussian log-likelihood of one curve under one component.
pub fn component_loglik<F: Scalar>(
    cd: &CurveDesign<F>,
    beta: &DVector<F>,
    sigma2: F,
) -> Result<F> {
    if beta.len() != cd.gram.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector has {} entries, design has {} columns",
            beta.len(),
            cd.gram.nrows()
        )));
    }
    if sigma2 <= F::zero() {
        return Err(Error::Degenerate("non-positive variance".into()));
    }
    Ok(cll(cd, beta, sigma2))
}

#[inline]
fn cll<F: Scalar>(cd: &CurveDesign<F>, beta: &DVector<F>, sigma2: F) -> F {
    let two = F::fl(2.0);
    let m = F::fl(cd.m as f64);
    -m / two * (F::two_pi() * sigma2).ln() - cd.rss(beta) / (two * sigma2)
}

/// E-step: posterior memberships and the observed-data log-likelihood.
pub fn e_step<F: Scalar>(
    designs: &[CurveDesign<F>],
    params: &MixRegParams<F>,
) -> Result<(SoftPartition<F>, F)> {
    let n = designs.len();
    let k = params.k();
    let log_alphas: Vec<F> = params.alphas.iter().map(|a| a.ln()).collect();
    let mut tau = DMatrix::zeros(n, k);
    let mut loglik = F::zero();
    let mut row = vec![F::zero(); k];
    for (i, cd) in designs.iter().enumerate() {
        for (kk, r) in row.iter_mut().enumerate() {
            *r = log_alphas[kk] + cll(cd, &params.betas[kk], params.sigma2s[kk]);
        }
        let lse = log_sum_exp(&row);
        if !lse.is_finite() {
            return Err(Error::Degenerate(format!(
                "curve {i} has zero density under every component"
            )));
        }
        for kk in 0..k {
            tau[(i, kk)] = (row[kk] - lse).exp();
        }
        loglik += lse;
    }
    Ok((SoftPartition { tau }, loglik))
}

/// Weighted regression update for one component over all curves.
fn weighted_component<F: Scalar>(
    designs: &[CurveDesign<F>],
    weights: impl Fn(usize) -> F,
    ridge: F,
    floor: F,
) -> Result<(DVector<F>, F)> {
    let p = designs[0].gram.nrows();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (i, cd) in designs.iter().enumerate() {
        let w = weights(i);
        if w > F::zero() {
            gram += &cd.gram * w;
            rhs += &cd.xty * w;
        }
    }
    let beta = solve_spd(&gram, &rhs, ridge)?;
    let mut num = F::zero();
    let mut den = F::zero();
    for (i, cd) in designs.iter().enumerate() {
        let w = weights(i);
        if w > F::zero() {
            num += w * cd.rss(&beta);
            den += w * F::fl(cd.m as f64);
        }
    }
    let mut sigma2 = num / den;
    if sigma2 < floor {
        sigma2 = floor;
    }
    Ok((beta, sigma2))
}

/// M-step: proportions, weighted least-squares coefficients and
/// variances from the posterior memberships.
pub fn m_step<F: Scalar>(
    designs: &[CurveDesign<F>],
    partition: &SoftPartition<F>,
    ridge: F,
    variance_floor: F,
) -> Result<MixRegParams<F>> {
    let n = designs.len();
    let k = partition.k();
    let nf = F::fl(n as f64);
    let empty_threshold = F::one() / (nf * nf);
    let mut alphas = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k);
    let mut sigma2s = Vec::with_capacity(k);
    for kk in 0..k {
        let mass: F = (0..n).map(|i| partition.tau[(i, kk)]).fold(F::zero(), |a, b| a + b);
        if mass < empty_threshold {
            return Err(Error::EmptyComponent { k: kk });
        }
        alphas.push(mass / nf);
        let (beta, sigma2) =
            weighted_component(designs, |i| partition.tau[(i, kk)], ridge, variance_floor)?;
        betas.push(beta);
        sigma2s.push(sigma2);
    }
    Ok(MixRegParams {
        alphas,
        betas,
        sigma2s,
    })
}

fn resolve_floor<F: Scalar>(dataset: &FunctionalDataset<F>, opts: &FitOptions<F>) -> F {
    opts.variance_floor
        .unwrap_or_else(|| F::fl(VARIANCE_FLOOR_FACTOR) * dataset.response_variance())
}

/// Random hard partition with every component nonempty.
pub(crate) fn random_partition<F: Scalar>(n: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<F> {
    let mut assign: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for (kk, &i) in order.iter().take(k).enumerate() {
        assign[i] = kk;
    }
    let mut tau = DMatrix::zeros(n, k);
    for (i, &a) in assign.iter().enumerate() {
        tau[(i, a)] = F::one();
    }
    tau
}

/// Lloyd K-means on raw response vectors; returns a hard partition.
fn kmeans_partition<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<F>> {
    if !dataset.common_grid() {
        return Err(Error::InvalidConfig(
            "k-means initialization needs a common grid".into(),
        ));
    }
    let n = dataset.n();
    let m = dataset.curves()[0].len();
    let mut centroid_idx: Vec<usize> = (0..n).collect();
    centroid_idx.shuffle(rng);
    let mut centroids: Vec<Vec<F>> = centroid_idx
        .iter()
        .take(k)
        .map(|&i| dataset.curves()[i].ys().to_vec())
        .collect();
    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, c) in dataset.curves().iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = F::fl(f64::INFINITY);
            for (kk, cen) in centroids.iter().enumerate() {
                let mut d = F::zero();
                for j in 0..m {
                    let diff = c.ys()[j] - cen[j];
                    d += diff * diff;
                }
                if d < best_d {
                    best_d = d;
                    best = kk;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        for (kk, cen) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == kk).collect();
            if members.is_empty() {
                continue;
            }
            let count = F::fl(members.len() as f64);
            for (j, v) in cen.iter_mut().enumerate() {
                *v = members
                    .iter()
                    .map(|&i| dataset.curves()[i].ys()[j])
                    .fold(F::zero(), |a, b| a + b)
                    / count;
            }
        }
        if !changed {
            break;
        }
    }
    // guarantee nonempty clusters for the M-step
    for kk in 0..k {
        if !assign.contains(&kk) {
            let i = centroid_idx[kk % n];
            assign[i] = kk;
        }
    }
    let mut tau = DMatrix::zeros(n, k);
    for (i, &a) in assign.iter().enumerate() {
        tau[(i, a)] = F::one();
    }
    Ok(tau)
}

/// One EM run from explicit starting parameters.
fn em_run<F: Scalar>(
    designs: &[CurveDesign<F>],
    initial: MixRegParams<F>,
    max_iter: usize,
    tol: F,
    ridge: F,
    floor: F,
    seed: u64,
) -> Result<MixRegFit<F>> {
    let mut params = initial;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut partition;
    loop {
        let (tau, loglik) = e_step(designs, &params)?;
        partition = tau;
        if let Some(&prev) = trace.last() {
            let denom: F = if prev == F::zero() { F::one() } else { prev };
            if ((loglik - prev) / denom).mag() <= tol {
                trace.push(loglik);
                converged = true;
                break;
            }
        }
        trace.push(loglik);
        if trace.len() >= max_iter {
            break;
        }
        params = m_step(designs, &partition, ridge, floor)?;
    }
    let loglik = *trace.last().unwrap();
    let final_k = params.k();
    Ok(MixRegFit {
        params,
        partition,
        report: FitReport {
            iterations: trace.len(),
            objective_trace: trace,
            converged,
            final_k,
            loglik,
            seed,
        },
    })
}

/// Fit by EM from explicit starting parameters (single run, no restarts).
pub fn fit_em_with_init<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    spec: &BasisSpec<F>,
    initial: MixRegParams<F>,
    opts: &FitOptions<F>,
) -> Result<MixRegFit<F>> {
    let designs = build_designs(dataset, spec)?;
    let floor = resolve_floor(dataset, opts);
    em_run(
        &designs,
        initial,
        opts.max_iter,
        opts.tol,
        opts.ridge,
        floor,
        opts.seed,
    )
}

/// Fit a K-component regression mixture by EM with restarts; the best
/// restart by final log-likelihood wins.
pub fn fit_em<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    spec: &BasisSpec<F>,
    k: usize,
    opts: &FitOptions<F>,
) -> Result<MixRegFit<F>> {
    if k < 1 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if dataset.n() < k {
        return Err(Error::InvalidConfig(format!(
            "cannot fit {k} components to {} curves",
            dataset.n()
        )));
    }
    let designs = build_designs(dataset, spec)?;
    let floor = resolve_floor(dataset, opts);
    let mut best: Option<MixRegFit<F>> = None;
    let mut last_err = None;
    for t in 0..opts.n_init.max(1) {
        let seed = opts.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = match opts.init {
            Init::RandomPartition => random_partition(dataset.n(), k, &mut rng),
            Init::KmeansPartition => kmeans_partition(dataset, k, &mut rng)?,
        };
        let run = (|| {
            let initial = m_step(&designs, &SoftPartition { tau }, opts.ridge, floor)?;
            em_run(&designs, initial, opts.max_iter, opts.tol, opts.ridge, floor, seed)
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

/// Entropy-penalized objective `loglik - lambda * n * H(alpha)` where
/// `H` is the (positive) entropy of the mixing proportions.
pub fn penalized_objective<F: Scalar>(loglik: F, alphas: &[F], n: usize, lambda: F) -> F {
    let neg_entropy: F = alphas
        .iter()
        .filter(|a| **a > F::zero())
        .map(|&a| a * a.ln())
        .fold(F::zero(), |acc, v| acc + v);
    loglik + lambda * F::fl(n as f64) * neg_entropy
}

/// Options for the robust fitter.
#[derive(Debug, Clone)]
pub struct RobustOptions<F> {
    pub base: FitOptions<F>,
    /// Fixed lambda instead of the built-in schedule (mainly for tests).
    pub lambda_override: Option<F>,
    /// Disable discarding of low-proportion components (for tests).
    pub discard: bool,
}

impl<F: Scalar> Default for RobustOptions<F> {
    fn default() -> Self {
        Self {
            base: FitOptions {
                max_iter: 500,
                ..FitOptions::default()
            },
            lambda_override: None,
            discard: true,
        }
    }
}

/// Starting point of the robust fitter: one component per curve, each
/// seeded by that curve's own least-squares fit.
pub fn robust_init<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    spec: &BasisSpec<F>,
    opts: &RobustOptions<F>,
) -> Result<MixRegParams<F>> {
    let designs = build_designs(dataset, spec)?;
    let floor = resolve_floor(dataset, &opts.base);
    let n = designs.len();
    let nf = F::fl(n as f64);
    let mut betas = Vec::with_capacity(n);
    let mut sigma2s = Vec::with_capacity(n);
    // broad initial variances (pooled response variance): components
    // must start soft so proportions, not sharp per-curve fits, drive
    // the early competition
    let pooled = dataset.response_variance().max(floor);
    for cd in &designs {
        let beta = solve_spd(&cd.gram, &cd.xty, opts.base.ridge)?;
        betas.push(beta);
        sigma2s.push(pooled);
    }
    Ok(MixRegParams {
        alphas: vec![F::one() / nf; n],
        betas,
        sigma2s,
    })
}

/// Robust EM: entropy-penalized proportion updates with an increasing
/// lambda schedule; components whose proportion drops below 1/n are
/// discarded, so the number of clusters is estimated, not given.
pub fn fit_robust_em<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    spec: &BasisSpec<F>,
    opts: &RobustOptions<F>,
) -> Result<MixRegFit<F>> {
    if dataset.n() < 2 {
        return Err(Error::InvalidConfig("robust fitting needs n >= 2".into()));
    }
    let designs = build_designs(dataset, spec)?;
    let floor = resolve_floor(dataset, &opts.base);
    let n = designs.len();
    let nf = F::fl(n as f64);
    // tiny relative slack so proportions sitting exactly at 1/n (e.g.
    // the symmetric initial state) are not mass-discarded by rounding
    let discard_threshold = F::one() / nf * (F::one() - F::fl(1e-9));
    let mut params = robust_init(dataset, spec, opts)?;

    let mut trace: Vec<F> = Vec::new();
    let mut prev_k = params.k();
    let mut converged = false;
    // entropy-penalty weight: per-component model complexity over the
    // log sample size. Components with p coefficients apiece can absorb
    // noise in proportion to p, so the pressure that makes clusters
    // compete has to grow with it; a short ramp keeps the first
    // iterations close to plain EM while the posteriors are still soft
    let p = params.betas[0].len();
    let base = F::fl(p as f64 / (n as f64).ln());
    for q in 1..=opts.base.max_iter {
        let ramp = F::fl((q as f64 / 20.0).min(1.0));
        let lambda = opts.lambda_override.unwrap_or(ramp * base);

        let (mut partition, loglik) = e_step(&designs, &params)?;

        // proportion update: EM estimate plus an entropy term that
        // starves small components; lambda is halved until the update
        // keeps every proportion strictly inside (0,1)
        let mean_tau: Vec<F> = (0..params.k())
            .map(|kk| {
                (0..n)
                    .map(|i| partition.tau[(i, kk)])
                    .fold(F::zero(), |a, b| a + b)
                    / nf
            })
            .collect();
        let neg_entropy: F = params
            .alphas
            .iter()
            .map(|&a| a * a.ln())
            .fold(F::zero(), |a, b| a + b);
        let mut lam = lambda;
        let mut new_alphas: Vec<F>;
        loop {
            new_alphas = params
                .alphas
                .iter()
                .zip(&mean_tau)
                .map(|(&a, &mt)| mt + lam * a * (a.ln() - neg_entropy))
                .collect();
            // with discarding on, a proportion pushed to zero or below
            // is exactly a component being annihilated, so the update
            // stands; without discarding the weight is halved until the
            // proportions are valid
            if opts.discard || new_alphas.iter().all(|&a| a > F::zero() && a < F::one()) {
                break;
            }
            lam /= F::fl(2.0);
            if lam < F::fl(1e-300) {
                new_alphas = mean_tau.clone();
                break;
            }
        }
        params.alphas = new_alphas;

        if opts.discard {
            let keep: Vec<usize> = (0..params.k())
                .filter(|&kk| params.alphas[kk] >= discard_threshold)
                .collect();
            if keep.is_empty() {
                return Err(Error::Degenerate(
                    "all components discarded; lambda schedule fault".into(),
                ));
            }
            if keep.len() < params.k() {
                let total: F = keep
                    .iter()
                    .map(|&kk| params.alphas[kk])
                    .fold(F::zero(), |a, b| a + b);
                params.alphas = keep.iter().map(|&kk| params.alphas[kk] / total).collect();
                params.betas = keep.iter().map(|&kk| params.betas[kk].clone()).collect();
                params.sigma2s = keep.iter().map(|&kk| params.sigma2s[kk]).collect();
                let mut tau = DMatrix::zeros(n, keep.len());
                for i in 0..n {
                    let mut row_sum = F::zero();
                    for (col, &kk) in keep.iter().enumerate() {
                        tau[(i, col)] = partition.tau[(i, kk)];
                        row_sum += tau[(i, col)];
                    }
                    if row_sum > F::fl(1e-300) {
                        for col in 0..keep.len() {
                            tau[(i, col)] /= row_sum;
                        }
                    } else {
                        let u = F::one() / F::fl(keep.len() as f64);
                        for col in 0..keep.len() {
                            tau[(i, col)] = u;
                        }
                    }
                }
                partition = SoftPartition { tau };
            }
        }

        // the regression weights are the posteriors under the *updated*
        // proportions; this feedback is what starves spurious small
        // components (skipped in the plain-EM limit lambda=0/no-discard)
        if lam > F::zero() || opts.discard {
            let refreshed = e_step(&designs, &params)?;
            partition = refreshed.0;
        }

        // regression updates; a component that lost its mass keeps its
        // previous coefficients until the discard rule removes it
        for kk in 0..params.k() {
            let mass: F = (0..n)
                .map(|i| partition.tau[(i, kk)])
                .fold(F::zero(), |a, b| a + b);
            if mass > F::fl(1e-12) {
                let (beta, s2) = weighted_component(
                    &designs,
                    |i| partition.tau[(i, kk)],
                    opts.base.ridge,
                    floor,
                )?;
                params.betas[kk] = beta;
                params.sigma2s[kk] = s2;
            }
        }

        let objective = penalized_objective(loglik, &params.alphas, n, lambda);
        if let Some(&prev) = trace.last() {
            let denom: F = if prev == F::zero() { F::one() } else { prev };
            if params.k() == prev_k && ((objective - prev) / denom).mag() <= opts.base.tol {
                trace.push(objective);
                converged = true;
                break;
            }
        }
        trace.push(objective);
        prev_k = params.k();
    }

    // memberships consistent with the final parameters
    let (partition, loglik) = e_step(&designs, &params)?;
    let final_k = params.k();
    Ok(MixRegFit {
        params,
        partition,
        report: FitReport {
            iterations: trace.len(),
            objective_trace: trace,
            converged,
            final_k,
            loglik,
            seed: opts.base.seed,
        },
    })
}

/// Mean curve of each component on a grid: `X beta_k`.
pub fn mean_curves<F: Scalar>(
    params: &MixRegParams<F>,
    spec: &BasisSpec<F>,
    grid: &[F],
    lo: F,
    hi: F,
) -> Result<Vec<Vec<F>>> {
    let design = spec.design(grid, lo, hi)?;
    Ok(params
        .betas
        .iter()
        .map(|b| (&design * b).iter().copied().collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::dataset::Curve;
    use crate::scalar::log_normal_pdf;

    fn cd(xs: &[f64], ys: &[f64], degree: usize) -> CurveDesign<f64> {
        let spec = BasisSpec::polynomial(degree);
        let design = spec.design(xs, xs[0], xs[xs.len() - 1]).unwrap();
        CurveDesign::new(design, ys)
    }

    fn two_level_dataset(n_per: usize, a: f64, b: f64) -> FunctionalDataset<f64> {
        let xs: Vec<f64> = (0..5).map(|j| j as f64).collect();
        let mut curves = Vec::new();
        for i in 0..n_per {
            curves.push(
                Curve::new(format!("a{i}"), xs.clone(), vec![a; 5], Some(1)).unwrap(),
            );
            curves.push(
                Curve::new(format!("b{i}"), xs.clone(), vec![b; 5], Some(2)).unwrap(),
            );
        }
        FunctionalDataset::new(curves).unwrap()
    }

    #[test]
    fn component_loglik_standard_normal_at_zero() {
        let c = cd(&[0.0, 1.0], &[0.0, 0.0], 0);
        // restrict to a single point by building a 1-point curve
        let c1 = {
            let design = DMatrix::from_row_slice(1, 1, &[1.0]);
            CurveDesign::new(design, &[0.0])
        };
        let beta = DVector::from_vec(vec![0.0]);
        let l = component_loglik(&c1, &beta, 1.0).unwrap();
        assert!((l + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        // perfect fit over 3 points
        let c3 = cd(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0], 0);
        let l3 = component_loglik(&c3, &DVector::from_vec(vec![1.0]), 1.0).unwrap();
        assert!((l3 + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        drop(c);
    }

    #[test]
    fn component_loglik_matches_pointwise_oracle() {
        let xs = [0.0, 0.7, 1.3, 2.1];
        let ys = [0.3, -0.2, 1.4, 0.9];
        let c = cd(&xs, &ys, 1);
        let beta = DVector::from_vec(vec![0.25, 0.4]);
        let s2 = 0.8;
        let got = component_loglik(&c, &beta, s2).unwrap();
        let oracle: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| log_normal_pdf(y, beta[0] + beta[1] * x, s2))
            .sum();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn component_loglik_rejects_bad_dimensions() {
        let c = cd(&[0.0, 1.0], &[0.0, 0.0], 0);
        let beta = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            component_loglik(&c, &beta, 1.0).unwrap_err(),
            Error::DimensionMismatch(_)
        ));
    }

    #[test]
    fn e_step_with_identical_components_returns_priors() {
        let d = two_level_dataset(3, 0.0, 0.0);
        let spec = BasisSpec::polynomial(0);
        let designs = build_designs(&d, &spec).unwrap();
        let beta = DVector::from_vec(vec![0.0]);
        for alphas in [[0.5, 0.5], [0.9, 0.1]] {
            let params = MixRegParams {
                alphas: alphas.to_vec(),
                betas: vec![beta.clone(), beta.clone()],
                sigma2s: vec![1.0, 1.0],
            };
            let (tau, _) = e_step(&designs, &params).unwrap();
            for i in 0..tau.n() {
                assert!((tau.tau[(i, 0)] - alphas[0]).abs() < 1e-12);
                assert!((tau.tau[(i, 1)] - alphas[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn e_step_matches_brute_force_densities() {
        let xs = vec![0.0, 1.0];
        let d = FunctionalDataset::new(vec![
            Curve::new("a", xs.clone(), vec![0.1, 0.4], None).unwrap(),
            Curve::new("b", xs.clone(), vec![2.0, 2.2], None).unwrap(),
        ])
        .unwrap();
        let spec = BasisSpec::polynomial(0);
        let designs = build_designs(&d, &spec).unwrap();
        let params = MixRegParams {
            alphas: vec![0.3, 0.7],
            betas: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![2.0])],
            sigma2s: vec![0.5, 0.9],
        };
        let (tau, loglik) = e_step(&designs, &params).unwrap();
        let mut oracle_ll = 0.0;
        for (i, c) in d.curves().iter().enumerate() {
            let dens: Vec<f64> = (0..2)
                .map(|k| {
                    params.alphas[k]
                        * c.ys()
                            .iter()
                            .map(|&y| {
                                let l: f64 =
                                    log_normal_pdf(y, params.betas[k][0], params.sigma2s[k]);
                                l.exp()
                            })
                            .product::<f64>()
                })
                .collect();
            let total: f64 = dens.iter().sum();
            oracle_ll += total.ln();
            for k in 0..2 {
                assert!((tau.tau[(i, k)] - dens[k] / total).abs() < 1e-12);
            }
        }
        assert!((loglik - oracle_ll).abs() < 1e-12);
    }

    #[test]
    fn m_step_with_unit_weights_is_pooled_ols() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let d = FunctionalDataset::new(vec![
            Curve::new("a", xs.clone(), vec![1.0, 2.1, 2.9, 4.2], None).unwrap(),
            Curve::new("b", xs.clone(), vec![0.8, 2.0, 3.1, 3.9], None).unwrap(),
        ])
        .unwrap();
        let spec = BasisSpec::polynomial(1);
        let designs = build_designs(&d, &spec).unwrap();
        let tau = DMatrix::from_element(2, 1, 1.0);
        let params = m_step(&designs, &SoftPartition { tau }, 1e-8, 1e-12).unwrap();
        // pooled OLS on all 8 points
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for c in d.curves() {
            for (&x, &y) in c.xs().iter().zip(c.ys()) {
                rows.push([1.0, x]);
                ys.push(y);
            }
        }
        let design = DMatrix::from_fn(8, 2, |i, j| rows[i][j]);
        let beta = crate::linalg::least_squares(&design, &DVector::from_vec(ys), 1e-8).unwrap();
        assert!((params.betas[0].clone() - beta).norm() < 1e-10);
        assert!((params.alphas[0] - 1.0f64).abs() < 1e-15);
    }

    #[test]
    fn m_step_matches_assembled_normal_equations() {
        let xs = vec![0.0, 0.5, 1.0];
        let d = FunctionalDataset::new(vec![
            Curve::new("a", xs.clone(), vec![0.1, 0.5, 0.8], None).unwrap(),
            Curve::new("b", xs.clone(), vec![1.0, 1.4, 2.1], None).unwrap(),
            Curve::new("c", xs.clone(), vec![-0.2, 0.1, 0.3], None).unwrap(),
        ])
        .unwrap();
        let spec = BasisSpec::polynomial(1);
        let designs = build_designs(&d, &spec).unwrap();
        let tau = DMatrix::from_row_slice(3, 2, &[0.3, 0.7, 0.6, 0.4, 0.9, 0.1]);
        let params = m_step(&designs, &SoftPartition { tau: tau.clone() }, 1e-8, 1e-12).unwrap();
        for k in 0..2 {
            // oracle: stack sqrt(tau)-scaled designs and solve dense LS
            let mut gram = DMatrix::zeros(2, 2);
            let mut rhs = DVector::zeros(2);
            for (i, c) in d.curves().iter().enumerate() {
                let x = spec.design(c.xs(), 0.0, 1.0).unwrap();
                let y = DVector::from_column_slice(c.ys());
                gram += x.transpose() * &x * tau[(i, k)];
                rhs += x.transpose() * y * tau[(i, k)];
            }
            let beta = gram.clone().lu().solve(&rhs).unwrap();
            assert!((params.betas[k].clone() - beta).norm() < 1e-10);
        }
    }

    #[test]
    fn m_step_flags_empty_component() {
        let d = two_level_dataset(2, 0.0, 5.0);
        let spec = BasisSpec::polynomial(0);
        let designs = build_designs(&d, &spec).unwrap();
        let mut tau = DMatrix::zeros(4, 2);
        for i in 0..4 {
            tau[(i, 0)] = 1.0;
        }
        assert!(matches!(
            m_step(&designs, &SoftPartition { tau }, 1e-8, 1e-12).unwrap_err(),
            Error::EmptyComponent { k: 1 }
        ));
    }

    #[test]
    fn penalized_objective_limits() {
        assert_eq!(penalized_objective(-3.5f64, &[0.2, 0.8], 10, 0.0), -3.5);
        let k = 4usize;
        let alphas = vec![0.25f64; k];
        let obj = penalized_objective(0.0, &alphas, 7, 0.5);
        assert!((obj + 0.5 * 7.0 * (k as f64).ln()).abs() < 1e-12);
        assert_eq!(penalized_objective(1.0f64, &[1.0], 5, 2.0), 1.0);
    }

    #[test]
    fn fit_em_separable_clusters_are_recovered() {
        let d = two_level_dataset(5, 0.0, 6.0);
        let spec = BasisSpec::polynomial(0);
        let opts = FitOptions {
            n_init: 2,
            seed: 7,
            ..FitOptions::default()
        };
        let fit = fit_em(&d, &spec, 2, &opts).unwrap();
        let labels = fit.partition.hard_labels();
        // all curves of one level share a component
        let first = labels[0];
        for (i, &l) in labels.iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(l, first);
            } else {
                assert_ne!(l, first);
            }
        }
        // trace is monotone
        for w in fit.report.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs());
        }
    }

    #[test]
    fn fit_em_is_deterministic_for_fixed_seed() {
        let d = two_level_dataset(4, 0.0, 3.0);
        let spec = BasisSpec::polynomial(1);
        let opts = FitOptions {
            n_init: 1,
            seed: 11,
            ..FitOptions::default()
        };
        let a = fit_em(&d, &spec, 2, &opts).unwrap();
        let b = fit_em(&d, &spec, 2, &opts).unwrap();
        assert_eq!(a.params.alphas, b.params.alphas);
        assert_eq!(a.report.objective_trace, b.report.objective_trace);
    }

    #[test]
    fn robust_with_zero_lambda_and_no_discard_tracks_plain_em() {
        let d = two_level_dataset(3, 0.0, 4.0);
        let spec = BasisSpec::polynomial(0);
        let ropts = RobustOptions::<f64> {
            lambda_override: Some(0.0),
            discard: false,
            base: FitOptions {
                max_iter: 15,
                tol: 1e-14,
                ..FitOptions::default()
            },
        };
        let init = robust_init(&d, &spec, &ropts).unwrap();
        let robust = fit_robust_em(&d, &spec, &ropts).unwrap();
        let plain = fit_em_with_init(&d, &spec, init, &ropts.base).unwrap();
        let steps = robust
            .report
            .objective_trace
            .len()
            .min(plain.report.objective_trace.len());
        for q in 0..steps {
            let a = robust.report.objective_trace[q];
            let b = plain.report.objective_trace[q];
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "iter {q}: {a} vs {b}");
        }
    }

    #[test]
    fn robust_em_estimates_the_component_count() {
        let (d, _) = crate::dataset::generate_regime_curves::<f64>(&crate::dataset::RegimeSpec {
            clusters: 2,
            regimes: 1,
            n: 20,
            degree: 0,
            seed: 3,
            noise_sd: 0.3,
            proportions: None,
        })
        .unwrap();
        let spec = BasisSpec::polynomial(0);
        let fit = fit_robust_em(&d, &spec, &RobustOptions::default()).unwrap();
        assert_eq!(fit.report.final_k, 2);
        let sum: f64 = fit.params.alphas.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
