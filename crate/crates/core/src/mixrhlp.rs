//! Regression with a hidden logistic process (RHLP): regime membership
//! varies smoothly along the abscissa through a multinomial logistic
//! function of x, so posteriors are direct (no chain recursion). The
//! mixture version clusters heterogeneous curve sets; the logistic
//! weights are fit by a safeguarded multi-class IRLS.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::mixreg::{random_partition, FitOptions, FitReport, SoftPartition};
use crate::scalar::{log_normal_pdf, log_sum_exp, Scalar};

const IRLS_MAX_ITER: usize = 50;
const IRLS_GRAD_TOL: f64 = 1e-8;
const IRLS_RIDGE: f64 = 1e-8;
const IRLS_MAX_HALVINGS: usize = 20;

/// Multinomial logistic weights: `w[r] = (intercept, slope)` for regime
/// `r`, with the last regime fixed at the null vector for
/// identifiability.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams<F> {
    pub w: Vec<[F; 2]>,
}

impl<F: Scalar> LogisticParams<F> {
    pub fn zeros(r: usize) -> Self {
        Self {
            w: vec![[F::zero(); 2]; r - 1],
        }
    }

    pub fn r(&self) -> usize {
        self.w.len() + 1
    }
}

/// Regime proportions at abscissa `x`: softmax of the linear scores,
/// computed with max-subtraction.
pub fn logistic_proportions<F: Scalar>(x: F, w: &LogisticParams<F>) -> Vec<F> {
    let r = w.r();
    let mut scores = Vec::with_capacity(r);
    for pair in &w.w {
        scores.push(pair[0] + pair[1] * x);
    }
    scores.push(F::zero());
    let mut max = scores[0];
    for &s in &scores[1..] {
        if s > max {
            max = s;
        }
    }
    let mut sum = F::zero();
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
    scores
}

fn log_logistic_proportions<F: Scalar>(x: F, w: &LogisticParams<F>) -> Vec<F> {
    let r = w.r();
    let mut scores = Vec::with_capacity(r);
    for pair in &w.w {
        scores.push(pair[0] + pair[1] * x);
    }
    scores.push(F::zero());
    let lse = log_sum_exp(&scores);
    scores.iter().map(|&s| s - lse).collect()
}

/// IRLS diagnostics.
#[derive(Debug, Clone)]
pub struct IrlsReport<F> {
    pub iterations: usize,
    pub converged: bool,
    /// Step-halving exhausted: the data are (quasi-)separable and the
    /// returned weights are the last stable iterate.
    pub separation: bool,
    pub objective: F,
}

/// Weighted multinomial log-likelihood maximized by IRLS:
/// `sum_j sum_r targets[(j, r)] * log pi_r(x_j; w)`.
pub fn irls_objective<F: Scalar>(xs: &[F], targets: &DMatrix<F>, w: &LogisticParams<F>) -> F {
    let mut obj = F::zero();
    for (j, &x) in xs.iter().enumerate() {
        let logs = log_logistic_proportions(x, w);
        for (r, &l) in logs.iter().enumerate() {
            let t = targets[(j, r)];
            if t > F::zero() {
                obj += t * l;
            }
        }
    }
    obj
}

/// Gradient of [`irls_objective`] in the stacked parameter layout
/// `(w_1, ..., w_{R-1})`, each contributing `(d/d intercept, d/d slope)`.
pub fn irls_gradient<F: Scalar>(
    xs: &[F],
    targets: &DMatrix<F>,
    w: &LogisticParams<F>,
) -> DVector<F> {
    let rm1 = w.w.len();
    let mut grad = DVector::zeros(2 * rm1);
    for (j, &x) in xs.iter().enumerate() {
        let pis = logistic_proportions(x, w);
        let mass: F = (0..targets.ncols())
            .map(|r| targets[(j, r)])
            .fold(F::zero(), |a, b| a + b);
        for r in 0..rm1 {
            let resid = targets[(j, r)] - mass * pis[r];
            grad[2 * r] += resid;
            grad[2 * r + 1] += resid * x;
        }
    }
    grad
}

/// Newton ascent with step-halving on the weighted multinomial
/// log-likelihood. The per-point target rows may carry any nonnegative
/// mass (posterior-weighted responsibilities).
pub fn irls_multiclass<F: Scalar>(
    xs: &[F],
    targets: &DMatrix<F>,
    init: &LogisticParams<F>,
) -> Result<(LogisticParams<F>, IrlsReport<F>)> {
    if targets.nrows() != xs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} abscissas but {} target rows",
            xs.len(),
            targets.nrows()
        )));
    }
    let r = targets.ncols();
    if init.r() != r {
        return Err(Error::DimensionMismatch(
            "initial weights disagree with target dimension".into(),
        ));
    }
    if r == 1 {
        return Ok((
            LogisticParams::zeros(1),
            IrlsReport {
                iterations: 0,
                converged: true,
                separation: false,
                objective: F::zero(),
            },
        ));
    }
    let rm1 = r - 1;
    let dim = 2 * rm1;
    let mut w = init.clone();
    let mut obj = irls_objective(xs, targets, &w);
    let mut separation = false;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..IRLS_MAX_ITER {
        iterations += 1;
        let grad = irls_gradient(xs, targets, &w);
        if grad.norm().as_f64() < IRLS_GRAD_TOL {
            converged = true;
            break;
        }
        // negative Hessian: sum_j M_j (diag(pi) - pi pi')_{rs} u_j u_j'
        let mut neg_h = DMatrix::zeros(dim, dim);
        for (j, &x) in xs.iter().enumerate() {
            let pis = logistic_proportions(x, &w);
            let mass: F = (0..r).map(|s| targets[(j, s)]).fold(F::zero(), |a, b| a + b);
            if !(mass > F::zero()) {
                continue;
            }
            let u = [F::one(), x];
            for a in 0..rm1 {
                for b in 0..rm1 {
                    let block = if a == b {
                        pis[a] * (F::one() - pis[a])
                    } else {
                        -pis[a] * pis[b]
                    } * mass;
                    for (ia, &ua) in u.iter().enumerate() {
                        for (ib, &ub) in u.iter().enumerate() {
                            neg_h[(2 * a + ia, 2 * b + ib)] += block * ua * ub;
                        }
                    }
                }
            }
        }
        let step = solve_spd(&neg_h, &grad, F::fl(IRLS_RIDGE))?;
        // step-halving keeps the objective nondecreasing
        let mut scale = F::one();
        let mut accepted = false;
        for _ in 0..=IRLS_MAX_HALVINGS {
            let mut trial = w.clone();
            for (rr, pair) in trial.w.iter_mut().enumerate() {
                pair[0] += scale * step[2 * rr];
                pair[1] += scale * step[2 * rr + 1];
            }
            let trial_obj = irls_objective(xs, targets, &trial);
            if trial_obj >= obj {
                w = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            scale /= F::fl(2.0);
        }
        if !accepted {
            separation = true;
            break;
        }
    }
    Ok((
        w,
        IrlsReport {
            iterations,
            converged,
            separation,
            objective: obj,
        },
    ))
}

/// One RHLP component: logistic regime weights plus per-regime
/// polynomial coefficients and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct RhlpParams<F> {
    pub logistic: LogisticParams<F>,
    pub betas: Vec<DVector<F>>,
    pub sigma2s: Vec<F>,
}

impl<F: Scalar> RhlpParams<F> {
    pub fn r(&self) -> usize {
        self.betas.len()
    }
}

/// Parameters of a K-cluster RHLP mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixRhlpParams<F> {
    pub alphas: Vec<F>,
    pub components: Vec<RhlpParams<F>>,
}

impl<F: Scalar> MixRhlpParams<F> {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }
}

/// A fitted RHLP mixture.
#[derive(Debug, Clone)]
pub struct MixRhlpFit<F> {
    pub params: MixRhlpParams<F>,
    pub partition: SoftPartition<F>,
    pub report: FitReport<F>,
}

/// A fitted single RHLP with its per-curve regime posteriors.
#[derive(Debug, Clone)]
pub struct RhlpFit<F> {
    pub params: RhlpParams<F>,
    /// One `m_i x R` matrix per curve.
    pub gammas: Vec<DMatrix<F>>,
    pub report: FitReport<F>,
}

/// Log-density of curve points under one RHLP component, together with
/// the per-point regime posteriors (direct, no recursion).
pub fn regime_posteriors<F: Scalar>(
    comp: &RhlpParams<F>,
    xs: &[F],
    ys: &[F],
    design: &DMatrix<F>,
) -> (DMatrix<F>, F) {
    let m = xs.len();
    let r = comp.r();
    let mut gamma = DMatrix::zeros(m, r);
    let mut loglik = F::zero();
    let mut row = vec![F::zero(); r];
    for j in 0..m {
        let logpis = log_logistic_proportions(xs[j], &comp.logistic);
        for (s, v) in row.iter_mut().enumerate() {
            let mean = design.row(j).transpose().dot(&comp.betas[s]);
            *v = logpis[s] + log_normal_pdf(ys[j], mean, comp.sigma2s[s]);
        }
        let lse = log_sum_exp(&row);
        for s in 0..r {
            gamma[(j, s)] = (row[s] - lse).exp();
        }
        loglik += lse;
    }
    (gamma, loglik)
}

struct RhlpContext<F> {
    per_curve: Vec<DMatrix<F>>,
    floor: F,
}

fn rhlp_context<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    opts: &FitOptions<F>,
) -> RhlpContext<F> {
    let per_curve = dataset
        .curves()
        .iter()
        .map(|c| DMatrix::from_fn(c.len(), degree + 1, |i, j| c.xs()[i].powi(j as i32)))
        .collect();
    let floor = opts
        .variance_floor
        .unwrap_or_else(|| F::fl(crate::mixreg::VARIANCE_FLOOR_FACTOR) * dataset.response_variance());
    RhlpContext { per_curve, floor }
}

fn e_step_rhlp<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &RhlpContext<F>,
    params: &MixRhlpParams<F>,
) -> Result<(SoftPartition<F>, Vec<Vec<DMatrix<F>>>, F)> {
    let n = dataset.n();
    let k = params.k();
    let mut tau = DMatrix::zeros(n, k);
    let mut gammas: Vec<Vec<DMatrix<F>>> = Vec::with_capacity(n);
    let mut loglik = F::zero();
    let mut row = vec![F::zero(); k];
    for (i, c) in dataset.curves().iter().enumerate() {
        let mut per_k = Vec::with_capacity(k);
        for (kk, r) in row.iter_mut().enumerate() {
            let (gamma, ll) =
                regime_posteriors(&params.components[kk], c.xs(), c.ys(), &ctx.per_curve[i]);
            *r = params.alphas[kk].ln() + ll;
            per_k.push(gamma);
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
        gammas.push(per_k);
    }
    Ok((SoftPartition { tau }, gammas, loglik))
}

fn m_step_rhlp<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &RhlpContext<F>,
    partition: &SoftPartition<F>,
    gammas: &[Vec<DMatrix<F>>],
    params: &MixRhlpParams<F>,
    ridge: F,
) -> Result<MixRhlpParams<F>> {
    let n = dataset.n();
    let nf = F::fl(n as f64);
    let k = params.k();
    let p = ctx.per_curve[0].ncols();
    let total_points: usize = dataset.curves().iter().map(|c| c.len()).sum();
    let mut alphas = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for kk in 0..k {
        let r = params.components[kk].r();
        let mass: F = (0..n)
            .map(|i| partition.tau[(i, kk)])
            .fold(F::zero(), |a, b| a + b);
        if mass < F::one() / (nf * nf) {
            return Err(Error::EmptyComponent { k: kk });
        }
        alphas.push(mass / nf);

        // per-regime weighted regressions (weights tau_ik * gamma_ijr)
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
                for j in 0..c.len() {
                    let g = w * gammas[i][kk][(j, s)];
                    if g > F::zero() {
                        let x = ctx.per_curve[i].row(j).transpose();
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
                for j in 0..c.len() {
                    let g = w * gammas[i][kk][(j, s)];
                    if g > F::zero() {
                        let resid = c.ys()[j] - ctx.per_curve[i].row(j).transpose().dot(&beta);
                        num += g * resid * resid;
                        den += g;
                    }
                }
            }
            let mut s2 = if den > F::zero() {
                num / den
            } else {
                params.components[kk].sigma2s[s]
            };
            if s2 < ctx.floor {
                s2 = ctx.floor;
            }
            betas.push(beta);
            sigma2s.push(s2);
        }

        // logistic weights: IRLS on the tau-weighted responsibilities of
        // every observation point
        let mut xs_all = Vec::with_capacity(total_points);
        let mut targets = DMatrix::zeros(total_points, r);
        let mut idx = 0usize;
        for (i, c) in dataset.curves().iter().enumerate() {
            let w = partition.tau[(i, kk)];
            for j in 0..c.len() {
                xs_all.push(c.xs()[j]);
                for s in 0..r {
                    targets[(idx, s)] = w * gammas[i][kk][(j, s)];
                }
                idx += 1;
            }
        }
        let (logistic, _) = irls_multiclass(&xs_all, &targets, &params.components[kk].logistic)?;
        components.push(RhlpParams {
            logistic,
            betas,
            sigma2s,
        });
    }
    Ok(MixRhlpParams { alphas, components })
}

/// Seed one cluster: uniform logistic weights and regimes from an equal
/// R-way split of the abscissa range, pooled OLS per piece.
fn seed_component<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    ctx: &RhlpContext<F>,
    members: &[usize],
    r: usize,
    ridge: F,
) -> Result<RhlpParams<F>> {
    let p = ctx.per_curve[0].ncols();
    let (lo, hi) = dataset.domain();
    let width = (hi - lo) / F::fl(r as f64);
    let bin = |x: F| -> usize {
        if width <= F::zero() {
            return 0;
        }
        let b = ((x - lo) / width).as_f64().floor() as usize;
        b.min(r - 1)
    };
    let mut betas = Vec::with_capacity(r);
    let mut sigma2s = Vec::with_capacity(r);
    for s in 0..r {
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut any = false;
        for &i in members {
            let c = &dataset.curves()[i];
            for j in 0..c.len() {
                if bin(c.xs()[j]) == s {
                    any = true;
                    let x = ctx.per_curve[i].row(j).transpose();
                    gram += &x * x.transpose();
                    rhs += &x * c.ys()[j];
                }
            }
        }
        if !any {
            return Err(Error::Degenerate(format!(
                "initial regime {s} holds no observation points"
            )));
        }
        let beta = solve_spd(&gram, &rhs, ridge)?;
        let mut num = F::zero();
        let mut den = F::zero();
        for &i in members {
            let c = &dataset.curves()[i];
            for j in 0..c.len() {
                if bin(c.xs()[j]) == s {
                    let resid = c.ys()[j] - ctx.per_curve[i].row(j).transpose().dot(&beta);
                    num += resid * resid;
                    den += F::one();
                }
            }
        }
        let mut s2 = num / den;
        if s2 < ctx.floor {
            s2 = ctx.floor;
        }
        betas.push(beta);
        sigma2s.push(s2);
    }
    Ok(RhlpParams {
        logistic: LogisticParams::zeros(r),
        betas,
        sigma2s,
    })
}

/// Reorder each component's regimes by the x-location of their
/// proportion peak, so reported regime indices follow the abscissa.
/// The logistic weights are permuted exactly (softmax is invariant to
/// subtracting the new reference score).
fn sort_regimes<F: Scalar>(params: &mut MixRhlpParams<F>, lo: F, hi: F) {
    for comp in params.components.iter_mut() {
        let r = comp.r();
        if r < 2 {
            continue;
        }
        let grid: Vec<F> = (0..101)
            .map(|t| lo + (hi - lo) * F::fl(t as f64 / 100.0))
            .collect();
        let mut peak = vec![(0usize, F::zero()); r];
        for s in 0..r {
            let mut best_x = 0usize;
            let mut best_v = F::fl(f64::NEG_INFINITY);
            for (t, &x) in grid.iter().enumerate() {
                let v = logistic_proportions(x, &comp.logistic)[s];
                if v > best_v {
                    best_v = v;
                    best_x = t;
                }
            }
            peak[s] = (best_x, best_v);
        }
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by_key(|&s| (peak[s].0, s));
        if order.iter().enumerate().all(|(a, &b)| a == b) {
            continue;
        }
        // full score vectors, with the null reference appended
        let mut scores: Vec<[F; 2]> = comp.w_full();
        let reference = scores[order[r - 1]];
        let new_w: Vec<[F; 2]> = order[..r - 1]
            .iter()
            .map(|&s| [scores[s][0] - reference[0], scores[s][1] - reference[1]])
            .collect();
        scores.clear();
        comp.logistic = LogisticParams { w: new_w };
        comp.betas = order.iter().map(|&s| comp.betas[s].clone()).collect();
        comp.sigma2s = order.iter().map(|&s| comp.sigma2s[s]).collect();
    }
}

impl<F: Scalar> RhlpParams<F> {
    /// All R score vectors including the implicit null reference.
    fn w_full(&self) -> Vec<[F; 2]> {
        let mut v = self.logistic.w.clone();
        v.push([F::zero(); 2]);
        v
    }
}

/// Fit a K-cluster RHLP mixture by EM; cluster `k` has `rs[k]` regimes
/// over polynomials of `degree`.
pub fn fit_em_mixrhlp<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    rs: &[usize],
    opts: &FitOptions<F>,
) -> Result<MixRhlpFit<F>> {
    let k = rs.len();
    if k < 1 || rs.iter().any(|&r| r < 1) {
        return Err(Error::InvalidConfig("K and every R must be at least 1".into()));
    }
    let ctx = rhlp_context(dataset, degree, opts);
    let n = dataset.n();
    let (lo, hi) = dataset.domain();
    let mut best: Option<MixRhlpFit<F>> = None;
    let mut last_err = None;
    for t in 0..opts.n_init.max(1) {
        let seed = opts.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assign = random_partition::<F>(n, k, &mut rng);
        let run = (|| {
            let mut components = Vec::with_capacity(k);
            for kk in 0..k {
                let members: Vec<usize> =
                    (0..n).filter(|&i| assign[(i, kk)] > F::fl(0.5)).collect();
                components.push(seed_component(dataset, &ctx, &members, rs[kk], opts.ridge)?);
            }
            let alphas: Vec<F> = (0..k)
                .map(|kk| {
                    (0..n)
                        .map(|i| assign[(i, kk)])
                        .fold(F::zero(), |a, b| a + b)
                        / F::fl(n as f64)
                })
                .collect();
            let mut params = MixRhlpParams { alphas, components };
            let mut trace = Vec::new();
            let mut converged = false;
            let mut partition;
            loop {
                let (tau, gammas, loglik) = e_step_rhlp(dataset, &ctx, &params)?;
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
                params = m_step_rhlp(dataset, &ctx, &partition, &gammas, &params, opts.ridge)?;
            }
            sort_regimes(&mut params, lo, hi);
            let loglik = *trace.last().unwrap();
            Ok(MixRhlpFit {
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

/// Fit one RHLP to a homogeneous curve group: the K=1 specialization of
/// the mixture fitter, returning per-curve regime posteriors.
pub fn fit_rhlp<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    r: usize,
    opts: &FitOptions<F>,
) -> Result<RhlpFit<F>> {
    let fit = fit_em_mixrhlp(dataset, degree, &[r], opts)?;
    let ctx = rhlp_context(dataset, degree, opts);
    let comp = fit.params.components.into_iter().next().unwrap();
    let gammas = dataset
        .curves()
        .iter()
        .enumerate()
        .map(|(i, c)| regime_posteriors(&comp, c.xs(), c.ys(), &ctx.per_curve[i]).0)
        .collect();
    Ok(RhlpFit {
        params: comp,
        gammas,
        report: fit.report,
    })
}

/// Fitted RHLP mean curve: `y_j = sum_r pi_r(x_j) beta_r' x_j`.
pub fn rhlp_mean_curve<F: Scalar>(comp: &RhlpParams<F>, xs: &[F], design: &DMatrix<F>) -> Vec<F> {
    (0..xs.len())
        .map(|j| {
            let pis = logistic_proportions(xs[j], &comp.logistic);
            let mut v = F::zero();
            for s in 0..comp.r() {
                v += pis[s] * design.row(j).transpose().dot(&comp.betas[s]);
            }
            v
        })
        .collect()
}
