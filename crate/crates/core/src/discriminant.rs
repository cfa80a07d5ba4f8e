//! Supervised functional classification: functional linear discriminant
//! analysis (one conditional model per class) and functional mixture
//! discriminant analysis (one RHLP mixture per class), with prediction
//! by the Bayes rule in log space.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::BasisSpec;
use crate::dataset::{Curve, FunctionalDataset};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::mixreg::FitOptions;
use crate::mixrhlp::{fit_em_mixrhlp, fit_rhlp, regime_posteriors, MixRhlpParams, RhlpParams};
use crate::scalar::{log_normal_pdf, log_sum_exp, Scalar};

/// Class-conditional model family for FLDA.
#[derive(Debug, Clone)]
pub enum FldaFamily<F> {
    /// One Gaussian regression in the given basis per class.
    Basis(BasisSpec<F>),
    /// One RHLP with `r` regimes of polynomials of `degree` per class.
    Rhlp { degree: usize, r: usize },
}

/// One fitted class-conditional density.
#[derive(Debug, Clone)]
pub enum ClassConditional<F> {
    Regression {
        basis: BasisSpec<F>,
        beta: DVector<F>,
        sigma2: F,
    },
    Rhlp { params: RhlpParams<F> },
}

/// Functional linear discriminant analysis model.
#[derive(Debug, Clone)]
pub struct FldaModel<F> {
    /// Original label value of each class, ascending.
    pub class_labels: Vec<usize>,
    pub priors: Vec<F>,
    pub classes: Vec<ClassConditional<F>>,
    /// Abscissa domain seen at training time (for basis expansion).
    pub domain: (F, F),
}

/// Functional mixture discriminant analysis model: a MixRHLP per class.
#[derive(Debug, Clone)]
pub struct FmdaModel<F> {
    pub class_labels: Vec<usize>,
    pub priors: Vec<F>,
    pub classes: Vec<MixRhlpParams<F>>,
    pub degree: usize,
    pub domain: (F, F),
}

/// Group curve indices by ascending label value.
fn class_index<F: Scalar>(dataset: &FunctionalDataset<F>) -> Result<Vec<(usize, Vec<usize>)>> {
    let mut classes: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, c) in dataset.curves().iter().enumerate() {
        let label = c.label.ok_or_else(|| {
            Error::InvalidConfig(format!("curve {} is unlabeled", c.id))
        })?;
        match classes.binary_search_by_key(&label, |e| e.0) {
            Ok(pos) => classes[pos].1.push(i),
            Err(pos) => classes.insert(pos, (label, vec![i])),
        }
    }
    if classes.len() < 2 {
        return Err(Error::InvalidConfig(
            "classification needs at least two classes".into(),
        ));
    }
    Ok(classes)
}

fn subset<F: Scalar>(dataset: &FunctionalDataset<F>, indices: &[usize]) -> FunctionalDataset<F> {
    FunctionalDataset::new(
        indices
            .iter()
            .map(|&i| dataset.curves()[i].clone())
            .collect(),
    )
    .expect("class subsets are nonempty")
}

/// Train an FLDA model: class priors are the class frequencies; each
/// class conditional is fit independently on its own curves.
pub fn train_flda<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    family: &FldaFamily<F>,
    opts: &FitOptions<F>,
) -> Result<FldaModel<F>> {
    let classes = class_index(dataset)?;
    let n = dataset.n();
    let domain = dataset.domain();
    let floor = opts
        .variance_floor
        .unwrap_or_else(|| F::fl(crate::mixreg::VARIANCE_FLOOR_FACTOR) * dataset.response_variance());
    let mut priors = Vec::with_capacity(classes.len());
    let mut fitted = Vec::with_capacity(classes.len());
    let mut labels = Vec::with_capacity(classes.len());
    for (label, members) in &classes {
        if members.len() < 2 && opts.variance_floor.is_none() {
            return Err(Error::InvalidConfig(format!(
                "class {label} has a single curve; its variance is undefined \
                 (set an explicit variance floor to allow this)"
            )));
        }
        labels.push(*label);
        priors.push(F::fl(members.len() as f64) / F::fl(n as f64));
        let class_data = subset(dataset, members);
        let conditional = match family {
            FldaFamily::Basis(basis) => {
                let p = basis.dimension();
                let mut gram = DMatrix::zeros(p, p);
                let mut rhs = DVector::zeros(p);
                let mut yty = F::zero();
                let mut count = 0usize;
                for c in class_data.curves() {
                    let design = basis.design(c.xs(), domain.0, domain.1)?;
                    let y = DVector::from_column_slice(c.ys());
                    gram += design.transpose() * &design;
                    rhs += design.transpose() * &y;
                    yty += y.dot(&y);
                    count += c.len();
                }
                let beta = solve_spd(&gram, &rhs, opts.ridge)?;
                let mut rss = yty - F::fl(2.0) * beta.dot(&rhs) + beta.dot(&(&gram * &beta));
                if rss < F::zero() {
                    rss = F::zero();
                }
                let mut sigma2 = rss / F::fl(count as f64);
                if sigma2 < floor {
                    sigma2 = floor;
                }
                ClassConditional::Regression {
                    basis: basis.clone(),
                    beta,
                    sigma2,
                }
            }
            FldaFamily::Rhlp { degree, r } => {
                let mut class_opts = opts.clone();
                class_opts.variance_floor = Some(floor);
                let fit = fit_rhlp(&class_data, *degree, *r, &class_opts)?;
                ClassConditional::Rhlp { params: fit.params }
            }
        };
        fitted.push(conditional);
    }
    Ok(FldaModel {
        class_labels: labels,
        priors,
        classes: fitted,
        domain,
    })
}

/// Train an FMDA model: per class, a MixRHLP with `configs[g]` regime
/// counts (one entry per sub-cluster of that class).
pub fn train_fmda<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    degree: usize,
    configs: &[Vec<usize>],
    opts: &FitOptions<F>,
) -> Result<FmdaModel<F>> {
    let classes = class_index(dataset)?;
    if configs.len() != classes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} per-class configurations for {} classes",
            configs.len(),
            classes.len()
        )));
    }
    let n = dataset.n();
    let domain = dataset.domain();
    let floor = opts
        .variance_floor
        .unwrap_or_else(|| F::fl(crate::mixreg::VARIANCE_FLOOR_FACTOR) * dataset.response_variance());
    let mut priors = Vec::with_capacity(classes.len());
    let mut fitted = Vec::with_capacity(classes.len());
    let mut labels = Vec::with_capacity(classes.len());
    for ((label, members), rs) in classes.iter().zip(configs) {
        if members.len() < 2 && opts.variance_floor.is_none() {
            return Err(Error::InvalidConfig(format!(
                "class {label} has a single curve; its variance is undefined \
                 (set an explicit variance floor to allow this)"
            )));
        }
        labels.push(*label);
        priors.push(F::fl(members.len() as f64) / F::fl(n as f64));
        let class_data = subset(dataset, members);
        let mut class_opts = opts.clone();
        class_opts.variance_floor = Some(floor);
        let fit = fit_em_mixrhlp(&class_data, degree, rs, &class_opts)?;
        fitted.push(fit.params);
    }
    Ok(FmdaModel {
        class_labels: labels,
        priors,
        classes: fitted,
        degree,
        domain,
    })
}

fn regression_loglik<F: Scalar>(
    curve: &Curve<F>,
    basis: &BasisSpec<F>,
    beta: &DVector<F>,
    sigma2: F,
    domain: (F, F),
) -> Result<F> {
    let design = basis.design(curve.xs(), domain.0, domain.1)?;
    let mut ll = F::zero();
    for j in 0..curve.len() {
        let mean = design.row(j).transpose().dot(beta);
        ll += log_normal_pdf(curve.ys()[j], mean, sigma2);
    }
    Ok(ll)
}

fn rhlp_loglik<F: Scalar>(curve: &Curve<F>, params: &RhlpParams<F>) -> F {
    let degree = params.betas[0].len() - 1;
    let design = DMatrix::from_fn(curve.len(), degree + 1, |i, j| curve.xs()[i].powi(j as i32));
    regime_posteriors(params, curve.xs(), curve.ys(), &design).1
}

fn mixrhlp_loglik<F: Scalar>(curve: &Curve<F>, params: &MixRhlpParams<F>) -> F {
    let terms: Vec<F> = params
        .alphas
        .iter()
        .zip(&params.components)
        .map(|(&a, comp)| a.ln() + rhlp_loglik(curve, comp))
        .collect();
    log_sum_exp(&terms)
}

/// Predicted labels (original label values) and posterior class
/// probabilities, one row per curve.
pub struct Prediction<F> {
    pub labels: Vec<usize>,
    pub posteriors: DMatrix<F>,
}

fn bayes_predict<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    class_labels: &[usize],
    priors: &[F],
    logliks: impl Fn(&Curve<F>, usize) -> Result<F>,
) -> Result<Prediction<F>> {
    let n = dataset.n();
    let g = class_labels.len();
    let mut posteriors = DMatrix::zeros(n, g);
    let mut labels = Vec::with_capacity(n);
    let mut row = vec![F::zero(); g];
    for (i, c) in dataset.curves().iter().enumerate() {
        for (cls, r) in row.iter_mut().enumerate() {
            *r = priors[cls].ln() + logliks(c, cls)?;
        }
        let lse = log_sum_exp(&row);
        if !lse.is_finite() {
            return Err(Error::Degenerate(format!(
                "curve {} has zero density under every class",
                c.id
            )));
        }
        let mut best = 0usize;
        for cls in 0..g {
            posteriors[(i, cls)] = (row[cls] - lse).exp();
            if row[cls] > row[best] {
                best = cls;
            }
        }
        labels.push(class_labels[best]);
    }
    Ok(Prediction { labels, posteriors })
}

/// Bayes-rule prediction under an FLDA model.
pub fn predict_flda<F: Scalar>(
    model: &FldaModel<F>,
    dataset: &FunctionalDataset<F>,
) -> Result<Prediction<F>> {
    bayes_predict(dataset, &model.class_labels, &model.priors, |c, cls| {
        match &model.classes[cls] {
            ClassConditional::Regression {
                basis,
                beta,
                sigma2,
            } => regression_loglik(c, basis, beta, *sigma2, model.domain),
            ClassConditional::Rhlp { params } => Ok(rhlp_loglik(c, params)),
        }
    })
}

/// Bayes-rule prediction under an FMDA model.
pub fn predict_fmda<F: Scalar>(
    model: &FmdaModel<F>,
    dataset: &FunctionalDataset<F>,
) -> Result<Prediction<F>> {
    bayes_predict(dataset, &model.class_labels, &model.priors, |c, cls| {
        Ok(mixrhlp_loglik(c, &model.classes[cls]))
    })
}

/// Seeded stratified folds: within each class, curves are shuffled and
/// dealt round-robin into `k` folds. Returns fold index per curve.
pub fn stratified_folds<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig("need at least two folds".into()));
    }
    let classes = class_index(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; dataset.n()];
    for (_, members) in &classes {
        let mut order = members.clone();
        order.shuffle(&mut rng);
        for (pos, &i) in order.iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}
