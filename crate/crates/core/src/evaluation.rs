//! Model selection criteria (BIC/AIC/ICL) and clustering quality
//! metrics shared by all mixture families.

use itertools::Itertools;

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::mixhmmr::MixHmmrParams;
use crate::mixreg::{MixRegParams, SoftPartition};
use crate::mixrhlp::MixRhlpParams;
use crate::pwrm::PwrmParams;
use crate::scalar::Scalar;

/// Selection criteria for one fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionValues<F> {
    pub loglik: F,
    /// Observed log-likelihood plus the log posterior of the MAP labels.
    pub complete_loglik_at_map: F,
    /// Number of free parameters.
    pub nu: usize,
    pub n: usize,
    pub bic: F,
    pub aic: F,
    pub icl: F,
}

/// Reference to any family's parameter record, for parameter counting.
#[derive(Debug, Clone, Copy)]
pub enum ModelParams<'a, F> {
    MixReg(&'a MixRegParams<F>),
    Pwrm(&'a PwrmParams<F>),
    MixHmmr(&'a MixHmmrParams<F>),
    MixRhlp(&'a MixRhlpParams<F>),
}

/// Count the free parameters of a fitted model.
///
/// All families share the `K - 1` free mixing proportions and, per
/// cluster, regression coefficients and variances; each adds its own
/// structural parameters (segment boundaries, chain entries, logistic
/// weights).
pub fn count_free_parameters<F: Scalar>(params: &ModelParams<'_, F>) -> usize {
    match params {
        ModelParams::MixReg(p) => {
            let k = p.k();
            (k - 1) + k * p.p() + k
        }
        ModelParams::Pwrm(p) => {
            let k = p.k();
            let mut nu = k - 1;
            for cl in &p.clusters {
                let r = cl.segmentation.r();
                let pdim = cl.betas[0].len();
                // interior boundaries are optimized quantities
                nu += (r - 1) + r * (pdim + 1);
            }
            nu
        }
        ModelParams::MixHmmr(p) => {
            let k = p.k();
            let mut nu = k - 1;
            for cl in &p.clusters {
                let r = cl.chain.r();
                let pdim = cl.betas[0].len();
                let transition_free = if cl.chain.left_right {
                    r * (r - 1) / 2
                } else {
                    r * (r - 1)
                };
                nu += (r - 1) + transition_free + r * pdim + r;
            }
            nu
        }
        ModelParams::MixRhlp(p) => {
            let k = p.k();
            let mut nu = k - 1;
            for comp in &p.components {
                let r = comp.r();
                let pdim = comp.betas[0].len();
                nu += 2 * (r - 1) + r * pdim + r;
            }
            nu
        }
    }
}

/// BIC, AIC and ICL from the observed log-likelihood, the parameter
/// count and the soft partition.
///
/// ICL is the complete-data log-likelihood at the MAP partition minus
/// the BIC penalty; it equals BIC when the partition is crisp.
pub fn bic_aic_icl<F: Scalar>(
    loglik: F,
    nu: usize,
    n: usize,
    partition: &SoftPartition<F>,
) -> CriterionValues<F> {
    let two = F::fl(2.0);
    let penalty = F::fl(nu as f64) * F::fl(n as f64).ln() / two;
    let bic = loglik - penalty;
    let aic = loglik - F::fl(nu as f64);
    let labels = partition.hard_labels();
    let mut map_logpost = F::zero();
    for (i, &l) in labels.iter().enumerate() {
        map_logpost += partition.tau[(i, l)].ln();
    }
    let complete = loglik + map_logpost;
    CriterionValues {
        loglik,
        complete_loglik_at_map: complete,
        nu,
        n,
        bic,
        aic,
        icl: complete - penalty,
    }
}

/// Map arbitrary label values to dense indices, preserving first
/// appearance order.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        let next = map.len();
        out.push(*map.entry(l).or_insert(next));
    }
    (out, map.len())
}

/// Minimum assignment cost by shortest augmenting paths (O(k^3)).
/// `cost` is square; returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    // potentials and matching in 1-based internal indexing
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut p = vec![0usize; k + 1]; // p[col] = row matched to col
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; k];
    for j in 1..=k {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of curves misassigned under the best relabeling of the
/// predicted partition: exhaustive over permutations for K <= 8,
/// optimal assignment on the confusion matrix beyond.
pub fn misclassification_rate(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} true labels vs {} predicted",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (t, kt) = compact(truth);
    let (p, kp) = compact(predicted);
    let k = kt.max(kp);
    let mut confusion = vec![vec![0usize; k]; k];
    for (&a, &b) in t.iter().zip(&p) {
        confusion[a][b] += 1;
    }
    let n = truth.len();
    let best_agreement: usize = if k <= 8 {
        (0..k)
            .permutations(k)
            .map(|perm| (0..k).map(|a| confusion[a][perm[a]]).sum())
            .max()
            .unwrap()
    } else {
        // maximize agreement = minimize (n - agreement)
        let cost: Vec<Vec<f64>> = confusion
            .iter()
            .map(|row| row.iter().map(|&c| -(c as f64)).collect())
            .collect();
        let assign = hungarian(&cost);
        (0..k).map(|a| confusion[a][assign[a]]).sum()
    };
    Ok((n - best_agreement) as f64 / n as f64)
}

/// Adjusted Rand index between two partitions (pair-counting form).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} labels",
            a.len(),
            b.len()
        )));
    }
    let (ca, ka) = compact(a);
    let (cb, kb) = compact(b);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in ca.iter().zip(&cb) {
        table[x][y] += 1;
    }
    let choose2 = |x: usize| -> f64 { (x * x.saturating_sub(1)) as f64 / 2.0 };
    let n = a.len();
    let sum_cells: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = table
        .iter()
        .map(|row| choose2(row.iter().sum::<usize>()))
        .sum();
    let sum_cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum::<usize>()))
        .sum();
    let total = choose2(n);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-300 {
        return Ok(1.0); // both partitions trivial
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Intra-cluster inertia: squared distance of every curve to its
/// cluster's mean curve on the common grid.
pub fn intra_cluster_inertia<F: Scalar>(
    dataset: &FunctionalDataset<F>,
    labels: &[usize],
    means: &[Vec<F>],
) -> Result<F> {
    if !dataset.common_grid() {
        return Err(Error::NonCommonGrid(dataset.grid_offenders().join(", ")));
    }
    if labels.len() != dataset.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} curves",
            labels.len(),
            dataset.n()
        )));
    }
    let m = dataset.curves()[0].len();
    if means.iter().any(|mc| mc.len() != m) {
        return Err(Error::DimensionMismatch(
            "mean curves must live on the data grid".into(),
        ));
    }
    let mut total = F::zero();
    for (c, &l) in dataset.curves().iter().zip(labels) {
        let mean = means.get(l).ok_or_else(|| {
            Error::DimensionMismatch(format!("label {l} has no mean curve"))
        })?;
        for j in 0..m {
            let d = c.ys()[j] - mean[j];
            total += d * d;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Curve;
    use crate::mixrhlp::{LogisticParams, RhlpParams};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    #[test]
    fn free_parameter_counts_match_hand_enumeration() {
        let mk = |k: usize, p: usize| MixRegParams::<f64> {
            alphas: vec![1.0 / k as f64; k],
            betas: vec![DVector::zeros(p); k],
            sigma2s: vec![1.0; k],
        };
        assert_eq!(count_free_parameters(&ModelParams::MixReg(&mk(1, 2))), 3);
        assert_eq!(count_free_parameters(&ModelParams::MixReg(&mk(3, 4))), 17);

        let comp = |r: usize, p: usize| RhlpParams::<f64> {
            logistic: LogisticParams::zeros(r),
            betas: vec![DVector::zeros(p); r],
            sigma2s: vec![1.0; r],
        };
        let mix = MixRhlpParams {
            alphas: vec![0.5, 0.5],
            components: vec![comp(3, 4), comp(3, 4)],
        };
        // 1 + 2*(2*2) + 2*(3*4) + 2*3
        assert_eq!(count_free_parameters(&ModelParams::MixRhlp(&mix)), 39);
    }

    #[test]
    fn criteria_formulas() {
        let tau = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let part = SoftPartition { tau };
        let c = bic_aic_icl(-100.0f64, 5, 50, &part);
        assert!((c.bic - (-100.0 - 5.0 * (50.0f64).ln() / 2.0)).abs() < 1e-9);
        assert!((c.aic - -105.0).abs() < 1e-12);
        // crisp partition: ICL equals BIC
        assert!((c.icl - c.bic).abs() < 1e-12);
        // soft partition: ICL below BIC
        let tau = DMatrix::from_element(2, 2, 0.5);
        let soft = bic_aic_icl(-100.0f64, 5, 50, &SoftPartition { tau });
        assert!(soft.icl < soft.bic);
    }

    #[test]
    fn misclassification_is_permutation_invariant() {
        assert_eq!(
            misclassification_rate(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(),
            0.0
        );
        assert_eq!(
            misclassification_rate(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap(),
            0.5
        );
    }

    #[test]
    fn hungarian_agrees_with_exhaustive_permutations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(4..=8);
            let k = rng.gen_range(2..=4);
            let truth: Vec<usize> = (0..n).map(|i| i % k + 1).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=k)).collect();
            let exhaustive = misclassification_rate(&truth, &pred).unwrap();
            // force the Hungarian path on an equivalent padded instance
            let (t, kt) = compact(&truth);
            let (p, kp) = compact(&pred);
            let kk = kt.max(kp);
            let mut confusion = vec![vec![0usize; kk]; kk];
            for (&a, &b) in t.iter().zip(&p) {
                confusion[a][b] += 1;
            }
            let cost: Vec<Vec<f64>> = confusion
                .iter()
                .map(|row| row.iter().map(|&c| -(c as f64)).collect())
                .collect();
            let assign = hungarian(&cost);
            let agree: usize = (0..kk).map(|a| confusion[a][assign[a]]).sum();
            let hung = (n - agree) as f64 / n as f64;
            assert!((hung - exhaustive).abs() < 1e-12);
        }
    }

    #[test]
    fn ari_basics() {
        let a = [1, 1, 2, 2, 3, 3];
        assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let relabeled = [3, 3, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &relabeled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_of_random_partitions_is_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut total = 0.0;
        let draws = 1000;
        for _ in 0..draws {
            let a: Vec<usize> = (0..30).map(|_| rng.gen_range(1..=3)).collect();
            let b: Vec<usize> = (0..30).map(|_| rng.gen_range(1..=3)).collect();
            total += adjusted_rand_index(&a, &b).unwrap();
        }
        assert!((total / draws as f64).abs() < 0.05);
    }

    #[test]
    fn inertia_matches_naive_double_loop() {
        let xs: Vec<f64> = (0..4).map(|j| j as f64).collect();
        let curves = vec![
            Curve::new("a", xs.clone(), vec![1.0, 2.0, 1.5, 0.5], None).unwrap(),
            Curve::new("b", xs.clone(), vec![0.0, 0.5, 1.0, 1.5], None).unwrap(),
            Curve::new("c", xs.clone(), vec![5.0, 5.5, 4.5, 5.0], None).unwrap(),
        ];
        let d = FunctionalDataset::new(curves).unwrap();
        let labels = [0usize, 0, 1];
        let means = vec![vec![0.5, 1.25, 1.25, 1.0], vec![5.0, 5.5, 4.5, 5.0]];
        let got = intra_cluster_inertia(&d, &labels, &means).unwrap();
        let mut naive = 0.0;
        for (c, &l) in d.curves().iter().zip(&labels) {
            for j in 0..4 {
                naive += (c.ys()[j] - means[l][j]).powi(2);
            }
        }
        assert!((got - naive).abs() < 1e-9);
        // perfect means give zero inertia
        let zero = intra_cluster_inertia(&d, &[0, 1, 2], &[
            d.curves()[0].ys().to_vec(),
            d.curves()[1].ys().to_vec(),
            d.curves()[2].ys().to_vec(),
        ])
        .unwrap();
        assert_eq!(zero, 0.0);
    }
}
