use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::json;

use curveclust::basis::{BasisSpec, Knots};
use curveclust::dataset::{
    generate_regime_curves, generate_waveform, load_csv, save_csv, Curve, FunctionalDataset,
    RegimeSpec, WaveformSpec,
};
use curveclust::discriminant::{
    predict_flda, predict_fmda, train_flda, train_fmda, ClassConditional, FldaFamily,
};
use curveclust::evaluation::{
    adjusted_rand_index, bic_aic_icl, count_free_parameters, intra_cluster_inertia,
    misclassification_rate, CriterionValues, ModelParams,
};
use curveclust::mixhmmr::{fit_em_mixhmmr, forward_backward, hmmr_mean_curve, HmmOptions};
use curveclust::mixreg::{
    fit_em, fit_robust_em, mean_curves, FitOptions, FitReport, RobustOptions, SoftPartition,
};
use curveclust::mixrhlp::{
    fit_em_mixrhlp, fit_rhlp, logistic_proportions, regime_posteriors, rhlp_mean_curve,
    MixRhlpParams, RhlpParams,
};
use curveclust::pwrm::{cluster_loglik, dp_segment, fit_cem_pwrm, fit_em_pwrm, pwrm_mean_curve, CemOptions};
use curveclust::scalar::{log_normal_pdf, log_sum_exp};
use curveclust::serialize::{
    document, family_tag, flda_from_record, flda_record, fmda_from_record, fmda_record,
    mixhmmr_from_record, mixhmmr_record, mixreg_from_record, mixreg_record, mixrhlp_from_record,
    mixrhlp_record, pwrm_from_record, pwrm_record, read_model, rhlp_from_record, rhlp_record,
    write_model, ModelRecord,
};
use curveclust::{Error, Result};

use crate::artifacts::{
    fmt_float, write_json, write_means, write_partition, write_predictions, write_proportions,
    write_segments, write_selection, write_text, SelectionRow,
};
use crate::{
    BasisArg, CriterionArg, DatasetKind, EvaluateArgs, FitArgs, GenerateArgs, ModelArgs,
    ModelFamily, PredictArgs, SegmentArgs, SelectArgs,
};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

// ---- configuration resolution ----

/// Option values from a JSON config file; CLI flags take precedence.
#[derive(Debug, Default, serde::Deserialize)]
struct FileConfig {
    degree: Option<usize>,
    knots: Option<usize>,
    #[serde(rename = "K")]
    k: Option<usize>,
    #[serde(rename = "R")]
    r: Option<UsizeOrList>,
    lambda: Option<f64>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    n_init: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(untagged)]
enum UsizeOrList {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Clone)]
pub struct Resolved {
    pub family: ModelFamily,
    pub basis: BasisArg,
    pub degree: usize,
    pub knots: usize,
    pub k: Option<usize>,
    pub rs: Option<Vec<usize>>,
    pub robust: bool,
    pub lambda: Option<f64>,
    pub opts: FitOptions<f64>,
    pub constrained: bool,
    pub cem: bool,
    pub interpolate: bool,
}

fn resolve(args: &ModelArgs) -> Result<(Resolved, serde_json::Value)> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("config file: {e}")))?
        }
        None => FileConfig::default(),
    };
    let default_degree = match args.model {
        ModelFamily::Mixreg | ModelFamily::Flda | ModelFamily::Fmda => 3,
        _ => 1,
    };
    let degree = args.degree.or(file.degree).unwrap_or(default_degree);
    let knots = args.knots.or(file.knots).unwrap_or(3);
    let k = args.k.or(file.k);
    let rs = args.r.clone().or_else(|| {
        file.r.map(|r| match r {
            UsizeOrList::One(v) => vec![v],
            UsizeOrList::Many(vs) => vs,
        })
    });
    let lambda = args.lambda.or(file.lambda);
    let mut opts = FitOptions::<f64>::default();
    if let Some(v) = args.max_iter.or(file.max_iter) {
        opts.max_iter = v;
    }
    if let Some(v) = args.tol.or(file.tol) {
        opts.tol = v;
    }
    if let Some(v) = args.n_init.or(file.n_init) {
        opts.n_init = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        opts.seed = v;
    }
    let resolved = Resolved {
        family: args.model,
        basis: args.basis,
        degree,
        knots,
        k,
        rs,
        robust: args.robust,
        lambda,
        opts,
        constrained: args.constrained,
        cem: args.cem || args.constrained,
        interpolate: args.interpolate,
    };
    let config_json = json!({
        "model": family_name(args.model),
        "basis": basis_name(args.basis),
        "degree": degree,
        "knots": knots,
        "K": resolved.k,
        "R": resolved.rs,
        "robust": resolved.robust,
        "lambda": resolved.lambda,
        "max_iter": resolved.opts.max_iter,
        "tol": resolved.opts.tol,
        "n_init": resolved.opts.n_init,
        "seed": resolved.opts.seed,
        "interpolate": resolved.interpolate,
        "constrained": resolved.constrained,
        "cem": resolved.cem,
    });
    Ok((resolved, config_json))
}

fn family_name(f: ModelFamily) -> &'static str {
    match f {
        ModelFamily::Mixreg => "mixreg",
        ModelFamily::Pwrm => "pwrm",
        ModelFamily::Mixhmmr => "mixhmmr",
        ModelFamily::Mixrhlp => "mixrhlp",
        ModelFamily::Rhlp => "rhlp",
        ModelFamily::Flda => "flda",
        ModelFamily::Fmda => "fmda",
    }
}

fn basis_name(b: BasisArg) -> &'static str {
    match b {
        BasisArg::Poly => "poly",
        BasisArg::Spline => "spline",
        BasisArg::Bspline => "bspline",
    }
}

fn basis_spec(cfg: &Resolved) -> BasisSpec<f64> {
    match cfg.basis {
        BasisArg::Poly => BasisSpec::polynomial(cfg.degree),
        BasisArg::Spline => BasisSpec::spline(cfg.degree, Knots::Count(cfg.knots)),
        BasisArg::Bspline => BasisSpec::bspline(cfg.degree, Knots::Count(cfg.knots)),
    }
}

fn regimes_for(k: usize, rs: &Option<Vec<usize>>) -> Result<Vec<usize>> {
    match rs {
        None => Err(Error::InvalidConfig("--R is required for this model".into())),
        Some(list) if list.len() == 1 => Ok(vec![list[0]; k]),
        Some(list) if list.len() == k => Ok(list.clone()),
        Some(list) => Err(Error::InvalidConfig(format!(
            "--R has {} entries but K={k}",
            list.len()
        ))),
    }
}

fn require_k(cfg: &Resolved) -> Result<usize> {
    cfg.k
        .ok_or_else(|| Error::InvalidConfig("--K is required for this model".into()))
}

// ---- shared fit plumbing ----

pub struct Fitted {
    pub record: ModelRecord,
    pub hard: Vec<usize>,
    pub tau: DMatrix<f64>,
    pub means: Vec<(String, Vec<(f64, f64)>)>,
    pub proportions: Vec<(usize, usize, f64, f64)>,
    pub fit_json: serde_json::Value,
    pub criteria: Option<CriterionValues<f64>>,
    pub summary: String,
}

fn mean_grid(d: &FunctionalDataset<f64>) -> Vec<f64> {
    if let Some(g) = d.grid() {
        g.to_vec()
    } else {
        let (lo, hi) = d.domain();
        (0..100).map(|i| lo + (hi - lo) * i as f64 / 99.0).collect()
    }
}

fn poly_design(grid: &[f64], degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(grid.len(), degree + 1, |i, j| grid[i].powi(j as i32))
}

fn report_json(report: &FitReport<f64>) -> serde_json::Value {
    json!({
        "iterations": report.iterations,
        "converged": report.converged,
        "final_K": report.final_k,
        "loglik": report.loglik,
        "seed": report.seed,
        "objective_trace": report.objective_trace,
    })
}

fn pair_means(grid: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    grid.iter().copied().zip(ys.iter().copied()).collect()
}

fn rhlp_proportion_rows(
    cluster: usize,
    comp: &RhlpParams<f64>,
    grid: &[f64],
) -> Vec<(usize, usize, f64, f64)> {
    let mut rows = Vec::new();
    for &x in grid {
        let pis = logistic_proportions(x, &comp.logistic);
        for (s, &pi) in pis.iter().enumerate() {
            rows.push((cluster, s + 1, x, pi));
        }
    }
    rows
}

pub fn fit_one(dataset: &FunctionalDataset<f64>, cfg: &Resolved) -> Result<Fitted> {
    let n = dataset.n();
    let grid = mean_grid(dataset);
    match cfg.family {
        ModelFamily::Mixreg => {
            let spec = basis_spec(cfg);
            let fit = if cfg.robust {
                let ropts = RobustOptions {
                    base: cfg.opts.clone(),
                    lambda_override: cfg.lambda,
                    discard: true,
                };
                fit_robust_em(dataset, &spec, &ropts)?
            } else {
                fit_em(dataset, &spec, require_k(cfg)?, &cfg.opts)?
            };
            let nu = count_free_parameters(&ModelParams::MixReg(&fit.params));
            let crit = bic_aic_icl(fit.report.loglik, nu, n, &fit.partition);
            let (lo, hi) = dataset.domain();
            let mc = mean_curves(&fit.params, &spec, &grid, lo, hi)?;
            Ok(Fitted {
                record: mixreg_record(&fit.params, &spec),
                hard: fit.partition.hard_labels().iter().map(|&l| l + 1).collect(),
                tau: fit.partition.tau.clone(),
                means: mc
                    .iter()
                    .enumerate()
                    .map(|(kk, ys)| ((kk + 1).to_string(), pair_means(&grid, ys)))
                    .collect(),
                proportions: Vec::new(),
                fit_json: report_json(&fit.report),
                criteria: Some(crit),
                summary: format!(
                    "mixreg K={} loglik={:.6} converged={}",
                    fit.report.final_k, fit.report.loglik, fit.report.converged
                ),
            })
        }
        ModelFamily::Pwrm => {
            let k = require_k(cfg)?;
            let rs = regimes_for(k, &cfg.rs)?;
            let fit = if cfg.cem {
                fit_cem_pwrm(
                    dataset,
                    cfg.degree,
                    &rs,
                    &cfg.opts,
                    &CemOptions {
                        constrained: cfg.constrained,
                        initial_labels: None,
                    },
                )?
            } else {
                fit_em_pwrm(dataset, cfg.degree, &rs, &cfg.opts)?
            };
            let nu = count_free_parameters(&ModelParams::Pwrm(&fit.params));
            let crit = bic_aic_icl(fit.report.loglik, nu, n, &fit.partition);
            let common = dataset.grid().expect("pwrm fits require a common grid");
            Ok(Fitted {
                record: pwrm_record(&fit.params, cfg.degree, common),
                hard: fit.partition.hard_labels().iter().map(|&l| l + 1).collect(),
                tau: fit.partition.tau.clone(),
                means: fit
                    .params
                    .clusters
                    .iter()
                    .enumerate()
                    .map(|(kk, c)| {
                        let ys = pwrm_mean_curve(c, common, cfg.degree);
                        ((kk + 1).to_string(), pair_means(common, &ys))
                    })
                    .collect(),
                proportions: Vec::new(),
                fit_json: report_json(&fit.report),
                criteria: Some(crit),
                summary: format!(
                    "pwrm K={k} loglik={:.6} converged={}",
                    fit.report.loglik, fit.report.converged
                ),
            })
        }
        ModelFamily::Mixhmmr => {
            let k = require_k(cfg)?;
            let rs = regimes_for(k, &cfg.rs)?;
            let hopts = HmmOptions {
                base: cfg.opts.clone(),
                left_right: true,
                stay: 0.9,
            };
            let fit = fit_em_mixhmmr(dataset, cfg.degree, &rs, &hopts)?;
            let nu = count_free_parameters(&ModelParams::MixHmmr(&fit.params));
            let crit = bic_aic_icl(fit.report.loglik, nu, n, &fit.partition);
            let design = poly_design(&grid, cfg.degree);
            let means = match &fit.cluster_gammas {
                Some(gammas) => fit
                    .params
                    .clusters
                    .iter()
                    .zip(gammas)
                    .enumerate()
                    .map(|(kk, (c, g))| {
                        let ys = hmmr_mean_curve(&c.betas, g, &design);
                        ((kk + 1).to_string(), pair_means(&grid, &ys))
                    })
                    .collect(),
                None => Vec::new(),
            };
            Ok(Fitted {
                record: mixhmmr_record(&fit.params, cfg.degree),
                hard: fit.partition.hard_labels().iter().map(|&l| l + 1).collect(),
                tau: fit.partition.tau.clone(),
                means,
                proportions: Vec::new(),
                fit_json: report_json(&fit.report),
                criteria: Some(crit),
                summary: format!(
                    "mixhmmr K={k} loglik={:.6} converged={}",
                    fit.report.loglik, fit.report.converged
                ),
            })
        }
        ModelFamily::Mixrhlp => {
            let k = require_k(cfg)?;
            let rs = regimes_for(k, &cfg.rs)?;
            let fit = fit_em_mixrhlp(dataset, cfg.degree, &rs, &cfg.opts)?;
            let nu = count_free_parameters(&ModelParams::MixRhlp(&fit.params));
            let crit = bic_aic_icl(fit.report.loglik, nu, n, &fit.partition);
            let design = poly_design(&grid, cfg.degree);
            let mut proportions = Vec::new();
            let means = fit
                .params
                .components
                .iter()
                .enumerate()
                .map(|(kk, comp)| {
                    proportions.extend(rhlp_proportion_rows(kk + 1, comp, &grid));
                    let ys = rhlp_mean_curve(comp, &grid, &design);
                    ((kk + 1).to_string(), pair_means(&grid, &ys))
                })
                .collect();
            Ok(Fitted {
                record: mixrhlp_record(&fit.params, cfg.degree),
                hard: fit.partition.hard_labels().iter().map(|&l| l + 1).collect(),
                tau: fit.partition.tau.clone(),
                means,
                proportions,
                fit_json: report_json(&fit.report),
                criteria: Some(crit),
                summary: format!(
                    "mixrhlp K={k} loglik={:.6} converged={}",
                    fit.report.loglik, fit.report.converged
                ),
            })
        }
        ModelFamily::Rhlp => {
            let rs = cfg.rs.as_ref().ok_or_else(|| {
                Error::InvalidConfig("--R is required for this model".into())
            })?;
            if rs.len() != 1 {
                return Err(Error::InvalidConfig("rhlp takes a single --R".into()));
            }
            let fit = fit_rhlp(dataset, cfg.degree, rs[0], &cfg.opts)?;
            let wrapped = MixRhlpParams {
                alphas: vec![1.0],
                components: vec![fit.params.clone()],
            };
            let nu = count_free_parameters(&ModelParams::MixRhlp(&wrapped));
            let partition = SoftPartition {
                tau: DMatrix::from_element(n, 1, 1.0),
            };
            let crit = bic_aic_icl(fit.report.loglik, nu, n, &partition);
            let design = poly_design(&grid, cfg.degree);
            let ys = rhlp_mean_curve(&fit.params, &grid, &design);
            Ok(Fitted {
                record: rhlp_record(&fit.params, cfg.degree),
                hard: vec![1; n],
                tau: partition.tau.clone(),
                means: vec![("1".into(), pair_means(&grid, &ys))],
                proportions: rhlp_proportion_rows(1, &fit.params, &grid),
                fit_json: report_json(&fit.report),
                criteria: Some(crit),
                summary: format!(
                    "rhlp R={} loglik={:.6} converged={}",
                    rs[0], fit.report.loglik, fit.report.converged
                ),
            })
        }
        ModelFamily::Flda => {
            let family = match &cfg.rs {
                Some(rs) => FldaFamily::Rhlp {
                    degree: cfg.degree,
                    r: rs[0],
                },
                None => FldaFamily::Basis(basis_spec(cfg)),
            };
            let model = train_flda(dataset, &family, &cfg.opts)?;
            let pred = predict_flda(&model, dataset)?;
            let truth = dataset.labels().expect("flda training data is labeled");
            let errors = truth
                .iter()
                .zip(&pred.labels)
                .filter(|(t, p)| t != p)
                .count();
            let design = poly_design(&grid, cfg.degree);
            let means = model
                .classes
                .iter()
                .zip(&model.class_labels)
                .map(|(c, &label)| {
                    let ys = match c {
                        ClassConditional::Regression { basis, beta, .. } => {
                            let d = basis
                                .design(&grid, model.domain.0, model.domain.1)
                                .expect("training domain covers the mean grid");
                            (&d * beta).iter().copied().collect::<Vec<f64>>()
                        }
                        ClassConditional::Rhlp { params } => {
                            rhlp_mean_curve(params, &grid, &design)
                        }
                    };
                    (label.to_string(), pair_means(&grid, &ys))
                })
                .collect();
            Ok(Fitted {
                record: flda_record(&model),
                hard: pred.labels,
                tau: pred.posteriors,
                means,
                proportions: Vec::new(),
                fit_json: json!({
                    "classes": model.class_labels,
                    "priors": model.priors,
                    "training_error": errors as f64 / n as f64,
                }),
                criteria: None,
                summary: format!(
                    "flda G={} training_error={:.4}",
                    model.class_labels.len(),
                    errors as f64 / n as f64
                ),
            })
        }
        ModelFamily::Fmda => {
            let rs = cfg.rs.as_ref().ok_or_else(|| {
                Error::InvalidConfig("--R is required for this model".into())
            })?;
            let sub_k = cfg.k.unwrap_or(1);
            let labels = dataset
                .labels()
                .ok_or_else(|| Error::InvalidConfig("fmda needs labeled curves".into()))?;
            let mut distinct = labels.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let configs = vec![vec![rs[0]; sub_k]; distinct.len()];
            let model = train_fmda(dataset, cfg.degree, &configs, &cfg.opts)?;
            let pred = predict_fmda(&model, dataset)?;
            let errors = labels
                .iter()
                .zip(&pred.labels)
                .filter(|(t, p)| t != p)
                .count();
            let design = poly_design(&grid, cfg.degree);
            let means = model
                .classes
                .iter()
                .zip(&model.class_labels)
                .map(|(mix, &label)| {
                    // class mean = proportion-weighted mixture of sub-cluster means
                    let mut ys = vec![0.0; grid.len()];
                    for (a, comp) in mix.alphas.iter().zip(&mix.components) {
                        for (acc, v) in ys.iter_mut().zip(rhlp_mean_curve(comp, &grid, &design)) {
                            *acc += a * v;
                        }
                    }
                    (label.to_string(), pair_means(&grid, &ys))
                })
                .collect();
            Ok(Fitted {
                record: fmda_record(&model),
                hard: pred.labels,
                tau: pred.posteriors,
                means,
                proportions: Vec::new(),
                fit_json: json!({
                    "classes": model.class_labels,
                    "priors": model.priors,
                    "sub_clusters": sub_k,
                    "training_error": errors as f64 / n as f64,
                }),
                criteria: None,
                summary: format!(
                    "fmda G={} K_g={sub_k} training_error={:.4}",
                    model.class_labels.len(),
                    errors as f64 / n as f64
                ),
            })
        }
    }
}

fn criteria_json(crit: &Option<CriterionValues<f64>>) -> serde_json::Value {
    match crit {
        Some(c) => json!({
            "loglik": c.loglik,
            "nu": c.nu,
            "n": c.n,
            "bic": c.bic,
            "aic": c.aic,
            "icl": c.icl,
        }),
        None => serde_json::Value::Null,
    }
}

fn write_fit_artifacts(
    out_dir: &Path,
    dataset: &FunctionalDataset<f64>,
    fitted: &Fitted,
    config_json: &serde_json::Value,
) -> Result<()> {
    let ids: Vec<String> = dataset.curves().iter().map(|c| c.id.clone()).collect();
    write_model(&out_dir.join("model.json"), &document(fitted.record.clone()))?;
    write_partition(
        &out_dir.join("partition.csv"),
        &ids,
        &fitted.hard,
        &fitted.tau,
    )?;
    write_means(&out_dir.join("means.csv"), &fitted.means)?;
    if !fitted.proportions.is_empty() {
        write_proportions(&out_dir.join("proportions.csv"), &fitted.proportions)?;
    }
    write_json(
        &out_dir.join("report.json"),
        &json!({
            "config": config_json,
            "fit": fitted.fit_json,
            "criteria": criteria_json(&fitted.criteria),
        }),
    )
}

/// Linear resampling onto a uniform common grid (median length).
fn resample_common(d: &FunctionalDataset<f64>) -> Result<FunctionalDataset<f64>> {
    let mut lens: Vec<usize> = d.curves().iter().map(|c| c.len()).collect();
    lens.sort_unstable();
    let m = lens[lens.len() / 2].max(2);
    let (lo, hi) = d.domain();
    let grid: Vec<f64> = (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect();
    let curves = d
        .curves()
        .iter()
        .map(|c| {
            let ys: Vec<f64> = grid.iter().map(|&x| lerp(c.xs(), c.ys(), x)).collect();
            Curve::new(c.id.clone(), grid.clone(), ys, c.label)
        })
        .collect::<Result<Vec<_>>>()?;
    FunctionalDataset::new(curves)
}

fn lerp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let t = (x - x0) / (x1 - x0);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

// ---- commands ----

pub fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    ensure_dir(&args.out_dir)?;
    let (dataset, extra): (FunctionalDataset<f64>, serde_json::Value) = match args.dataset {
        DatasetKind::Waveform => {
            let spec = WaveformSpec {
                n: args.n,
                seed: args.seed,
                noise_sd: args.noise_sd,
            };
            (generate_waveform(&spec)?, serde_json::Value::Null)
        }
        DatasetKind::Regimes => {
            let spec = RegimeSpec {
                clusters: args.k,
                regimes: args.r,
                n: args.n,
                degree: args.degree,
                seed: args.seed,
                noise_sd: args.noise_sd,
                proportions: None,
            };
            let (data, truth) = generate_regime_curves(&spec)?;
            (data, json!({ "cuts": truth.cuts }))
        }
    };
    let data_path = args.out_dir.join("data.csv");
    save_csv(&dataset, &data_path)?;
    let mut truth = String::from("curve_id,label\n");
    for c in dataset.curves() {
        truth.push_str(&format!("{},{}\n", c.id, c.label.unwrap_or(0)));
    }
    write_text(&args.out_dir.join("truth.csv"), &truth)?;
    write_json(
        &args.out_dir.join("report.json"),
        &json!({
            "config": {
                "dataset": match args.dataset { DatasetKind::Waveform => "waveform", DatasetKind::Regimes => "regimes" },
                "n": args.n,
                "seed": args.seed,
                "noise_sd": args.noise_sd,
                "K": args.k,
                "R": args.r,
                "degree": args.degree,
            },
            "truth": extra,
        }),
    )?;
    Ok(format!(
        "generated {} curves -> {}",
        dataset.n(),
        data_path.display()
    ))
}

pub fn cmd_fit(args: &FitArgs) -> Result<String> {
    let (cfg, config_json) = resolve(&args.model)?;
    ensure_dir(&args.out_dir)?;
    let mut dataset: FunctionalDataset<f64> = load_csv(&args.input)?;
    if cfg.interpolate && !dataset.common_grid() {
        log::info!("resampling {} curves onto a common grid", dataset.n());
        dataset = resample_common(&dataset)?;
    }
    let fitted = fit_one(&dataset, &cfg)?;
    write_fit_artifacts(&args.out_dir, &dataset, &fitted, &config_json)?;
    Ok(format!("{} -> {}", fitted.summary, args.out_dir.display()))
}

fn parse_range(s: &str) -> Result<Vec<usize>> {
    let vals: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad range {s:?}")))?;
        let b: usize = b
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad range {s:?}")))?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad range {s:?}")))
            })
            .collect::<Result<_>>()?
    };
    if vals.is_empty() || vals.iter().any(|&v| v < 1) {
        return Err(Error::InvalidConfig(format!("empty or invalid range {s:?}")));
    }
    Ok(vals)
}

pub fn cmd_select(args: &SelectArgs) -> Result<String> {
    let (base, config_json) = resolve(&args.model)?;
    if matches!(base.family, ModelFamily::Flda | ModelFamily::Fmda) {
        return Err(Error::InvalidConfig(
            "select sweeps unsupervised models; use fit for flda/fmda".into(),
        ));
    }
    ensure_dir(&args.out_dir)?;
    let mut dataset: FunctionalDataset<f64> = load_csv(&args.input)?;
    if base.interpolate && !dataset.common_grid() {
        dataset = resample_common(&dataset)?;
    }
    let uses_r = !matches!(base.family, ModelFamily::Mixreg);
    let ks: Vec<usize> = match (&args.k_range, base.family) {
        (_, ModelFamily::Rhlp) => vec![1],
        (Some(s), _) => parse_range(s)?,
        (None, _) => vec![require_k(&base)?],
    };
    let rvals: Vec<usize> = if uses_r {
        match &args.r_range {
            Some(s) => parse_range(s)?,
            None => vec![regimes_for(1, &base.rs)?[0]],
        }
    } else {
        vec![0]
    };
    let mut rows = Vec::new();
    let mut best: Option<(f64, Fitted)> = None;
    for &k in &ks {
        for &r in &rvals {
            let mut cfg = base.clone();
            cfg.k = Some(k);
            if uses_r {
                cfg.rs = Some(vec![r; k.max(1)]);
            }
            log::info!("candidate K={k} R={r}");
            match fit_one(&dataset, &cfg) {
                Ok(fitted) => {
                    let c = fitted.criteria.as_ref().expect("sweep families have criteria");
                    let score = match args.criterion {
                        CriterionArg::Bic => c.bic,
                        CriterionArg::Aic => c.aic,
                        CriterionArg::Icl => c.icl,
                    };
                    rows.push(SelectionRow {
                        k,
                        r,
                        loglik: Some(c.loglik),
                        nu: Some(c.nu),
                        bic: Some(c.bic),
                        aic: Some(c.aic),
                        icl: Some(c.icl),
                        status: "ok".into(),
                    });
                    if best.as_ref().map_or(true, |(s, _)| score > *s) {
                        best = Some((score, fitted));
                    }
                }
                Err(e) => rows.push(SelectionRow {
                    k,
                    r,
                    loglik: None,
                    nu: None,
                    bic: None,
                    aic: None,
                    icl: None,
                    status: format!("error: {e}").replace(',', ";"),
                }),
            }
        }
    }
    write_selection(&args.out_dir.join("selection.csv"), &rows)?;
    let (score, winner) =
        best.ok_or_else(|| Error::Degenerate("every selection candidate failed".into()))?;
    write_fit_artifacts(&args.out_dir, &dataset, &winner, &config_json)?;
    Ok(format!(
        "selected {} (criterion {:.6}) over {} candidates -> {}",
        winner.summary,
        score,
        rows.len(),
        args.out_dir.display()
    ))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let doc = read_model(&args.model_file)?;
    let dataset: FunctionalDataset<f64> = load_csv(&args.input)?;
    ensure_dir(&args.out_dir)?;
    let ids: Vec<String> = dataset.curves().iter().map(|c| c.id.clone()).collect();
    let (labels, posteriors) = match &doc.record {
        ModelRecord::Flda { .. } => {
            let model = flda_from_record::<f64>(&doc.record)?;
            let p = predict_flda(&model, &dataset)?;
            (p.labels, p.posteriors)
        }
        ModelRecord::Fmda { .. } => {
            let model = fmda_from_record::<f64>(&doc.record)?;
            let p = predict_fmda(&model, &dataset)?;
            (p.labels, p.posteriors)
        }
        _ => cluster_predict(&doc.record, &dataset)?,
    };
    write_predictions(
        &args.out_dir.join("predictions.csv"),
        &ids,
        &labels,
        &posteriors,
    )?;
    write_json(
        &args.out_dir.join("report.json"),
        &json!({
            "config": {
                "model_file": args.model_file.display().to_string(),
                "family": family_tag(&doc.record),
                "in": args.input.display().to_string(),
            }
        }),
    )?;
    Ok(format!(
        "predicted {} curves over {} groups -> {}",
        ids.len(),
        posteriors.ncols(),
        args.out_dir.display()
    ))
}

/// MAP cluster assignment of new curves under a fitted mixture.
fn cluster_predict(
    record: &ModelRecord,
    dataset: &FunctionalDataset<f64>,
) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let n = dataset.n();
    let (lo, hi) = dataset.domain();
    // per-curve, per-group log joint ln alpha_k + ln f_k(y)
    let log_joint: Vec<Vec<f64>> = match record {
        ModelRecord::Mixreg { .. } => {
            let (params, basis) = mixreg_from_record::<f64>(record)?;
            dataset
                .curves()
                .iter()
                .map(|c| {
                    let design = basis.design(c.xs(), lo, hi)?;
                    Ok(params
                        .alphas
                        .iter()
                        .enumerate()
                        .map(|(k, &a)| {
                            let mut ll = a.ln();
                            for j in 0..c.len() {
                                let mean = design.row(j).transpose().dot(&params.betas[k]);
                                ll += log_normal_pdf(c.ys()[j], mean, params.sigma2s[k]);
                            }
                            ll
                        })
                        .collect())
                })
                .collect::<Result<_>>()?
        }
        ModelRecord::Pwrm { .. } => {
            let (params, degree, grid) = pwrm_from_record::<f64>(record)?;
            dataset
                .curves()
                .iter()
                .map(|c| {
                    if c.len() != grid.len() {
                        return Err(Error::DimensionMismatch(format!(
                            "curve {} has {} points; model grid has {}",
                            c.id,
                            c.len(),
                            grid.len()
                        )));
                    }
                    let design = poly_design(c.xs(), degree);
                    Ok(params
                        .alphas
                        .iter()
                        .zip(&params.clusters)
                        .map(|(&a, cl)| a.ln() + cluster_loglik(c.ys(), &design, cl))
                        .collect())
                })
                .collect::<Result<_>>()?
        }
        ModelRecord::Mixhmmr { .. } => {
            let (params, degree) = mixhmmr_from_record::<f64>(record)?;
            dataset
                .curves()
                .iter()
                .map(|c| {
                    let design = poly_design(c.xs(), degree);
                    params
                        .alphas
                        .iter()
                        .zip(&params.clusters)
                        .map(|(&a, cl)| {
                            let posts =
                                forward_backward(c.ys(), &design, &cl.chain, &cl.betas, &cl.sigma2s)?;
                            Ok(a.ln() + posts.loglik)
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?
        }
        ModelRecord::Rhlp { .. } => {
            let (params, degree) = rhlp_from_record::<f64>(record)?;
            dataset
                .curves()
                .iter()
                .map(|c| {
                    let design = poly_design(c.xs(), degree);
                    vec![regime_posteriors(&params, c.xs(), c.ys(), &design).1]
                })
                .collect()
        }
        ModelRecord::Mixrhlp { .. } => {
            let (params, degree) = mixrhlp_from_record::<f64>(record)?;
            dataset
                .curves()
                .iter()
                .map(|c| {
                    let design = poly_design(c.xs(), degree);
                    params
                        .alphas
                        .iter()
                        .zip(&params.components)
                        .map(|(&a, comp)| {
                            a.ln() + regime_posteriors(comp, c.xs(), c.ys(), &design).1
                        })
                        .collect()
                })
                .collect()
        }
        ModelRecord::Flda { .. } | ModelRecord::Fmda { .. } => unreachable!(),
    };
    let g = log_joint[0].len();
    let mut posteriors = DMatrix::zeros(n, g);
    let mut labels = Vec::with_capacity(n);
    for (i, row) in log_joint.iter().enumerate() {
        let lse = log_sum_exp(row);
        if !lse.is_finite() {
            return Err(Error::Degenerate(format!(
                "curve {} has zero density under every component",
                dataset.curves()[i].id
            )));
        }
        let mut best = 0;
        for k in 0..g {
            posteriors[(i, k)] = (row[k] - lse).exp();
            if row[k] > row[best] {
                best = k;
            }
        }
        labels.push(best + 1);
    }
    Ok((labels, posteriors))
}

/// Read predicted labels from partition.csv or predictions.csv.
fn read_pred_labels(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedRow {
            line: 1,
            msg: "empty prediction file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let id_col = cols.iter().position(|c| *c == "curve_id").unwrap_or(0);
    let label_col = cols
        .iter()
        .position(|c| *c == "hard_label" || *c == "label")
        .unwrap_or(1);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let label = fields
            .get(label_col)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedRow {
                line: i + 2,
                msg: format!("bad label in {:?}", line),
            })?;
        let id = fields
            .get(id_col)
            .ok_or_else(|| Error::MalformedRow {
                line: i + 2,
                msg: "missing curve id".into(),
            })?
            .to_string();
        out.push((id, label));
    }
    Ok(out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String> {
    let dataset: FunctionalDataset<f64> = load_csv(&args.input)?;
    let truth = dataset
        .labels()
        .ok_or_else(|| Error::InvalidConfig("evaluate needs a fully labeled dataset".into()))?;
    let preds = read_pred_labels(&args.pred)?;
    let by_id: HashMap<&str, usize> = preds.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let predicted: Vec<usize> = dataset
        .curves()
        .iter()
        .map(|c| {
            by_id.get(c.id.as_str()).copied().ok_or_else(|| {
                Error::DimensionMismatch(format!("no prediction for curve {}", c.id))
            })
        })
        .collect::<Result<_>>()?;
    ensure_dir(&args.out_dir)?;
    let mis = misclassification_rate(&truth, &predicted)?;
    let ari = adjusted_rand_index(&truth, &predicted)?;
    let inertia = if let Some(grid) = dataset.grid() {
        // empirical cluster means on the common grid
        let mut distinct: Vec<usize> = predicted.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let compact: Vec<usize> = predicted
            .iter()
            .map(|l| distinct.binary_search(l).unwrap())
            .collect();
        let mut means = vec![vec![0.0; grid.len()]; distinct.len()];
        let mut counts = vec![0usize; distinct.len()];
        for (c, &g) in dataset.curves().iter().zip(&compact) {
            counts[g] += 1;
            for (acc, &y) in means[g].iter_mut().zip(c.ys()) {
                *acc += y;
            }
        }
        for (mv, &cnt) in means.iter_mut().zip(&counts) {
            for v in mv.iter_mut() {
                *v /= cnt as f64;
            }
        }
        Some(intra_cluster_inertia(&dataset, &compact, &means)?)
    } else {
        None
    };
    write_json(
        &args.out_dir.join("metrics.json"),
        &json!({
            "misclassification": mis,
            "ari": ari,
            "inertia": inertia,
        }),
    )?;
    Ok(format!(
        "misclassification={} ari={} -> {}",
        fmt_float(mis),
        fmt_float(ari),
        args.out_dir.join("metrics.json").display()
    ))
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<String> {
    let dataset: FunctionalDataset<f64> = load_csv(&args.input)?;
    ensure_dir(&args.out_dir)?;
    let mut rows = Vec::new();
    for c in dataset.curves() {
        let single = FunctionalDataset::new(vec![c.clone()])?;
        let fit = dp_segment(&single, &[1.0], args.r, args.degree, 1e-8)?;
        for (r, w) in fit.segmentation.cuts.windows(2).enumerate() {
            rows.push((
                c.id.clone(),
                r + 1,
                w[0],
                w[1],
                c.xs()[w[0]],
                c.xs()[w[1] - 1],
            ));
        }
    }
    write_segments(&args.out_dir.join("segments.csv"), &rows)?;
    write_json(
        &args.out_dir.join("report.json"),
        &json!({
            "config": { "R": args.r, "degree": args.degree, "in": args.input.display().to_string() }
        }),
    )?;
    Ok(format!(
        "segmented {} curves into {} regimes each -> {}",
        dataset.n(),
        args.r,
        args.out_dir.display()
    ))
}
