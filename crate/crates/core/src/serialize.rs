//! Schema-versioned JSON model documents. Documents store plain f64;
//! conversion to and from the in-memory parameter types is lossless for
//! f64 models. The `family` tag selects the record variant.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisSpec, Knots};
use crate::discriminant::{ClassConditional, FldaModel, FmdaModel};
use crate::error::{Error, Result};
use crate::mixhmmr::{MarkovChainParams, MixHmmrCluster, MixHmmrParams};
use crate::mixreg::MixRegParams;
use crate::mixrhlp::{LogisticParams, MixRhlpParams, RhlpParams};
use crate::pwrm::{PwrmCluster, PwrmParams, Segmentation};
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub record: ModelRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotsDoc {
    Count(usize),
    Positions(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisDoc {
    pub kind: String,
    pub degree: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knots: Option<KnotsDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PwrmClusterDoc {
    /// Integer cut indices into the grid, [0, c_1, .., m].
    pub cuts: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    pub sigma2s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmmClusterDoc {
    pub initial: Vec<f64>,
    /// R x R transition matrix, row-major.
    pub transition: Vec<f64>,
    pub left_right: bool,
    pub betas: Vec<Vec<f64>>,
    pub sigma2s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhlpDoc {
    /// (R-1) x 2 logistic weights; the null reference row is implicit.
    pub w: Vec<[f64; 2]>,
    pub betas: Vec<Vec<f64>>,
    pub sigma2s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixRhlpDoc {
    pub alphas: Vec<f64>,
    pub components: Vec<RhlpDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ClassDoc {
    Regression {
        basis: BasisDoc,
        beta: Vec<f64>,
        sigma2: f64,
    },
    Rhlp {
        degree: usize,
        #[serde(flatten)]
        model: RhlpDoc,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelRecord {
    Mixreg {
        basis: BasisDoc,
        #[serde(rename = "K")]
        k: usize,
        alphas: Vec<f64>,
        betas: Vec<Vec<f64>>,
        sigma2s: Vec<f64>,
    },
    Pwrm {
        degree: usize,
        #[serde(rename = "K")]
        k: usize,
        grid: Vec<f64>,
        alphas: Vec<f64>,
        clusters: Vec<PwrmClusterDoc>,
    },
    Mixhmmr {
        degree: usize,
        #[serde(rename = "K")]
        k: usize,
        #[serde(rename = "R")]
        r: usize,
        alphas: Vec<f64>,
        clusters: Vec<HmmClusterDoc>,
    },
    Rhlp {
        degree: usize,
        #[serde(rename = "R")]
        r: usize,
        #[serde(flatten)]
        model: RhlpDoc,
    },
    Mixrhlp {
        degree: usize,
        #[serde(rename = "K")]
        k: usize,
        #[serde(flatten)]
        model: MixRhlpDoc,
    },
    Flda {
        class_labels: Vec<usize>,
        priors: Vec<f64>,
        domain: [f64; 2],
        classes: Vec<ClassDoc>,
    },
    Fmda {
        class_labels: Vec<usize>,
        priors: Vec<f64>,
        domain: [f64; 2],
        degree: usize,
        classes: Vec<MixRhlpDoc>,
    },
}

pub fn write_model(path: &Path, doc: &ModelDocument) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)
        .map_err(|e| Error::ModelDocument(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_model(path: &Path) -> Result<ModelDocument> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: ModelDocument =
        serde_json::from_str(&text).map_err(|e| Error::ModelDocument(e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::ModelDocument(format!(
            "unsupported schema version {} (expected {})",
            doc.schema_version, SCHEMA_VERSION
        )));
    }
    Ok(doc)
}

pub fn family_tag(record: &ModelRecord) -> &'static str {
    match record {
        ModelRecord::Mixreg { .. } => "mixreg",
        ModelRecord::Pwrm { .. } => "pwrm",
        ModelRecord::Mixhmmr { .. } => "mixhmmr",
        ModelRecord::Rhlp { .. } => "rhlp",
        ModelRecord::Mixrhlp { .. } => "mixrhlp",
        ModelRecord::Flda { .. } => "flda",
        ModelRecord::Fmda { .. } => "fmda",
    }
}

pub fn document(record: ModelRecord) -> ModelDocument {
    ModelDocument {
        schema_version: SCHEMA_VERSION,
        record,
    }
}

// ---- conversions: parameters -> documents ----

fn vec_f64<F: Scalar>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn dvec_f64<F: Scalar>(v: &DVector<F>) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn dvecs_f64<F: Scalar>(vs: &[DVector<F>]) -> Vec<Vec<f64>> {
    vs.iter().map(dvec_f64).collect()
}

fn vec_scalar<F: Scalar>(v: &[f64]) -> Vec<F> {
    v.iter().map(|&x| F::fl(x)).collect()
}

fn dvec_scalar<F: Scalar>(v: &[f64]) -> DVector<F> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| F::fl(x)))
}

fn dvecs_scalar<F: Scalar>(vs: &[Vec<f64>]) -> Vec<DVector<F>> {
    vs.iter().map(|v| dvec_scalar(v)).collect()
}

pub fn basis_doc<F: Scalar>(spec: &BasisSpec<F>) -> BasisDoc {
    let kind = match spec.kind {
        BasisKind::Polynomial => "polynomial",
        BasisKind::Spline => "spline",
        BasisKind::Bspline => "bspline",
    };
    let knots = match (&spec.kind, &spec.knots) {
        (BasisKind::Polynomial, _) => None,
        (_, Knots::Count(n)) => Some(KnotsDoc::Count(*n)),
        (_, Knots::Positions(ps)) => Some(KnotsDoc::Positions(vec_f64(ps))),
    };
    BasisDoc {
        kind: kind.into(),
        degree: spec.degree,
        knots,
    }
}

pub fn basis_from_doc<F: Scalar>(doc: &BasisDoc) -> Result<BasisSpec<F>> {
    let kind = match doc.kind.as_str() {
        "polynomial" => BasisKind::Polynomial,
        "spline" => BasisKind::Spline,
        "bspline" => BasisKind::Bspline,
        other => {
            return Err(Error::ModelDocument(format!("unknown basis kind {other:?}")));
        }
    };
    let knots = match (&kind, &doc.knots) {
        (BasisKind::Polynomial, _) | (_, None) => Knots::Count(0),
        (_, Some(KnotsDoc::Count(n))) => Knots::Count(*n),
        (_, Some(KnotsDoc::Positions(ps))) => Knots::Positions(vec_scalar(ps)),
    };
    Ok(BasisSpec {
        kind,
        degree: doc.degree,
        knots,
    })
}

pub fn mixreg_record<F: Scalar>(params: &MixRegParams<F>, basis: &BasisSpec<F>) -> ModelRecord {
    ModelRecord::Mixreg {
        basis: basis_doc(basis),
        k: params.k(),
        alphas: vec_f64(&params.alphas),
        betas: dvecs_f64(&params.betas),
        sigma2s: vec_f64(&params.sigma2s),
    }
}

pub fn mixreg_from_record<F: Scalar>(record: &ModelRecord) -> Result<(MixRegParams<F>, BasisSpec<F>)> {
    match record {
        ModelRecord::Mixreg {
            basis,
            k,
            alphas,
            betas,
            sigma2s,
        } => {
            if alphas.len() != *k || betas.len() != *k || sigma2s.len() != *k {
                return Err(Error::ModelDocument(format!(
                    "mixreg document: K={k} but {} alphas, {} betas, {} sigma2s",
                    alphas.len(),
                    betas.len(),
                    sigma2s.len()
                )));
            }
            Ok((
                MixRegParams {
                    alphas: vec_scalar(alphas),
                    betas: dvecs_scalar(betas),
                    sigma2s: vec_scalar(sigma2s),
                },
                basis_from_doc(basis)?,
            ))
        }
        _ => Err(Error::ModelDocument("expected a mixreg document".into())),
    }
}

pub fn pwrm_record<F: Scalar>(params: &PwrmParams<F>, degree: usize, grid: &[F]) -> ModelRecord {
    ModelRecord::Pwrm {
        degree,
        k: params.alphas.len(),
        grid: vec_f64(grid),
        alphas: vec_f64(&params.alphas),
        clusters: params
            .clusters
            .iter()
            .map(|c| PwrmClusterDoc {
                cuts: c.segmentation.cuts.clone(),
                betas: dvecs_f64(&c.betas),
                sigma2s: vec_f64(&c.sigma2s),
            })
            .collect(),
    }
}

pub fn pwrm_from_record<F: Scalar>(record: &ModelRecord) -> Result<(PwrmParams<F>, usize, Vec<F>)> {
    match record {
        ModelRecord::Pwrm {
            degree,
            k,
            grid,
            alphas,
            clusters,
        } => {
            if alphas.len() != *k || clusters.len() != *k {
                return Err(Error::ModelDocument("pwrm document: K mismatch".into()));
            }
            let m = grid.len();
            let mut out = Vec::with_capacity(clusters.len());
            for c in clusters {
                let cuts = &c.cuts;
                if cuts.first() != Some(&0)
                    || cuts.last() != Some(&m)
                    || cuts.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::ModelDocument(format!(
                        "pwrm document: invalid cut sequence {cuts:?} for grid of {m}"
                    )));
                }
                out.push(PwrmCluster {
                    segmentation: Segmentation { cuts: cuts.clone() },
                    betas: dvecs_scalar(&c.betas),
                    sigma2s: vec_scalar(&c.sigma2s),
                });
            }
            Ok((
                PwrmParams {
                    alphas: vec_scalar(alphas),
                    clusters: out,
                },
                *degree,
                vec_scalar(grid),
            ))
        }
        _ => Err(Error::ModelDocument("expected a pwrm document".into())),
    }
}

pub fn mixhmmr_record<F: Scalar>(params: &MixHmmrParams<F>, degree: usize) -> ModelRecord {
    let r = params.clusters[0].chain.initial.len();
    ModelRecord::Mixhmmr {
        degree,
        k: params.alphas.len(),
        r,
        alphas: vec_f64(&params.alphas),
        clusters: params
            .clusters
            .iter()
            .map(|c| HmmClusterDoc {
                initial: vec_f64(&c.chain.initial),
                transition: c.chain.transition.transpose().iter().map(|x| x.as_f64()).collect(),
                left_right: c.chain.left_right,
                betas: dvecs_f64(&c.betas),
                sigma2s: vec_f64(&c.sigma2s),
            })
            .collect(),
    }
}

pub fn mixhmmr_from_record<F: Scalar>(record: &ModelRecord) -> Result<(MixHmmrParams<F>, usize)> {
    match record {
        ModelRecord::Mixhmmr {
            degree,
            k,
            r: _,
            alphas,
            clusters,
        } => {
            if alphas.len() != *k || clusters.len() != *k {
                return Err(Error::ModelDocument("mixhmmr document: K mismatch".into()));
            }
            let mut out = Vec::with_capacity(clusters.len());
            for c in clusters {
                // R may vary per cluster; each record is self-describing
                let cr = c.initial.len();
                if cr == 0 || c.transition.len() != cr * cr {
                    return Err(Error::ModelDocument(format!(
                        "mixhmmr document: {} initial probabilities but {} transition entries",
                        cr,
                        c.transition.len()
                    )));
                }
                // stored row-major; DMatrix::from_row_slice restores it
                let transition =
                    DMatrix::from_row_slice(cr, cr, &c.transition).map(F::fl);
                out.push(MixHmmrCluster {
                    chain: MarkovChainParams {
                        initial: vec_scalar(&c.initial),
                        transition,
                        left_right: c.left_right,
                    },
                    betas: dvecs_scalar(&c.betas),
                    sigma2s: vec_scalar(&c.sigma2s),
                });
            }
            Ok((
                MixHmmrParams {
                    alphas: vec_scalar(alphas),
                    clusters: out,
                },
                *degree,
            ))
        }
        _ => Err(Error::ModelDocument("expected a mixhmmr document".into())),
    }
}

fn rhlp_doc<F: Scalar>(params: &RhlpParams<F>) -> RhlpDoc {
    RhlpDoc {
        w: params
            .logistic
            .w
            .iter()
            .map(|row| [row[0].as_f64(), row[1].as_f64()])
            .collect(),
        betas: dvecs_f64(&params.betas),
        sigma2s: vec_f64(&params.sigma2s),
    }
}

fn rhlp_from_doc<F: Scalar>(doc: &RhlpDoc) -> Result<RhlpParams<F>> {
    if doc.betas.len() != doc.sigma2s.len() || doc.betas.len() != doc.w.len() + 1 {
        return Err(Error::ModelDocument(format!(
            "rhlp document: {} w rows, {} betas, {} sigma2s (need R-1, R, R)",
            doc.w.len(),
            doc.betas.len(),
            doc.sigma2s.len()
        )));
    }
    Ok(RhlpParams {
        logistic: LogisticParams {
            w: doc.w.iter().map(|r| [F::fl(r[0]), F::fl(r[1])]).collect(),
        },
        betas: dvecs_scalar(&doc.betas),
        sigma2s: vec_scalar(&doc.sigma2s),
    })
}

pub fn rhlp_record<F: Scalar>(params: &RhlpParams<F>, degree: usize) -> ModelRecord {
    ModelRecord::Rhlp {
        degree,
        r: params.r(),
        model: rhlp_doc(params),
    }
}

pub fn rhlp_from_record<F: Scalar>(record: &ModelRecord) -> Result<(RhlpParams<F>, usize)> {
    match record {
        ModelRecord::Rhlp { degree, r, model } => {
            let params = rhlp_from_doc(model)?;
            if params.r() != *r {
                return Err(Error::ModelDocument("rhlp document: R mismatch".into()));
            }
            Ok((params, *degree))
        }
        _ => Err(Error::ModelDocument("expected an rhlp document".into())),
    }
}

fn mixrhlp_doc<F: Scalar>(params: &MixRhlpParams<F>) -> MixRhlpDoc {
    MixRhlpDoc {
        alphas: vec_f64(&params.alphas),
        components: params.components.iter().map(rhlp_doc).collect(),
    }
}

fn mixrhlp_from_doc<F: Scalar>(doc: &MixRhlpDoc) -> Result<MixRhlpParams<F>> {
    if doc.alphas.len() != doc.components.len() {
        return Err(Error::ModelDocument("mixrhlp document: K mismatch".into()));
    }
    Ok(MixRhlpParams {
        alphas: vec_scalar(&doc.alphas),
        components: doc
            .components
            .iter()
            .map(rhlp_from_doc)
            .collect::<Result<_>>()?,
    })
}

pub fn mixrhlp_record<F: Scalar>(params: &MixRhlpParams<F>, degree: usize) -> ModelRecord {
    ModelRecord::Mixrhlp {
        degree,
        k: params.alphas.len(),
        model: mixrhlp_doc(params),
    }
}

pub fn mixrhlp_from_record<F: Scalar>(record: &ModelRecord) -> Result<(MixRhlpParams<F>, usize)> {
    match record {
        ModelRecord::Mixrhlp { degree, k, model } => {
            let params = mixrhlp_from_doc(model)?;
            if params.alphas.len() != *k {
                return Err(Error::ModelDocument("mixrhlp document: K mismatch".into()));
            }
            Ok((params, *degree))
        }
        _ => Err(Error::ModelDocument("expected a mixrhlp document".into())),
    }
}

pub fn flda_record<F: Scalar>(model: &FldaModel<F>) -> ModelRecord {
    ModelRecord::Flda {
        class_labels: model.class_labels.clone(),
        priors: vec_f64(&model.priors),
        domain: [model.domain.0.as_f64(), model.domain.1.as_f64()],
        classes: model
            .classes
            .iter()
            .map(|c| match c {
                ClassConditional::Regression {
                    basis,
                    beta,
                    sigma2,
                } => ClassDoc::Regression {
                    basis: basis_doc(basis),
                    beta: dvec_f64(beta),
                    sigma2: sigma2.as_f64(),
                },
                ClassConditional::Rhlp { params } => ClassDoc::Rhlp {
                    degree: params.betas[0].len() - 1,
                    model: rhlp_doc(params),
                },
            })
            .collect(),
    }
}

pub fn flda_from_record<F: Scalar>(record: &ModelRecord) -> Result<FldaModel<F>> {
    match record {
        ModelRecord::Flda {
            class_labels,
            priors,
            domain,
            classes,
        } => {
            if class_labels.len() != priors.len() || class_labels.len() != classes.len() {
                return Err(Error::ModelDocument("flda document: class count mismatch".into()));
            }
            let mut out = Vec::with_capacity(classes.len());
            for c in classes {
                out.push(match c {
                    ClassDoc::Regression {
                        basis,
                        beta,
                        sigma2,
                    } => ClassConditional::Regression {
                        basis: basis_from_doc(basis)?,
                        beta: dvec_scalar(beta),
                        sigma2: F::fl(*sigma2),
                    },
                    ClassDoc::Rhlp { model, .. } => ClassConditional::Rhlp {
                        params: rhlp_from_doc(model)?,
                    },
                });
            }
            Ok(FldaModel {
                class_labels: class_labels.clone(),
                priors: vec_scalar(priors),
                classes: out,
                domain: (F::fl(domain[0]), F::fl(domain[1])),
            })
        }
        _ => Err(Error::ModelDocument("expected an flda document".into())),
    }
}

pub fn fmda_record<F: Scalar>(model: &FmdaModel<F>) -> ModelRecord {
    ModelRecord::Fmda {
        class_labels: model.class_labels.clone(),
        priors: vec_f64(&model.priors),
        domain: [model.domain.0.as_f64(), model.domain.1.as_f64()],
        degree: model.degree,
        classes: model.classes.iter().map(mixrhlp_doc).collect(),
    }
}

pub fn fmda_from_record<F: Scalar>(record: &ModelRecord) -> Result<FmdaModel<F>> {
    match record {
        ModelRecord::Fmda {
            class_labels,
            priors,
            domain,
            degree,
            classes,
        } => {
            if class_labels.len() != priors.len() || class_labels.len() != classes.len() {
                return Err(Error::ModelDocument("fmda document: class count mismatch".into()));
            }
            Ok(FmdaModel {
                class_labels: class_labels.clone(),
                priors: vec_scalar(priors),
                classes: classes
                    .iter()
                    .map(mixrhlp_from_doc)
                    .collect::<Result<_>>()?,
                degree: *degree,
                domain: (F::fl(domain[0]), F::fl(domain[1])),
            })
        }
        _ => Err(Error::ModelDocument("expected an fmda document".into())),
    }
}
