//! Model-based clustering, segmentation and discriminant analysis of
//! functional data (discretely sampled curves).
//!
//! The crate provides five mixture families sharing one EM framework:
//! plain Gaussian regression mixtures ([`mixreg`]), an entropy-penalized
//! robust variant that estimates the number of clusters, piecewise
//! regression mixtures with optimal dynamic-programming segmentation
//! ([`pwrm`]), mixtures of hidden Markov model regressions ([`mixhmmr`]),
//! and mixtures of regressions with hidden logistic processes
//! ([`mixrhlp`]). On top of these sit model selection and clustering
//! metrics ([`evaluation`]) and supervised functional classification
//! ([`discriminant`]).
//!
//! All numerics are generic over the scalar type through [`Scalar`];
//! `f64` aliases are exported at the crate root.

pub mod basis;
pub mod dataset;
pub mod discriminant;
pub mod evaluation;
pub mod error;
pub mod linalg;
pub mod mixhmmr;
pub mod mixreg;
pub mod mixrhlp;
pub mod pwrm;
pub mod scalar;
pub mod serialize;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` curve.
pub type Curve64 = dataset::Curve<f64>;
/// `f64` dataset.
pub type FunctionalDataset64 = dataset::FunctionalDataset<f64>;
/// `f64` basis specification.
pub type BasisSpec64 = basis::BasisSpec<f64>;
/// `f64` regression-mixture parameters.
pub type MixRegParams64 = mixreg::MixRegParams<f64>;
/// `f64` piecewise-regression-mixture parameters.
pub type PwrmParams64 = pwrm::PwrmParams<f64>;
/// `f64` HMM-regression-mixture parameters.
pub type MixHmmrParams64 = mixhmmr::MixHmmrParams<f64>;
/// `f64` logistic-process-regression-mixture parameters.
pub type MixRhlpParams64 = mixrhlp::MixRhlpParams<f64>;
