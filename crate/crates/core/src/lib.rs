//! Online, LASSO-regularized multivariate distributional regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`links`] – twice differentiable link functions with analytic derivatives.
//! * [`scale_param`] – Cholesky and low-rank-plus-diagonal precision parameterizations.
//! * [`distributions`] – multivariate Gaussian and Student-t log-likelihoods,
//!   coordinate-wise derivatives and samplers.
//! * [`online_lasso`] – Gramian-based online coordinate descent and recursive least squares.
//! * [`estimator`] – the IRLS engine fitting every distribution parameter coordinate,
//!   with online updates, information-criterion based λ selection and path-based
//!   scale regularization.
//! * [`copula`] – adaptive Gaussian copula and recursive second-moment trackers.
//! * [`scoring`] – ensemble scoring rules and the Diebold–Mariano test.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise.

pub mod copula;
pub mod distributions;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod linalg;
pub mod links;
pub mod online_lasso;
pub mod scale_param;
pub mod scoring;
pub mod special;

pub use error::{Error, Result};
