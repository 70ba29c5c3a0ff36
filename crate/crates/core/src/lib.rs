//! Zero-inflated Poisson-Gamma regression for longitudinal count data.
//!
//! Counts are modelled as a mixture of a point mass at zero and a
//! Poisson-Gamma (negative binomial) distribution whose dispersion factor is
//! shared by all measurements of a subject. Parameters are estimated by a
//! generalized EM algorithm; inference uses bootstrap Wald tests, parametric
//! bootstrap Wald tests and likelihood-ratio tests.

pub mod em;
pub mod error;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod simulation;
pub mod special;

pub use error::{Result, ZipgError};
pub use likelihood::{
    complete_loglik, e_step, grad_complete_loglik, information_criteria, observed_loglik, LikelihoodValue,
    Responsibilities,
};
pub use model::{
    gamma_of_p, link_params, log_pg_pmf, log_poisson_pmf, LinkedParams, LongitudinalDataset, Matrix, ModelSpec,
    OffsetMode, ParamVector, Variant,
};
