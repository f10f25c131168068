//! Maximum-likelihood type estimation of parametric mean functions of
//! Gaussian processes observed on a grid under small noise.
//!
//! The observation is `X_t = h_theta0(t) + eps Z_t` with `Z` a centered
//! Gaussian process of known covariance `K` and `h_theta = K mu_theta` the
//! image of a parametric signed measure. Estimates maximize the contrast
//! `sum_i mu_theta(T_i) X_{t_i} - 1/2 sum_ij mu_theta(T_i) mu_theta(T_j) K(t_i, t_j)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod kernels;
pub mod mean_models;
pub mod optimize;
pub mod sampling;
pub mod timegrid;

pub use error::{Error, Result};
pub use estimation::{qgaic, ContrastContext, DiscreteProblem, EstimationResult, LanStatistic, LimitContrast};
pub use kernels::{discretization_error_sup, gram, CovarianceKernel, GramMatrix};
pub use mean_models::{BasisFunction, MeanModel, NonlinearDensity, ParamBox, SigmaMatrix};
pub use sampling::{chol_factor, sample_observation, Observation, ObservationSampler, SeedSpec};
pub use timegrid::{CellQuadrature, TimeGrid};
