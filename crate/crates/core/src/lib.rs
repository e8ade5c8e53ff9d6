//! Bayesian single-index modeling of heterogeneous treatment effects.
//!
//! This crate fits, by Metropolis-within-Gibbs sampling, a model of the form
//!
//! ```text
//! h(E[Y | X, A]) = η = Xᵀm + g(Xᵀβ, A),        ‖β‖ = 1,
//! ```
//!
//! where `Y` is an exponential-family outcome of a two-arm randomized trial,
//! `m` carries the main covariate effects, and the treatment-arm-specific
//! smooth `g(·, a)` is a cubic B-spline function of the scalar index `Xᵀβ`.
//! An identifiability constraint ties the two arm curves together so that the
//! randomization-weighted combination `π₀ g(u, 0) + π₁ g(u, 1)` vanishes,
//! which separates `g` from the main effects.
//!
//! From the posterior draws the crate computes the individualized contrast
//! `Δ(x) = g(xᵀβ, 1) − g(xᵀβ, 0)`, the treatment benefit index
//! `TBI(x) = P(Δ(x) < 0 | data)`, optimal treatment decisions
//! `a*(x) = I(TBI(x) > 0.5)`, and arm-specific outcome predictions, together
//! with equal-tailed 95% credible intervals.
//!
//! Module layout:
//! - [`expfam`]: canonical links, variance functions, log-likelihoods.
//! - [`spline`]: B-spline basis, constraint basis, design matrices.
//! - [`iwls`]: Fisher scoring, penalized WLS, GCV, marginalization cache.
//! - [`priors`]: von Mises-Fisher direction prior/proposal, Gaussian prior on `m`.
//! - [`sampler`]: initialization and the Metropolis-within-Gibbs chain.
//! - [`inference`]: contrasts, TBI scores, decisions, posterior summaries.
//! - [`synth`]: synthetic randomized-trial generator.
//! - [`data`], [`config`], [`report`], [`archive`]: dataset container, run
//!   configuration, table rendering, and the binary draws archive.

pub mod archive;
pub mod config;
pub mod data;
pub mod error;
pub mod expfam;
pub mod inference;
pub mod iwls;
pub mod priors;
pub mod report;
pub mod sampler;
pub mod spline;
pub mod synth;

pub use data::Dataset;
pub use error::Error;
pub use expfam::Family;
pub use sampler::{ChainConfig, ParameterState, PosteriorDraws};
pub use spline::SplineSystem;
