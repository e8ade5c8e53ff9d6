//! Metropolis-within-Gibbs sampling of (m, β, γ).
//!
//! One sweep cycles through:
//! 1. an exact Gaussian draw of `m` from its scoring-based conditional,
//! 2. a Metropolis update of `β` under the γ-marginalized conditional with a
//!    von Mises-Fisher proposal centered at the current β,
//! 3. an exact Gaussian draw of `γ` from its conditional given the accepted β.
//!
//! For each candidate β the spline coefficients are profiled out: Fisher
//! scoring converges to the penalized γ mode (the fixed point does not
//! depend on where the scoring starts, so the evaluation is a function of β
//! and m alone), the adjusted response and weights are frozen there, and the
//! Gaussian-marginalization cache turns them into the closed-form log
//! conditional `¼ bᵀΛb − ½S₁ + λ_prior βᵀβ₀` with `b = DᵀWz`.
//!
//! Everything is initialized at an alternating-profile maximum-likelihood
//! fit; the smoothing penalty ρ is chosen once by GCV at that fit and the
//! Gaussian dispersion, when free, is moment-estimated there and folds into
//! the weights as a constant factor.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::expfam::{Family, FamilyKind};
use crate::iwls::{
    self, fisher_scoring_ridged, gcv_select_rho, log_grid, marginal_cache,
    PosteriorGaussianCache, ScoringOptions,
};
use crate::priors::{vmf_log_kernel, vmf_sample, HyperParameters};
use crate::spline::{build_design_constrained, SplineSystem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// One MCMC state. `gamma_tilde = Z γ` is materialized so that contrasts and
/// predictions read straight off the state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub m: DVector<f64>,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub gamma_tilde: DVector<f64>,
}

impl ParameterState {
    pub fn new(m: DVector<f64>, beta: DVector<f64>, gamma: DVector<f64>, system: &SplineSystem) -> Self {
        let gamma_tilde = system.gamma_tilde(&gamma);
        ParameterState { m, beta, gamma, gamma_tilde }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { n_iter: 5000, burn_in: 2000, thin: 2, seed: 1, n_chains: 4 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        Ok(())
    }
}

/// Knot/scoring/GCV settings resolved before fitting.
#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub n_basis: usize,
    pub knot_padding: f64,
    pub scoring: ScoringOptions,
    pub rho_grid_min: f64,
    pub rho_grid_max: f64,
    pub rho_grid_points: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            n_basis: 8,
            knot_padding: 0.05,
            scoring: ScoringOptions::default(),
            rho_grid_min: 1e-4,
            rho_grid_max: 1e4,
            rho_grid_points: 25,
        }
    }
}

/// Per-parameter effective sample sizes and split-R̂.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub ess: Vec<f64>,
    pub split_rhat: Vec<f64>,
}

/// The stored chain plus run-level metadata.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// Post-burn-in, thinned states, concatenated chain by chain.
    pub states: Vec<ParameterState>,
    /// Stored draw count per chain, in chain order.
    pub chain_sizes: Vec<usize>,
    /// Post-burn-in fraction of accepted β proposals.
    pub acceptance_rate: f64,
    pub diagnostics: Diagnostics,
    /// Scoring loops that hit the iteration cap during the run.
    pub scoring_failures: usize,
    /// Proposals rejected because their evaluation failed numerically.
    pub error_rejections: usize,
    /// Set when λ_prior = 0: β draws are sign-aligned to this direction
    /// before coefficient summaries (the ±β ambiguity is otherwise broken by
    /// the prior).
    pub beta_anchor: Option<DVector<f64>>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.states.len()
    }
}

/// Output of the maximum-likelihood initialization.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub state: ParameterState,
    pub system: SplineSystem,
    /// Family with the dispersion resolved (Pearson estimate for Gaussian).
    pub family: Family,
    /// GCV-selected smoothing penalty.
    pub rho: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// A fitted model: initialization, resolved hyperparameters, draws.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub init: Initialization,
    pub hyper: HyperParameters,
    pub draws: PosteriorDraws,
}

// provisional per-observation ridge while the alternating initializer runs,
// before GCV; scaling with n keeps the profile path invariant under
// duplicating the data (the likelihood terms all double)
const INIT_RHO_PER_OBS: f64 = 0.01;
const INIT_OUTER_TOL: f64 = 1e-6;
const INIT_OUTER_MAX: usize = 50;

fn init_rho(n: usize) -> f64 {
    INIT_RHO_PER_OBS * n as f64
}

/// Data-driven fallback for the prior direction β₀: the first right singular
/// vector of the interaction score matrix with rows
/// `(aᵢ − π₁)(yᵢ − μ̂ᵢ) xᵢ`, where μ̂ comes from a main-effects-only fit.
/// The sign is chosen so the direction points along the mean score.
pub fn auto_beta0(dataset: &Dataset, family: &Family, settings: &ModelSettings) -> Result<DVector<f64>> {
    let p = dataset.p_index();
    let n = dataset.n();
    let main_fit = fisher_scoring_ridged(
        family,
        dataset.y(),
        &DVector::zeros(n),
        dataset.x_main(),
        DVector::zeros(dataset.p_main()),
        &DVector::zeros(dataset.p_main()),
        1.0,
        &settings.scoring,
    )?;
    let eta = dataset.x_main() * &main_fit.coef;
    let (_, pi1) = dataset.pi();
    let mut score = DMatrix::zeros(n, p);
    for i in 0..n {
        let mu = family.clamp_mu(family.inverse_link(eta[i]));
        let s = (dataset.arm()[i] as f64 - pi1) * (dataset.y()[i] - mu);
        for j in 0..p {
            score[(i, j)] = s * dataset.x_index()[(i, j)];
        }
    }
    let mean_score = score.row_sum().transpose();
    if score.amax() < 1e-14 {
        let mut e1 = DVector::zeros(p);
        e1[0] = 1.0;
        return Ok(e1);
    }
    let svd = score.svd(false, true);
    let vt = svd.v_t.expect("svd computed with right vectors");
    let mut dir = vt.row(0).transpose();
    let along = dir.dot(&mean_score);
    if along < 0.0 {
        dir = -dir;
    } else if along == 0.0 {
        if let Some(first) = dir.iter().find(|v| v.abs() > 1e-14) {
            if *first < 0.0 {
                dir = -dir;
            }
        }
    }
    let norm = dir.norm();
    Ok(dir / norm)
}

struct JointFit {
    m: DVector<f64>,
    gamma: DVector<f64>,
    z: DVector<f64>,
    w: DVector<f64>,
    converged: bool,
}

// joint (m, γ) fit at fixed β: ridge only on the γ block
fn joint_fit(
    dataset: &Dataset,
    family: &Family,
    design: &DMatrix<f64>,
    rho: f64,
    weight_scale: f64,
    start_m: &DVector<f64>,
    start_gamma: &DVector<f64>,
    opts: &ScoringOptions,
) -> Result<JointFit> {
    let n = dataset.n();
    let pm = dataset.p_main();
    let l = design.ncols();
    let mut joint = DMatrix::zeros(n, pm + l);
    joint.view_mut((0, 0), (n, pm)).copy_from(dataset.x_main());
    joint.view_mut((0, pm), (n, l)).copy_from(design);
    let mut ridge = DVector::zeros(pm + l);
    for j in 0..l {
        ridge[pm + j] = rho;
    }
    let mut coef0 = DVector::zeros(pm + l);
    coef0.rows_mut(0, pm).copy_from(start_m);
    coef0.rows_mut(pm, l).copy_from(start_gamma);
    let fit = fisher_scoring_ridged(
        family,
        dataset.y(),
        &DVector::zeros(n),
        &joint,
        coef0,
        &ridge,
        weight_scale,
        opts,
    )?;
    Ok(JointFit {
        m: fit.coef.rows(0, pm).into_owned(),
        gamma: fit.coef.rows(pm, l).into_owned(),
        z: fit.state.z,
        w: fit.state.w,
        converged: fit.state.converged,
    })
}

// one normalized Gauss-Newton step on β at fixed (m, γ̃)
fn gauss_newton_beta(
    dataset: &Dataset,
    family: &Family,
    system: &SplineSystem,
    beta: &DVector<f64>,
    m: &DVector<f64>,
    gamma_tilde: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    if gamma_tilde.amax() < 1e-10 {
        // flat smooth carries no information about the direction
        return Ok(None);
    }
    let n = dataset.n();
    let p = dataset.p_index();
    let l = system.n_basis();
    let eta_main = dataset.x_main() * m;
    let mut jac = DMatrix::zeros(n, p);
    let mut resid = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let xs = dataset.x_index().as_slice();
    let bs = beta.as_slice();
    for i in 0..n {
        let mut u = 0.0;
        for j in 0..p {
            u += xs[j * n + i] * bs[j];
        }
        let (psi, dpsi) = system.basis_with_derivative(u);
        let off = dataset.arm()[i] as usize * l;
        let mut g = 0.0;
        let mut gprime = 0.0;
        for j in 0..l {
            g += psi[j] * gamma_tilde[off + j];
            gprime += dpsi[j] * gamma_tilde[off + j];
        }
        let eta = eta_main[i] + g;
        let mu = family.clamp_mu(family.inverse_link(eta));
        let hp = family.link_derivative(mu)?;
        let v = family.variance_function(mu)?;
        w[i] = 1.0 / (hp * hp * v);
        resid[i] = hp * (dataset.y()[i] - mu);
        for j in 0..p {
            jac[(i, j)] = gprime * dataset.x_index()[(i, j)];
        }
    }
    if jac.amax() < 1e-12 {
        return Ok(None);
    }
    let step = match iwls::wls_solve(&jac, &w, &resid, 0.0) {
        Ok(s) => s,
        Err(Error::Singular { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let new = beta + step;
    let norm = new.norm();
    if norm < 1e-12 {
        return Ok(None);
    }
    Ok(Some(new / norm))
}

/// Alternating-profile maximum-likelihood initialization.
///
/// Given β the pair (m, γ) is fitted by penalized IWLS; given (m, γ) the
/// direction takes one normalized Gauss-Newton step. The knots are rebuilt
/// for each candidate β while iterating and frozen at the final estimate,
/// which also fixes ρ (via GCV) and, for the Gaussian family, the dispersion.
/// The returned β̂ is sign-aligned with the prior direction.
pub fn initialize(
    dataset: &Dataset,
    family: &Family,
    hyper: &HyperParameters,
    settings: &ModelSettings,
) -> Result<Initialization> {
    dataset.check_support(family)?;
    if hyper.beta0.len() != dataset.p_index() || hyper.m0.len() != dataset.p_main() {
        return Err(Error::Config(
            "hyperparameter dimensions do not match the dataset".into(),
        ));
    }
    let (pi0, pi1) = dataset.pi();
    let mut beta = auto_beta0(dataset, family, settings)?;
    let mut m = DVector::zeros(dataset.p_main());
    let mut gamma = DVector::zeros(settings.n_basis);
    let mut converged = false;
    let mut outer = 0;
    while outer < INIT_OUTER_MAX {
        outer += 1;
        let system = SplineSystem::from_index_values(
            &dataset.index_values(&beta),
            settings.n_basis,
            settings.knot_padding,
            pi0,
            pi1,
        )?;
        let design = build_design_constrained(dataset.x_index(), dataset.arm(), &beta, &system)?;
        let fit = joint_fit(dataset, family, &design, init_rho(dataset.n()), 1.0, &m, &gamma, &settings.scoring)?;
        m = fit.m;
        gamma = fit.gamma;
        let gamma_tilde = system.gamma_tilde(&gamma);
        match gauss_newton_beta(dataset, family, &system, &beta, &m, &gamma_tilde)? {
            None => {
                converged = true;
                break;
            }
            Some(new) => {
                // the sphere has no preferred sign; keep continuity with the
                // previous iterate
                let new = if new.dot(&beta) < 0.0 { -new } else { new };
                let delta = (&new - &beta).amax();
                beta = new;
                if delta < INIT_OUTER_TOL {
                    converged = true;
                    break;
                }
            }
        }
    }

    if beta.dot(&hyper.beta0) < 0.0 {
        beta = -beta;
    }

    // freeze knots at the final direction and refit
    let system = SplineSystem::from_index_values(
        &dataset.index_values(&beta),
        settings.n_basis,
        settings.knot_padding,
        pi0,
        pi1,
    )?;
    let design = build_design_constrained(dataset.x_index(), dataset.arm(), &beta, &system)?;
    let fit = joint_fit(dataset, family, &design, init_rho(dataset.n()), 1.0, &m, &gamma, &settings.scoring)?;

    // Gaussian dispersion by the Pearson moment estimator at the MLE fit
    let family = if family.kind() == FamilyKind::Gaussian {
        let eta = dataset.x_main() * &fit.m + &design * &fit.gamma;
        let mut pearson = 0.0;
        for i in 0..dataset.n() {
            let mu = family.inverse_link(eta[i]);
            let r = dataset.y()[i] - mu;
            pearson += r * r / family.variance_function(family.clamp_mu(mu)).unwrap_or(1.0);
        }
        let dof = (dataset.n() as f64 - (dataset.p_main() + settings.n_basis) as f64).max(1.0);
        family.with_dispersion((pearson / dof).max(1e-12))
    } else {
        *family
    };
    let weight_scale = 1.0 / family.dispersion();

    // ρ once, by GCV on the frozen design with the dispersion-scaled weights
    let grid = log_grid(settings.rho_grid_min, settings.rho_grid_max, settings.rho_grid_points);
    let w_scaled = &fit.w * weight_scale;
    let rho = gcv_select_rho(&design, &w_scaled, &fit.z, &grid)?;

    let final_fit = joint_fit(
        dataset,
        &family,
        &design,
        rho,
        weight_scale,
        &fit.m,
        &fit.gamma,
        &settings.scoring,
    )?;
    let converged = converged && final_fit.converged;
    let state = ParameterState::new(final_fit.m, beta, final_fit.gamma, &system);
    Ok(Initialization { state, system, family, rho, outer_iterations: outer, converged })
}

/// Shared per-chain context: everything immutable during sampling.
pub struct SamplerContext<'a> {
    pub dataset: &'a Dataset,
    pub family: Family,
    pub hyper: &'a HyperParameters,
    pub system: &'a SplineSystem,
    pub rho: f64,
    weight_scale: f64,
    q_inv: DMatrix<f64>,
    q_inv_m0: DVector<f64>,
}

impl<'a> SamplerContext<'a> {
    pub fn new(
        dataset: &'a Dataset,
        family: Family,
        hyper: &'a HyperParameters,
        system: &'a SplineSystem,
        rho: f64,
    ) -> Self {
        let q_inv = hyper.q_inverse();
        let q_inv_m0 = &q_inv * &hyper.m0;
        let weight_scale = 1.0 / family.dispersion();
        SamplerContext { dataset, family, hyper, system, rho, weight_scale, q_inv, q_inv_m0 }
    }
}

/// Everything learned while evaluating one β: the design, the frozen
/// marginalization cache, the profiled γ mode, and the log conditional.
pub struct BetaEval {
    pub beta: DVector<f64>,
    pub log_marginal: f64,
    /// The constrained design D at this β.
    pub design: DMatrix<f64>,
    pub cache: PosteriorGaussianCache,
    pub gamma_mode: DVector<f64>,
    pub converged: bool,
}

/// Profiles γ out at a fixed β: scoring from zero to the penalized mode,
/// cache from the frozen (z, W), then `¼ bᵀΛb − ½ S₁ + λ_prior βᵀβ₀`.
pub fn evaluate_beta(
    ctx: &SamplerContext,
    beta: &DVector<f64>,
    m: &DVector<f64>,
    opts: &ScoringOptions,
) -> Result<BetaEval> {
    evaluate_beta_from(ctx, beta, m, DVector::zeros(ctx.system.n_basis()), opts)
}

// Scoring from a caller-supplied start. The mode is the same fixed point
// regardless of the start, so the chain hands in the previous mode to skip
// iterations; the public entry point starts from zero.
fn evaluate_beta_from(
    ctx: &SamplerContext,
    beta: &DVector<f64>,
    m: &DVector<f64>,
    gamma_start: DVector<f64>,
    opts: &ScoringOptions,
) -> Result<BetaEval> {
    let design = build_design_constrained(ctx.dataset.x_index(), ctx.dataset.arm(), beta, ctx.system)?;
    let offset = ctx.dataset.x_main() * m;
    let l = ctx.system.n_basis();
    let ridge = DVector::from_element(l, ctx.rho);
    let fit = fisher_scoring_ridged(
        &ctx.family,
        ctx.dataset.y(),
        &offset,
        &design,
        gamma_start,
        &ridge,
        ctx.weight_scale,
        opts,
    )?;
    let cache = marginal_cache(&design, &fit.state.w, &fit.state.z, ctx.rho)?;
    let prior = vmf_log_kernel(beta, &ctx.hyper.beta0, ctx.hyper.lambda_prior)?;
    let log_marginal = log_marginal_from_cache(&cache, prior);
    if !log_marginal.is_finite() {
        return Err(Error::Singular { what: "beta log-marginal" });
    }
    Ok(BetaEval {
        beta: beta.clone(),
        log_marginal,
        design,
        cache,
        gamma_mode: fit.coef,
        converged: fit.state.converged,
    })
}

/// The marginalization arithmetic shared by every β evaluation:
/// `¼ bᵀΛb − ½ S₁ + (prior log kernel)`.
pub fn log_marginal_from_cache(cache: &PosteriorGaussianCache, prior_log_kernel: f64) -> f64 {
    cache.quarter_quadratic() - 0.5 * cache.s1 + prior_log_kernel
}

/// The γ-marginalized log conditional of β (up to its constant).
pub fn beta_log_marginal(
    beta: &DVector<f64>,
    dataset: &Dataset,
    family: &Family,
    m: &DVector<f64>,
    hyper: &HyperParameters,
    system: &SplineSystem,
) -> Result<f64> {
    let ctx = SamplerContext::new(dataset, *family, hyper, system, hyper.rho());
    Ok(evaluate_beta(&ctx, beta, m, &ScoringOptions::default())?.log_marginal)
}

/// Mean and precision Cholesky of the m conditional at fixed (β, γ):
/// scoring with the spline part as offset, then
/// `N((Q⁻¹ + XᵀW̌X)⁻¹(Q⁻¹m₀ + XᵀW̌ž), (Q⁻¹ + XᵀW̌X)⁻¹)`.
pub fn m_conditional_moments(
    ctx: &SamplerContext,
    spline_offset: &DVector<f64>,
    m_start: &DVector<f64>,
    opts: &ScoringOptions,
) -> Result<(DVector<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    let pm = ctx.dataset.p_main();
    let fit = fisher_scoring_ridged(
        &ctx.family,
        ctx.dataset.y(),
        spline_offset,
        ctx.dataset.x_main(),
        m_start.clone(),
        &DVector::zeros(pm),
        ctx.weight_scale,
        opts,
    )?;
    let x = ctx.dataset.x_main();
    let precision = &ctx.q_inv + iwls::weighted_gram(x, &fit.state.w);
    let rhs = &ctx.q_inv_m0 + iwls::weighted_xtz(x, &fit.state.w, &fit.state.z);
    let chol = iwls::cholesky_with_jitter(precision, "m-step precision")?;
    let mean = chol.solve(&rhs);
    Ok((mean, chol, fit.state.converged))
}

/// One exact draw of m given (β, γ).
pub fn sample_m<R: Rng + ?Sized>(
    state: &ParameterState,
    dataset: &Dataset,
    family: &Family,
    hyper: &HyperParameters,
    system: &SplineSystem,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let ctx = SamplerContext::new(dataset, *family, hyper, system, hyper.rho());
    let offset = spline_offsets(dataset, system, state);
    let (mean, chol, _) =
        m_conditional_moments(&ctx, &offset, &state.m, &ScoringOptions::default())?;
    Ok(draw_from_precision(&mean, &chol, rng))
}

fn spline_offsets(dataset: &Dataset, system: &SplineSystem, state: &ParameterState) -> DVector<f64> {
    let n = dataset.n();
    let p = dataset.p_index();
    let xs = dataset.x_index().as_slice();
    let bs = state.beta.as_slice();
    let mut offset = DVector::zeros(n);
    for i in 0..n {
        let mut u = 0.0;
        for j in 0..p {
            u += xs[j * n + i] * bs[j];
        }
        offset[i] = system.g_from_tilde(u, dataset.arm()[i], &state.gamma_tilde);
    }
    offset
}

// x = mean + L⁻ᵀ ε for precision P = LLᵀ
fn draw_from_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    rng: &mut R,
) -> DVector<f64> {
    let p = mean.len();
    let eps = DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(rng));
    let lt = chol.l().transpose();
    let sol = lt.solve_upper_triangular(&eps).expect("triangular solve");
    mean + sol
}

/// Mean and covariance of the γ conditional given β (from the frozen cache):
/// `N((Σ₀/2)(I + Σ₀⁻¹Σ_ρ) DᵀWz, Σ₀/2)`.
pub fn gamma_conditional_moments(cache: &PosteriorGaussianCache) -> (DVector<f64>, DMatrix<f64>) {
    // Σ₀ Σ₀⁻¹ Σ_ρ = Σ_ρ, so the mean is ½(Σ₀ + Σ_ρ) DᵀWz
    let mean = 0.5 * (&cache.sigma_0 * &cache.dwz + &cache.sigma_rho * &cache.dwz);
    let cov = 0.5 * cache.sigma_0.clone();
    (mean, cov)
}

/// One exact draw of γ given (β, m), using the cache of the current β.
pub fn sample_gamma<R: Rng + ?Sized>(
    state: &ParameterState,
    dataset: &Dataset,
    family: &Family,
    hyper: &HyperParameters,
    system: &SplineSystem,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let ctx = SamplerContext::new(dataset, *family, hyper, system, hyper.rho());
    let eval = evaluate_beta(&ctx, &state.beta, &state.m, &ScoringOptions::default())?;
    draw_gamma(&eval.cache, rng)
}

fn draw_gamma<R: Rng + ?Sized>(
    cache: &PosteriorGaussianCache,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mean, cov) = gamma_conditional_moments(cache);
    let chol = iwls::cholesky_with_jitter(cov, "gamma conditional covariance")?;
    let l = mean.len();
    let eps = DVector::<f64>::from_fn(l, |_, _| StandardNormal.sample(rng));
    Ok(mean + chol.l() * eps)
}

/// Metropolis accept/reject from the log ratio; NaN and −∞ never accept.
pub fn accept_decision(log_r: f64, u: f64) -> bool {
    if log_r >= 0.0 {
        true
    } else {
        u.ln() < log_r
    }
}

/// One Metropolis update of β: vMF proposal around the current direction,
/// ratio of γ-marginalized conditionals (the proposal kernel is symmetric in
/// βᵀβ′ and cancels). A proposal whose evaluation fails numerically counts
/// as a rejection.
pub fn metropolis_beta<R: Rng + ?Sized>(
    state: &ParameterState,
    dataset: &Dataset,
    family: &Family,
    hyper: &HyperParameters,
    system: &SplineSystem,
    rng: &mut R,
) -> Result<(DVector<f64>, bool)> {
    let ctx = SamplerContext::new(dataset, *family, hyper, system, hyper.rho());
    let current = evaluate_beta(&ctx, &state.beta, &state.m, &ScoringOptions::default())?;
    let (eval, accepted, _) = metropolis_step(&ctx, state, current, &ScoringOptions::default(), rng);
    Ok((eval.beta, accepted))
}

// Shared Metropolis core; returns the winning evaluation. The proposal's
// mode search starts from the current β's penalized estimate: the proposal
// sits close on the sphere, so its fixed point is a few sweeps away, and the
// converged mode is start-independent at the scoring tolerance.
fn metropolis_step<R: Rng + ?Sized>(
    ctx: &SamplerContext,
    state: &ParameterState,
    current: BetaEval,
    opts: &ScoringOptions,
    rng: &mut R,
) -> (BetaEval, bool, bool) {
    let proposal = vmf_sample(&state.beta, ctx.hyper.lambda_prop, rng);
    let u: f64 = rng.random();
    match evaluate_beta_from(ctx, &proposal, &state.m, current.gamma_mode.clone(), opts) {
        Ok(eval) => {
            let log_r = eval.log_marginal - current.log_marginal;
            if accept_decision(log_r, u) {
                (eval, true, false)
            } else {
                (current, false, false)
            }
        }
        Err(_) => (current, false, true),
    }
}

/// Raw output of a single chain.
pub struct ChainRun {
    pub states: Vec<ParameterState>,
    pub post_burn_proposals: usize,
    pub post_burn_accepts: usize,
    pub scoring_failures: usize,
    pub error_rejections: usize,
}

/// Runs one chain from the shared initialization. The RNG stream is derived
/// from (seed, chain index), so runs are reproducible and chains independent.
pub fn run_chain(
    ctx: &SamplerContext,
    init_state: &ParameterState,
    cfg: &ChainConfig,
    chain_index: usize,
    opts: &ScoringOptions,
) -> Result<ChainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain_index as u64 + 1);
    let mut state = init_state.clone();
    let mut states = Vec::new();
    let mut post_burn_proposals = 0;
    let mut post_burn_accepts = 0;
    let mut scoring_failures = 0;
    let mut error_rejections = 0;
    let mut gamma_mode = DVector::zeros(ctx.system.n_basis());

    for it in 1..=cfg.n_iter {
        // Step 1: m
        let spline_off = chain_spline_offset(ctx, &state);
        let (mean, chol, m_conv) = m_conditional_moments(ctx, &spline_off, &state.m, opts)?;
        if !m_conv {
            scoring_failures += 1;
        }
        state.m = draw_from_precision(&mean, &chol, &mut rng);

        // Step 2: β by Metropolis under the γ-marginalized conditional. The
        // retained β is re-scored (m moved) starting from its previous mode.
        let current = evaluate_beta_from(ctx, &state.beta, &state.m, gamma_mode, opts)?;
        if !current.converged {
            scoring_failures += 1;
        }
        let (eval, accepted, errored) = metropolis_step(ctx, &state, current, opts, &mut rng);
        gamma_mode = eval.gamma_mode.clone();
        if it > cfg.burn_in {
            post_burn_proposals += 1;
            if accepted {
                post_burn_accepts += 1;
            }
        }
        if errored {
            error_rejections += 1;
        }
        state.beta = eval.beta.clone();

        // Step 3: γ from its exact conditional at the winning β
        state.gamma = draw_gamma(&eval.cache, &mut rng)?;
        state.gamma_tilde = ctx.system.gamma_tilde(&state.gamma);

        if it > cfg.burn_in && (it - cfg.burn_in - 1) % cfg.thin == 0 {
            states.push(state.clone());
        }
    }
    Ok(ChainRun { states, post_burn_proposals, post_burn_accepts, scoring_failures, error_rejections })
}

fn chain_spline_offset(ctx: &SamplerContext, state: &ParameterState) -> DVector<f64> {
    spline_offsets(ctx.dataset, ctx.system, state)
}

/// Initializes and runs all chains, merging draws in chain order.
pub fn fit_model(
    dataset: &Dataset,
    family: &Family,
    hyper: &HyperParameters,
    settings: &ModelSettings,
    cfg: &ChainConfig,
) -> Result<FittedModel> {
    cfg.validate()?;
    let init = initialize(dataset, family, hyper, settings)?;
    let hyper = hyper.clone().with_rho(init.rho);
    let draws = run_chains(dataset, &init, &hyper, settings, cfg)?;
    Ok(FittedModel { init, hyper, draws })
}

/// Runs the configured chains against an existing initialization.
pub fn run_chains(
    dataset: &Dataset,
    init: &Initialization,
    hyper: &HyperParameters,
    settings: &ModelSettings,
    cfg: &ChainConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let ctx = SamplerContext::new(dataset, init.family, hyper, &init.system, init.rho);
    let opts = settings.scoring;

    #[cfg(feature = "parallel")]
    let runs: Result<Vec<ChainRun>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&ctx, &init.state, cfg, c, &opts))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let runs: Result<Vec<ChainRun>> =
        (0..cfg.n_chains).map(|c| run_chain(&ctx, &init.state, cfg, c, &opts)).collect();
    let runs = runs?;

    let chain_sizes: Vec<usize> = runs.iter().map(|r| r.states.len()).collect();
    let mut states = Vec::with_capacity(chain_sizes.iter().sum());
    let mut proposals = 0;
    let mut accepts = 0;
    let mut scoring_failures = 0;
    let mut error_rejections = 0;
    for run in runs {
        states.extend(run.states);
        proposals += run.post_burn_proposals;
        accepts += run.post_burn_accepts;
        scoring_failures += run.scoring_failures;
        error_rejections += run.error_rejections;
    }
    if states.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let acceptance_rate = if proposals > 0 { accepts as f64 / proposals as f64 } else { 0.0 };
    let diagnostics = compute_diagnostics(&states, &chain_sizes, dataset, init.system.n_basis());
    Ok(PosteriorDraws {
        states,
        chain_sizes,
        acceptance_rate,
        diagnostics,
        scoring_failures,
        error_rejections,
        beta_anchor: if hyper.lambda_prior == 0.0 { Some(init.state.beta.clone()) } else { None },
    })
}

// ---------------------------------------------------------------------------
// chain diagnostics: split-R̂ and effective sample size

fn compute_diagnostics(
    states: &[ParameterState],
    chain_sizes: &[usize],
    dataset: &Dataset,
    l: usize,
) -> Diagnostics {
    let mut names = Vec::new();
    let mut extract: Vec<Box<dyn Fn(&ParameterState) -> f64>> = Vec::new();
    for (j, name) in dataset.index_names().iter().enumerate() {
        names.push(format!("beta:{name}"));
        extract.push(Box::new(move |s: &ParameterState| s.beta[j]));
    }
    for (j, name) in dataset.main_names().iter().enumerate() {
        names.push(format!("m:{name}"));
        extract.push(Box::new(move |s: &ParameterState| s.m[j]));
    }
    for j in 0..l {
        names.push(format!("gamma[{j}]"));
        extract.push(Box::new(move |s: &ParameterState| s.gamma[j]));
    }

    let mut ess = Vec::with_capacity(names.len());
    let mut rhat = Vec::with_capacity(names.len());
    for f in &extract {
        let mut chains: Vec<Vec<f64>> = Vec::new();
        let mut offset = 0;
        for &sz in chain_sizes {
            chains.push(states[offset..offset + sz].iter().map(f).collect());
            offset += sz;
        }
        rhat.push(split_rhat(&chains));
        ess.push(effective_sample_size(&chains));
    }
    Diagnostics { names, ess, split_rhat: rhat }
}

fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let k = c.len() / 2;
        if k < 2 {
            return f64::NAN;
        }
        halves.push(&c[..k]);
        halves.push(&c[c.len() - k..]);
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = if chains.len() > 1 {
        means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 {
        return (m * nf).max(1.0);
    }
    // averaged within-chain autocovariances, Geyer initial-positive truncation
    let max_lag = n / 2;
    let mut rho_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 1;
    while t < max_lag {
        let rho_a = 1.0 - (w - mean_autocov(chains, &means, t)) / var_plus;
        let rho_b = 1.0 - (w - mean_autocov(chains, &means, t + 1)) / var_plus;
        let pair = rho_a + rho_b;
        if pair < 0.0 {
            break;
        }
        // enforce monotone decrease of pair sums
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        rho_sum += pair;
        t += 2;
    }
    let tau = 1.0 + 2.0 * rho_sum;
    (m * nf / tau).min(m * nf)
}

fn mean_autocov(chains: &[Vec<f64>], means: &[f64], lag: usize) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let mut acc = 0.0;
    for (c, mu) in chains.iter().zip(means) {
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (c[i] - mu) * (c[i + lag] - mu);
        }
        acc += s / (n - lag) as f64;
    }
    acc / m
}
