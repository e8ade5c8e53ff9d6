//! Decision-theoretic outputs: individualized contrasts, treatment benefit
//! indices, optimal decisions, arm-specific predictions, and the posterior
//! summary tables behind the reporting artifacts.
//!
//! For one covariate vector x and one posterior draw (m, β, γ̃) the contrast
//! is `Δ = ψ̃(βᵀx)ᵀ(γ̃₁ − γ̃₀)`; the treatment benefit index is the posterior
//! probability `TBI(x) = P(Δ < 0)` (a smaller linked outcome is better), and
//! the decision rule treats when `TBI > 0.5`, strictly. Draws with Δ exactly
//! zero count as not benefiting.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::sampler::{ParameterState, PosteriorDraws};
use crate::spline::SplineSystem;
use nalgebra::{DMatrix, DVector};

/// Number of grid points for the benefit-curve table.
pub const CURVE_GRID_POINTS: usize = 201;

/// Per-subject posterior scores.
#[derive(Debug, Clone)]
pub struct SubjectScore {
    /// 1-based row number within the scored matrix.
    pub subject_id: usize,
    /// Posterior-mean index value β̄ᵀx.
    pub index_value: f64,
    /// Δ(θ, x) per stored draw.
    pub delta_draws: Vec<f64>,
    /// Fraction of draws with Δ < 0.
    pub tbi: f64,
    /// I(TBI > 0.5).
    pub decision: u8,
    /// The posterior-mean rule I(E\[Δ\] < 0), reported alongside; the two can
    /// disagree for skewed posteriors.
    pub decision_mean_rule: u8,
    pub pred_mean_arm0: f64,
    pub pred_mean_arm1: f64,
    pub delta_mean: f64,
    /// Equal-tailed 95% interval of the Δ draws.
    pub cri_delta: (f64, f64),
}

/// A subject score plus the extrapolation flag used when scoring new data.
#[derive(Debug, Clone)]
pub struct ScoredRow {
    pub score: SubjectScore,
    /// True when the posterior-mean index falls outside the training knot
    /// range (the basis evaluation clamps there).
    pub extrapolated: bool,
}

#[derive(Debug, Clone)]
pub struct CoefficientRow {
    /// "beta" or "m".
    pub block: &'static str,
    pub term: String,
    pub mean: f64,
    pub cri_lower: f64,
    pub cri_upper: f64,
}

/// One point of the benefit curve on the index scale: posterior mean and 95%
/// CrI of exp(Δ) at a fixed index value u.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub u: f64,
    pub mean: f64,
    pub cri_lower: f64,
    pub cri_upper: f64,
}

/// One subject on the TBI axis: the benefit gradient view.
#[derive(Debug, Clone, Copy)]
pub struct SubjectCurvePoint {
    pub subject_id: usize,
    pub tbi: f64,
    pub mean: f64,
    pub cri_lower: f64,
    pub cri_upper: f64,
    pub decision: u8,
}

/// Everything the reporting layer writes.
#[derive(Debug, Clone)]
pub struct Summary {
    pub coefficients: Vec<CoefficientRow>,
    pub curve: Vec<CurvePoint>,
    pub subject_curve: Vec<SubjectCurvePoint>,
    pub subject_scores: Vec<SubjectScore>,
    /// Subjects where the TBI rule and the posterior-mean rule disagree.
    pub rule_disagreements: usize,
}

/// Δ(θ, x) = g(xᵀβ, 1) − g(xᵀβ, 0) = ψ̃(βᵀx)ᵀ(γ̃₁ − γ̃₀) for one draw.
pub fn delta_contrast(x: &DVector<f64>, state: &ParameterState, system: &SplineSystem) -> f64 {
    let u = state.beta.dot(x);
    let (first, psi) = system.basis_local_values(u);
    let l = system.n_basis();
    let mut acc = 0.0;
    for (r, &v) in psi.iter().enumerate() {
        let j = first + r;
        acc += v * (state.gamma_tilde[l + j] - state.gamma_tilde[j]);
    }
    acc
}

/// Fraction of draws with Δ < 0; exact zeros count as not benefiting.
pub fn tbi_from_deltas(deltas: &[f64]) -> f64 {
    let below = deltas.iter().filter(|d| **d < 0.0).count();
    below as f64 / deltas.len() as f64
}

/// TBI(x) over the stored draws.
pub fn tbi(x: &DVector<f64>, draws: &PosteriorDraws, system: &SplineSystem) -> Result<f64> {
    if draws.states.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let deltas: Vec<f64> =
        draws.states.iter().map(|s| delta_contrast(x, s, system)).collect();
    Ok(tbi_from_deltas(&deltas))
}

/// The treatment decision I(TBI(x) > 0.5); the threshold comparison is
/// strict, so TBI exactly 0.5 maps to the control arm.
pub fn decide(x: &DVector<f64>, draws: &PosteriorDraws, system: &SplineSystem) -> Result<u8> {
    Ok((tbi(x, draws, system)? > 0.5) as u8)
}

/// Posterior mean of h⁻¹(mᵀx_main + g(βᵀx_index, arm)): transformed per draw,
/// then averaged.
pub fn predict_outcome(
    x_main: &DVector<f64>,
    x_index: &DVector<f64>,
    arm: u8,
    draws: &PosteriorDraws,
    family: &Family,
    system: &SplineSystem,
) -> Result<f64> {
    if draws.states.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let mut acc = 0.0;
    for s in &draws.states {
        let u = s.beta.dot(x_index);
        let eta = s.m.dot(x_main) + system.g_from_tilde(u, arm, &s.gamma_tilde);
        acc += family.inverse_link(eta);
    }
    Ok(acc / draws.states.len() as f64)
}

// equal-tailed interval endpoints by linear interpolation on the sorted copy
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn cri95(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (quantile(&sorted, 0.025), quantile(&sorted, 0.975))
}

/// Posterior mean direction β̄ (raw average of draws; the index axis of the
/// reports). With λ_prior = 0 the draws are sign-aligned to the stored
/// anchor first.
pub fn posterior_mean_beta(draws: &PosteriorDraws) -> DVector<f64> {
    let p = draws.states[0].beta.len();
    let mut mean = DVector::zeros(p);
    for s in &draws.states {
        let mut b = s.beta.clone();
        if let Some(anchor) = &draws.beta_anchor {
            if b.dot(anchor) < 0.0 {
                b = -b;
            }
        }
        mean += b;
    }
    mean / draws.states.len() as f64
}

/// Scores every row of a covariate matrix pair against the stored draws.
pub fn score_matrix(
    x_main: &DMatrix<f64>,
    x_index: &DMatrix<f64>,
    draws: &PosteriorDraws,
    family: &Family,
    system: &SplineSystem,
) -> Result<Vec<ScoredRow>> {
    if draws.states.is_empty() {
        return Err(Error::EmptyDraws);
    }
    if x_main.nrows() != x_index.nrows() {
        return Err(Error::Data("main and index blocks have different row counts".into()));
    }
    let n = x_main.nrows();
    let n_draws = draws.states.len();
    let beta_bar = posterior_mean_beta(draws);
    let l = system.n_basis();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let xm = x_main.row(i).transpose();
        let xi = x_index.row(i).transpose();
        let mut deltas = Vec::with_capacity(n_draws);
        let mut pred0 = 0.0;
        let mut pred1 = 0.0;
        for s in &draws.states {
            let u = s.beta.dot(&xi);
            let (first, psi) = system.basis_local_values(u);
            let mut g0 = 0.0;
            let mut g1 = 0.0;
            for (r, &v) in psi.iter().enumerate() {
                g0 += v * s.gamma_tilde[first + r];
                g1 += v * s.gamma_tilde[l + first + r];
            }
            deltas.push(g1 - g0);
            let eta_main = s.m.dot(&xm);
            pred0 += family.inverse_link(eta_main + g0);
            pred1 += family.inverse_link(eta_main + g1);
        }
        let tbi = tbi_from_deltas(&deltas);
        let delta_mean = deltas.iter().sum::<f64>() / n_draws as f64;
        let cri_delta = cri95(&deltas);
        let index_value = beta_bar.dot(&xi);
        out.push(ScoredRow {
            score: SubjectScore {
                subject_id: i + 1,
                index_value,
                tbi,
                decision: (tbi > 0.5) as u8,
                decision_mean_rule: (delta_mean < 0.0) as u8,
                pred_mean_arm0: pred0 / n_draws as f64,
                pred_mean_arm1: pred1 / n_draws as f64,
                delta_mean,
                cri_delta,
                delta_draws: deltas,
            },
            extrapolated: system.extrapolates(index_value),
        })
    }
    Ok(out)
}

/// Builds the full posterior summary: coefficient table, benefit curve over
/// the observed index range, per-subject benefit gradient, and subject
/// scores.
pub fn summarize(
    draws: &PosteriorDraws,
    dataset: &Dataset,
    family: &Family,
    system: &SplineSystem,
) -> Result<Summary> {
    if draws.states.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let n_draws = draws.states.len();

    // coefficient table: per-component mean and equal-tailed 95% CrI
    let mut coefficients = Vec::new();
    let p = dataset.p_index();
    for j in 0..p {
        let vals: Vec<f64> = draws
            .states
            .iter()
            .map(|s| {
                let flip = draws
                    .beta_anchor
                    .as_ref()
                    .map(|a| s.beta.dot(a) < 0.0)
                    .unwrap_or(false);
                if flip {
                    -s.beta[j]
                } else {
                    s.beta[j]
                }
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n_draws as f64;
        let (lo, hi) = cri95(&vals);
        coefficients.push(CoefficientRow {
            block: "beta",
            term: dataset.index_names()[j].clone(),
            mean,
            cri_lower: lo,
            cri_upper: hi,
        });
    }
    for j in 0..dataset.p_main() {
        let vals: Vec<f64> = draws.states.iter().map(|s| s.m[j]).collect();
        let mean = vals.iter().sum::<f64>() / n_draws as f64;
        let (lo, hi) = cri95(&vals);
        coefficients.push(CoefficientRow {
            block: "m",
            term: dataset.main_names()[j].clone(),
            mean,
            cri_lower: lo,
            cri_upper: hi,
        });
    }

    // subject scores on the training data
    let scored = score_matrix(dataset.x_main(), dataset.x_index(), draws, family, system)?;

    // benefit curve on a fixed index grid spanning the observed posterior-mean
    // index values; each draw contributes exp(ψ̃(u)ᵀ(γ̃₁ − γ̃₀)) pointwise, so
    // the bands carry the joint (β, γ̃) uncertainty of the draws
    let (u_min, u_max) = scored
        .iter()
        .map(|r| r.score.index_value)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u), hi.max(u)));
    let l = system.n_basis();
    let dgamma: Vec<DVector<f64>> = draws
        .states
        .iter()
        .map(|s| {
            DVector::from_fn(l, |j, _| s.gamma_tilde[l + j] - s.gamma_tilde[j])
        })
        .collect();
    let mut curve = Vec::with_capacity(CURVE_GRID_POINTS);
    for k in 0..CURVE_GRID_POINTS {
        let u = u_min + (u_max - u_min) * k as f64 / (CURVE_GRID_POINTS - 1) as f64;
        let psi = system.basis(u);
        let vals: Vec<f64> = dgamma.iter().map(|dg| psi.dot(dg).exp()).collect();
        let mean = vals.iter().sum::<f64>() / n_draws as f64;
        let (lo, hi) = cri95(&vals);
        curve.push(CurvePoint { u, mean, cri_lower: lo, cri_upper: hi });
    }

    // per-subject benefit gradient: exp(Δ) summaries against the TBI
    let mut subject_curve = Vec::with_capacity(scored.len());
    let mut rule_disagreements = 0;
    for row in &scored {
        let exp_deltas: Vec<f64> = row.score.delta_draws.iter().map(|d| d.exp()).collect();
        let mean = exp_deltas.iter().sum::<f64>() / n_draws as f64;
        let (lo, hi) = cri95(&exp_deltas);
        if row.score.decision != row.score.decision_mean_rule {
            rule_disagreements += 1;
        }
        subject_curve.push(SubjectCurvePoint {
            subject_id: row.score.subject_id,
            tbi: row.score.tbi,
            mean,
            cri_lower: lo,
            cri_upper: hi,
            decision: row.score.decision,
        });
    }

    Ok(Summary {
        coefficients,
        curve,
        subject_curve,
        subject_scores: scored.into_iter().map(|r| r.score).collect(),
        rule_disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Diagnostics;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_system() -> SplineSystem {
        SplineSystem::from_breaks(vec![-2.0, -1.0, 0.0, 1.0, 2.0], 0.5, 0.5).unwrap()
    }

    fn state_with(system: &SplineSystem, gamma: DVector<f64>, beta: DVector<f64>) -> ParameterState {
        ParameterState::new(DVector::zeros(2), beta, gamma, system)
    }

    fn fake_draws(states: Vec<ParameterState>) -> PosteriorDraws {
        let n = states.len();
        PosteriorDraws {
            states,
            chain_sizes: vec![n],
            acceptance_rate: 0.3,
            diagnostics: Diagnostics::default(),
            scoring_failures: 0,
            error_rejections: 0,
            beta_anchor: None,
        }
    }

    fn unit2(a: f64, b: f64) -> DVector<f64> {
        let v = DVector::from_vec(vec![a, b]);
        let n = v.norm();
        v / n
    }

    #[test]
    fn zero_gamma_gives_zero_contrast() {
        let sys = test_system();
        let s = state_with(&sys, DVector::zeros(7), unit2(1.0, 0.0));
        let x = DVector::from_vec(vec![0.7, -0.4]);
        assert_eq!(delta_contrast(&x, &s, &sys), 0.0);
    }

    #[test]
    fn contrast_is_difference_of_arm_curves() {
        let sys = test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gamma = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let s = state_with(&sys, gamma, unit2(0.6, 0.8));
        for _ in 0..20 {
            let x = DVector::from_vec(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let direct = crate::spline::evaluate_g(&x, 1, &s, &sys)
                - crate::spline::evaluate_g(&x, 0, &s, &sys);
            assert!((delta_contrast(&x, &s, &sys) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_randomization_doubles_the_arm1_curve() {
        let sys = test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gamma = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let s = state_with(&sys, gamma, unit2(1.0, 0.0));
        let x = DVector::from_vec(vec![0.3, 1.2]);
        let delta = delta_contrast(&x, &s, &sys);
        let g1 = crate::spline::evaluate_g(&x, 1, &s, &sys);
        assert!((delta - 2.0 * g1).abs() < 1e-12);
    }

    #[test]
    fn tbi_counts_strictly_negative_draws() {
        assert_eq!(tbi_from_deltas(&[-1.0, -1.0, 1.0, 1.0]), 0.5);
        assert_eq!(tbi_from_deltas(&[-1.0, -2.0]), 1.0);
        assert_eq!(tbi_from_deltas(&[3.0, 2.0]), 0.0);
        // exact zeros do not count as benefit
        assert_eq!(tbi_from_deltas(&[0.0, -1.0]), 0.5);
    }

    #[test]
    fn decision_threshold_is_strict() {
        let sys = test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // two draws with opposite-signed smooths -> TBI exactly 0.5
        let gamma = DVector::from_fn(7, |_, _| rng.random_range(0.1..1.0));
        let s_pos = state_with(&sys, gamma.clone(), unit2(1.0, 0.0));
        let s_neg = state_with(&sys, -gamma, unit2(1.0, 0.0));
        let draws = fake_draws(vec![s_pos, s_neg]);
        let x = DVector::from_vec(vec![0.9, 0.0]);
        assert_eq!(tbi(&x, &draws, &sys).unwrap(), 0.5);
        assert_eq!(decide(&x, &draws, &sys).unwrap(), 0);
    }

    #[test]
    fn predictions_average_on_the_mean_scale() {
        let sys = test_system();
        // single gaussian draw: prediction is exactly eta
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gamma = DVector::from_fn(7, |_, _| rng.random_range(-0.5..0.5));
        let mut s = state_with(&sys, gamma, unit2(0.0, 1.0));
        s.m = DVector::from_vec(vec![0.4, -0.2]);
        let draws = fake_draws(vec![s.clone()]);
        let xm = DVector::from_vec(vec![1.0, 2.0]);
        let xi = DVector::from_vec(vec![0.5, -0.5]);
        let got =
            predict_outcome(&xm, &xi, 1, &draws, &Family::gaussian(), &sys).unwrap();
        let eta = s.m.dot(&xm) + crate::spline::evaluate_g(&xi, 1, &s, &sys);
        assert!((got - eta).abs() < 1e-12);

        // two bernoulli draws with eta = ±c average to one half
        let mut flip = s.clone();
        flip.m = -s.m.clone();
        flip.gamma = -s.gamma.clone();
        flip.gamma_tilde = -s.gamma_tilde.clone();
        let draws = fake_draws(vec![s, flip]);
        let got =
            predict_outcome(&xm, &xi, 1, &draws, &Family::bernoulli(), &sys).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn empty_draws_error() {
        let sys = test_system();
        let draws = fake_draws(vec![]);
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(tbi(&x, &draws, &sys), Err(Error::EmptyDraws)));
    }

    #[test]
    fn exp_relabeling_preserves_tbi() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let deltas: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
            let below: usize = deltas.iter().filter(|d| **d < 0.0).count();
            let below_exp: usize = deltas.iter().filter(|d| d.exp() < 1.0).count();
            assert_eq!(below, below_exp);
        }
    }

    #[test]
    fn quantiles_bracket_the_mean_for_constant_draws() {
        let vals = vec![1.5; 10];
        let (lo, hi) = cri95(&vals);
        assert_eq!(lo, 1.5);
        assert_eq!(hi, 1.5);
    }
}
