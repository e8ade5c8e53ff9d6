//! Synthetic randomized-trial generator for tests and benchmarks.
//!
//! Covariates are iid standard normal, the arm is Bernoulli(π₁) independent
//! of the covariates, and the interaction term is built as
//! `g(u, a) = c_a · s(u)` with `c₀ = −π₁·amplitude`, `c₁ = π₀·amplitude`, so
//! the randomization-weighted combination `π₀ c₀ + π₁ c₁` vanishes by
//! construction and the true contrast is `Δ(x) = amplitude · s(β*ᵀx)`.

use crate::data::Dataset;
use crate::error::Result;
use crate::expfam::{Family, FamilyKind};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Zero,
    Linear,
    Quadratic,
    Sine,
}

impl Shape {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(Shape::Zero),
            "linear" => Ok(Shape::Linear),
            "quadratic" => Ok(Shape::Quadratic),
            "sine" => Ok(Shape::Sine),
            other => Err(crate::error::Error::Config(format!(
                "unknown shape `{other}` (expected zero, linear, quadratic or sine)"
            ))),
        }
    }

    /// The base curve s(u).
    pub fn value(&self, u: f64) -> f64 {
        match self {
            Shape::Zero => 0.0,
            Shape::Linear => u,
            // centered so E[s(U)] = 0 for U ~ N(0,1)
            Shape::Quadratic => u * u - 1.0,
            Shape::Sine => (std::f64::consts::FRAC_PI_2 * u).sin(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub pi1: f64,
    pub family: Family,
    pub m_star: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub shape: Shape,
    pub amplitude: f64,
    pub seed: u64,
}

impl Scenario {
    /// β* normalized to unit length.
    pub fn beta_star_unit(&self) -> DVector<f64> {
        let b = DVector::from_vec(self.beta_star.clone());
        let n = b.norm();
        assert!(n > 0.0, "beta_star must be nonzero");
        b / n
    }

    fn arm_coefficients(&self) -> (f64, f64) {
        let pi0 = 1.0 - self.pi1;
        (-self.pi1 * self.amplitude, pi0 * self.amplitude)
    }
}

/// Ground-truth contrast Δ(x) = g(x, 1) − g(x, 0) = amplitude · s(β*ᵀx).
pub fn true_delta(scenario: &Scenario, x: &DVector<f64>) -> f64 {
    let (c0, c1) = scenario.arm_coefficients();
    let u = scenario.beta_star_unit().dot(x);
    (c1 - c0) * scenario.shape.value(u)
}

/// Generates one dataset. Deterministic per seed; covariate columns are
/// named `x1..xp` and feed both the main-effect and index blocks.
pub fn generate(scenario: &Scenario) -> Result<Dataset> {
    assert!(scenario.pi1 > 0.0 && scenario.pi1 < 1.0, "pi1 must be in (0,1)");
    assert_eq!(scenario.m_star.len(), scenario.p, "m_star length must equal p");
    assert!(scenario.amplitude.is_finite());
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let n = scenario.n;
    let p = scenario.p;
    let beta = scenario.beta_star_unit();
    let m_star = DVector::from_vec(scenario.m_star.clone());
    let (c0, c1) = scenario.arm_coefficients();

    let x = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let arm: Vec<u8> = (0..n).map(|_| (rng.random::<f64>() < scenario.pi1) as u8).collect();
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row(i).transpose();
        let u = beta.dot(&xi);
        let c = if arm[i] == 1 { c1 } else { c0 };
        let eta = m_star.dot(&xi) + c * scenario.shape.value(u);
        let mu = scenario.family.inverse_link(eta);
        let yi = match scenario.family.kind() {
            FamilyKind::Gaussian => {
                let e: f64 = StandardNormal.sample(&mut rng);
                mu + scenario.family.dispersion().sqrt() * e
            }
            FamilyKind::Bernoulli => (rng.random::<f64>() < mu) as u8 as f64,
            FamilyKind::Poisson => Poisson::new(mu.max(1e-12)).unwrap().sample(&mut rng),
        };
        y.push(yi);
    }
    let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    // both arms can be missing by chance only for tiny n; Dataset validates
    Dataset::new(y, arm, x.clone(), x, names.clone(), names, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(seed: u64) -> Scenario {
        Scenario {
            n: 2000,
            p: 4,
            pi1: 0.5,
            family: Family::bernoulli(),
            m_star: vec![0.2, -0.1, 0.0, 0.3],
            beta_star: vec![1.0, -1.0, 0.5, 0.0],
            shape: Shape::Sine,
            amplitude: 1.0,
            seed,
        }
    }

    #[test]
    fn determinism_per_seed() {
        let a = generate(&base(3)).unwrap();
        let b = generate(&base(3)).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.arm(), b.arm());
        assert_eq!(a.x_index(), b.x_index());
    }

    #[test]
    fn equal_randomization_makes_arm_effects_opposite() {
        let s = base(1);
        let (c0, c1) = s.arm_coefficients();
        assert!((c0 + c1).abs() < 1e-15);
    }

    #[test]
    fn weighted_arm_effects_cancel_for_any_pi() {
        for pi1 in [0.2, 0.35, 0.5, 0.8] {
            let s = Scenario { pi1, ..base(1) };
            let (c0, c1) = s.arm_coefficients();
            assert!(((1.0 - pi1) * c0 + pi1 * c1).abs() < 1e-15);
        }
    }

    #[test]
    fn arm_fraction_matches_pi1() {
        let s = Scenario { n: 100_000, pi1: 0.3, ..base(7) };
        let ds = generate(&s).unwrap();
        let frac = ds.arm().iter().filter(|&&a| a == 1).count() as f64 / ds.n() as f64;
        let se = (0.3 * 0.7 / ds.n() as f64).sqrt();
        assert!((frac - 0.3).abs() < 3.0 * se, "fraction {frac}");
    }

    #[test]
    fn zero_shape_has_zero_contrast() {
        let s = Scenario { shape: Shape::Zero, ..base(5) };
        let x = DVector::from_vec(vec![0.4, -1.0, 2.0, 0.1]);
        assert_eq!(true_delta(&s, &x), 0.0);
    }

    #[test]
    fn linear_contrast_matches_hand_algebra() {
        let s = Scenario { shape: Shape::Linear, amplitude: 1.0, ..base(5) };
        let x = DVector::from_vec(vec![0.7, 0.2, -0.5, 1.1]);
        let u = s.beta_star_unit().dot(&x);
        // with equal randomization, delta = 2 c1 u
        let (_, c1) = s.arm_coefficients();
        assert!((true_delta(&s, &x) - 2.0 * c1 * u).abs() < 1e-14);
        assert!((true_delta(&s, &x) - u).abs() < 1e-14);
    }

    #[test]
    fn contrast_sign_follows_curve_sign() {
        let s = Scenario { shape: Shape::Sine, ..base(5) };
        let beta = s.beta_star_unit();
        let x_pos = beta.clone() * 0.8; // u = 0.8
        let x_neg = beta * -0.8;
        assert!(true_delta(&s, &x_pos) > 0.0);
        assert!(true_delta(&s, &x_neg) < 0.0);
    }

    // Wilson-Hilferty approximation to the chi-square tail, good enough for a
    // p > 0.01 independence check
    fn chi2_sf(x: f64, k: f64) -> f64 {
        let z = ((x / k).powf(1.0 / 3.0) - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
        0.5 * erfc_approx(z / std::f64::consts::SQRT_2)
    }

    fn erfc_approx(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = t
            * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))))
            * (-x * x).exp();
        if sign < 0.0 {
            2.0 - y
        } else {
            y
        }
    }

    #[test]
    fn arm_is_independent_of_covariates() {
        for seed in [101u64, 202, 303] {
            let s = Scenario { n: 5000, ..base(seed) };
            let ds = generate(&s).unwrap();
            // chi-square over quantile bins of the true index vs arm
            let beta = s.beta_star_unit();
            let mut u: Vec<f64> = ds.index_values(&beta);
            let mut sorted = u.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let bins = 10;
            let cuts: Vec<f64> =
                (1..bins).map(|k| sorted[k * sorted.len() / bins]).collect();
            let mut table = vec![[0.0f64; 2]; bins];
            for (ui, &a) in u.iter_mut().zip(ds.arm()) {
                let b = cuts.iter().position(|c| *ui < *c).unwrap_or(bins - 1);
                table[b][a as usize] += 1.0;
            }
            let n = ds.n() as f64;
            let tot1: f64 = table.iter().map(|r| r[1]).sum();
            let mut chi2 = 0.0;
            for row in &table {
                let rn = row[0] + row[1];
                for (j, &obs) in row.iter().enumerate() {
                    let expect = rn * if j == 1 { tot1 / n } else { 1.0 - tot1 / n };
                    chi2 += (obs - expect).powi(2) / expect;
                }
            }
            let p = chi2_sf(chi2, (bins - 1) as f64);
            assert!(p > 0.01, "seed {seed}: chi2 {chi2:.2}, p {p:.4}");
        }
    }
}
