//! Exponential-family response models with canonical links.
//!
//! Supports the Gaussian (identity link), Bernoulli (logit) and Poisson (log)
//! families. Each family supplies its canonical link `h`, inverse link,
//! derivative `h′`, variance function `V`, and the pieces `b(·)`, `c(·)` of
//! the density `exp{φ⁻¹[yη − b(η)] + c(y, φ)}` used for log-likelihood
//! reporting.

use crate::error::{Error, Result};
use nalgebra::DVector;

/// Lower clamp for means pushed against the boundary during iterative fits.
pub const MU_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Bernoulli => "bernoulli",
            FamilyKind::Poisson => "poisson",
        }
    }
}

/// An exponential-family specification: the family kind plus its dispersion φ.
///
/// Bernoulli and Poisson are one-parameter families, so their dispersion is
/// pinned to 1. The Gaussian dispersion defaults to 1 and is replaced by a
/// Pearson moment estimate during model initialization, after which it stays
/// fixed for the whole run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Family {
    kind: FamilyKind,
    dispersion: f64,
}

impl Family {
    pub fn gaussian() -> Self {
        Family { kind: FamilyKind::Gaussian, dispersion: 1.0 }
    }

    pub fn bernoulli() -> Self {
        Family { kind: FamilyKind::Bernoulli, dispersion: 1.0 }
    }

    pub fn poisson() -> Self {
        Family { kind: FamilyKind::Poisson, dispersion: 1.0 }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::gaussian()),
            "bernoulli" => Ok(Self::bernoulli()),
            "poisson" => Ok(Self::poisson()),
            other => Err(Error::Config(format!(
                "unknown family `{other}` (expected gaussian, bernoulli or poisson)"
            ))),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// Replaces the dispersion. Only meaningful for the Gaussian family;
    /// for the one-parameter families the request is ignored and φ stays 1.
    pub fn with_dispersion(self, phi: f64) -> Self {
        match self.kind {
            FamilyKind::Gaussian => {
                assert!(phi > 0.0 && phi.is_finite(), "dispersion must be positive");
                Family { dispersion: phi, ..self }
            }
            _ => self,
        }
    }

    fn check_interior(&self, mu: f64, context: &'static str) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::Gaussian => mu.is_finite(),
            FamilyKind::Bernoulli => mu > 0.0 && mu < 1.0,
            FamilyKind::Poisson => mu > 0.0 && mu.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain {
                context,
                value: mu,
                domain: match self.kind {
                    FamilyKind::Gaussian => "(-inf, inf)",
                    FamilyKind::Bernoulli => "(0, 1)",
                    FamilyKind::Poisson => "(0, inf)",
                },
            })
        }
    }

    /// Canonical link h(μ).
    pub fn link(&self, mu: f64) -> Result<f64> {
        self.check_interior(mu, "link")?;
        Ok(match self.kind {
            FamilyKind::Gaussian => mu,
            FamilyKind::Bernoulli => (mu / (1.0 - mu)).ln(),
            FamilyKind::Poisson => mu.ln(),
        })
    }

    /// Inverse link h⁻¹(η); numerically stable for the logit.
    pub fn inverse_link(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => eta,
            FamilyKind::Bernoulli => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            FamilyKind::Poisson => eta.exp(),
        }
    }

    /// Link derivative h′(μ).
    pub fn link_derivative(&self, mu: f64) -> Result<f64> {
        self.check_interior(mu, "link_derivative")?;
        Ok(match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Bernoulli => 1.0 / (mu * (1.0 - mu)),
            FamilyKind::Poisson => 1.0 / mu,
        })
    }

    /// Variance function V(μ).
    pub fn variance_function(&self, mu: f64) -> Result<f64> {
        self.check_interior(mu, "variance_function")?;
        Ok(match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Bernoulli => mu * (1.0 - mu),
            FamilyKind::Poisson => mu,
        })
    }

    /// Clamps a mean into the family's working interior, away from boundaries
    /// where the IWLS weights blow up.
    pub fn clamp_mu(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => mu,
            FamilyKind::Bernoulli => mu.clamp(MU_EPS, 1.0 - MU_EPS),
            FamilyKind::Poisson => mu.max(MU_EPS),
        }
    }

    /// Checks a response value against the family support.
    pub fn check_support(&self, y: f64, row: usize) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::Gaussian => y.is_finite(),
            FamilyKind::Bernoulli => y == 0.0 || y == 1.0,
            FamilyKind::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Support { family: self.kind.name(), value: y, row })
        }
    }

    /// Cumulant b(η) of the canonical parametrization.
    pub fn cumulant(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 0.5 * eta * eta,
            // softplus, stable for large |η|
            FamilyKind::Bernoulli => {
                if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
            FamilyKind::Poisson => eta.exp(),
        }
    }

    /// The carrier term c(y, φ). Never enters a posterior ratio; kept so that
    /// reported log-likelihoods are on the proper density scale.
    pub fn carrier(&self, y: f64) -> f64 {
        let phi = self.dispersion;
        match self.kind {
            FamilyKind::Gaussian => {
                -0.5 * y * y / phi - 0.5 * (2.0 * std::f64::consts::PI * phi).ln()
            }
            FamilyKind::Bernoulli => 0.0,
            FamilyKind::Poisson => -ln_factorial(y),
        }
    }

    /// Log-likelihood Σᵢ φ⁻¹[yᵢηᵢ − b(ηᵢ)] + c(yᵢ, φ).
    pub fn log_likelihood(&self, y: &DVector<f64>, eta: &DVector<f64>) -> Result<f64> {
        if y.len() != eta.len() {
            return Err(Error::Data(format!(
                "response length {} does not match linear predictor length {}",
                y.len(),
                eta.len()
            )));
        }
        let phi = self.dispersion;
        let mut total = 0.0;
        for i in 0..y.len() {
            self.check_support(y[i], i)?;
            total += (y[i] * eta[i] - self.cumulant(eta[i])) / phi + self.carrier(y[i]);
        }
        Ok(total)
    }
}

fn ln_factorial(y: f64) -> f64 {
    let n = y as u64;
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// A linear predictor η together with its mean vector μ = h⁻¹(η).
#[derive(Debug, Clone)]
pub struct LinearPredictor {
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
}

impl LinearPredictor {
    /// Builds μ from η, clamping means into the family interior.
    pub fn new(family: &Family, eta: DVector<f64>) -> Self {
        let mu = eta.map(|e| family.clamp_mu(family.inverse_link(e)));
        LinearPredictor { eta, mu }
    }
}
