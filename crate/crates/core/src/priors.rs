//! Prior machinery: the von Mises-Fisher distribution on the unit sphere for
//! the index direction β (both as prior and as Metropolis proposal), and the
//! Gaussian prior on the main-effect coefficients m.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

/// Hyperparameters of the model priors. The smoothing penalty ρ starts unset
/// and is filled in by GCV during initialization.
#[derive(Debug, Clone)]
pub struct HyperParameters {
    /// Concentration of the vMF prior on β; 0 gives the uniform sphere.
    pub lambda_prior: f64,
    /// Prior mean direction β₀ (unit norm).
    pub beta0: DVector<f64>,
    /// Concentration of the vMF proposal around the current β.
    pub lambda_prop: f64,
    /// Prior mean of m.
    pub m0: DVector<f64>,
    /// Prior covariance of m (symmetric positive definite).
    pub q: DMatrix<f64>,
    /// Smoothing penalty, set by GCV at initialization.
    pub rho: Option<f64>,
    q_chol: Cholesky<f64, Dyn>,
}

impl HyperParameters {
    pub fn new(
        lambda_prior: f64,
        beta0: DVector<f64>,
        lambda_prop: f64,
        m0: DVector<f64>,
        q: DMatrix<f64>,
    ) -> Result<Self> {
        if lambda_prior < 0.0 {
            return Err(Error::Config("lambda_prior must be nonnegative".into()));
        }
        if lambda_prop <= 0.0 {
            return Err(Error::Config("lambda_prop must be positive".into()));
        }
        let norm = beta0.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::NotUnit { context: "beta0", norm });
        }
        if m0.len() != q.nrows() || !q.is_square() {
            return Err(Error::Config("m prior dimensions disagree".into()));
        }
        let q_chol = Cholesky::new(q.clone())
            .ok_or(Error::Singular { what: "m prior covariance Q" })?;
        Ok(HyperParameters { lambda_prior, beta0, lambda_prop, m0, q, rho: None, q_chol })
    }

    /// Convenience constructor with m ~ N(0, sd² I).
    pub fn isotropic(
        lambda_prior: f64,
        beta0: DVector<f64>,
        lambda_prop: f64,
        p_main: usize,
        m_prior_sd: f64,
    ) -> Result<Self> {
        Self::new(
            lambda_prior,
            beta0,
            lambda_prop,
            DVector::zeros(p_main),
            DMatrix::identity(p_main, p_main) * m_prior_sd * m_prior_sd,
        )
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    /// ρ after initialization; calling before GCV ran is a bug.
    pub fn rho(&self) -> f64 {
        self.rho.expect("rho is set during initialization")
    }

    /// Q⁻¹ v via the cached factorization.
    pub fn q_inv_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.q_chol.solve(v)
    }

    /// Q⁻¹ as a matrix (used to assemble the m-step precision).
    pub fn q_inverse(&self) -> DMatrix<f64> {
        self.q_chol.inverse()
    }
}

/// Log of the unnormalized vMF density, λ βᵀd. The normalizing constant is
/// shared by every β of the same λ and cancels in all Metropolis ratios.
pub fn vmf_log_kernel(beta: &DVector<f64>, direction: &DVector<f64>, lambda: f64) -> Result<f64> {
    for (v, ctx) in [(beta, "vmf beta"), (direction, "vmf direction")] {
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NotUnit { context: ctx, norm });
        }
    }
    Ok(lambda * beta.dot(direction))
}

/// Draws one vMF(direction, λ) sample on the (p−1)-sphere.
///
/// Uses the usual rejection construction: the cosine of the angle to the mean
/// direction is drawn from its marginal via a Beta envelope, a uniform
/// direction fills the orthogonal complement, and a Householder reflection
/// carries the north pole onto `direction`.
pub fn vmf_sample<R: Rng + ?Sized>(
    direction: &DVector<f64>,
    lambda: f64,
    rng: &mut R,
) -> DVector<f64> {
    let p = direction.len();
    assert!(lambda > 0.0, "vmf_sample needs lambda > 0");
    assert!(p >= 1);
    if p == 1 {
        // two-point sphere: P(+d) / P(-d) = exp(2 lambda)
        let keep = 1.0 / (1.0 + (-2.0 * lambda).exp());
        let sign = if rng.random::<f64>() < keep { 1.0 } else { -1.0 };
        return direction * sign;
    }

    let d = (p - 1) as f64;
    let b = (-2.0 * lambda + (4.0 * lambda * lambda + d * d).sqrt()) / d;
    let x0 = (1.0 - b) / (1.0 + b);
    let c = lambda * x0 + d * (1.0 - x0 * x0).ln();
    let beta_dist = Beta::new(d / 2.0, d / 2.0).expect("valid Beta parameters");

    let w = loop {
        let zb: f64 = beta_dist.sample(rng);
        let u: f64 = rng.random();
        let w = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb);
        if lambda * w + d * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };

    // uniform direction in the tangent complement
    let mut v = DVector::<f64>::from_fn(p - 1, |_, _| StandardNormal.sample(rng));
    let mut vn = v.norm();
    while vn < 1e-12 {
        v = DVector::<f64>::from_fn(p - 1, |_, _| StandardNormal.sample(rng));
        vn = v.norm();
    }
    v /= vn;

    let mut sample = DVector::zeros(p);
    sample[0] = w;
    let t = (1.0 - w * w).max(0.0).sqrt();
    for i in 1..p {
        sample[i] = t * v[i - 1];
    }

    // reflect e1 onto the requested direction
    let mut u = DVector::zeros(p);
    u[0] = 1.0;
    u -= direction;
    let un2 = u.norm_squared();
    let mut out = if un2 < 1e-24 {
        sample
    } else {
        let proj = 2.0 * u.dot(&sample) / un2;
        sample - u * proj
    };
    // renormalize: keeps the unit-norm contract exact against roundoff
    out /= out.norm();
    out
}

/// Log kernel of the m prior: −½ (m − m₀)ᵀ Q⁻¹ (m − m₀).
pub fn m_prior_log_density(m: &DVector<f64>, hyper: &HyperParameters) -> f64 {
    let dev = m - &hyper.m0;
    -0.5 * hyper.q_inv_mul(&dev).dot(&dev)
}
