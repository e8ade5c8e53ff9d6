//! Fisher-scoring / IWLS machinery.
//!
//! One scoring pass computes the adjusted response `zᵢ = h′(μᵢ)(yᵢ − μᵢ) + ηᵢ`
//! and weights `wᵢ = 1 / {h′(μᵢ)² V(μᵢ)}` at the current coefficients, then
//! solves the (optionally ridge-penalized) weighted least squares problem on
//! the offset-adjusted working response,
//! `min (z − offset − Xc)ᵀ W (z − offset − Xc) + ρ‖c‖²`, which is Newton's
//! method for the canonical links and converges to the (penalized)
//! likelihood mode in a handful of sweeps. The adjusted response z itself —
//! with the offset inside, as defined — and the weights frozen at the
//! converged coefficients are what every downstream Gaussian approximation
//! consumes.

use crate::error::{Error, Result};
use crate::expfam::Family;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Adjusted response and weights at the end of a scoring run.
#[derive(Debug, Clone)]
pub struct IwlsState {
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// A converged (or max-iteration) scoring fit.
#[derive(Debug, Clone)]
pub struct ScoringFit {
    pub coef: DVector<f64>,
    pub state: IwlsState,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoringOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions { tol: 1e-8, max_iter: 50 }
    }
}

/// Σ_ρ, Σ_0, Λ and S₁ for one design: everything the γ-marginalized β
/// posterior and the γ conditional need.
#[derive(Debug, Clone)]
pub struct PosteriorGaussianCache {
    /// (DᵀWD + ρI)⁻¹
    pub sigma_rho: DMatrix<f64>,
    /// (DᵀWD)⁻¹
    pub sigma_0: DMatrix<f64>,
    /// (I + Σ_ρ Σ_0⁻¹) Σ_0 (I + Σ_ρ Σ_0⁻¹)
    pub lambda: DMatrix<f64>,
    /// zᵀWz + zᵀWᵀD Σ_ρ Σ_0⁻¹ Σ_ρ DᵀWz
    pub s1: f64,
    /// DᵀWz
    pub dwz: DVector<f64>,
}

/// Adjusted response and weights at given coefficients.
pub fn working_response(
    family: &Family,
    y: &DVector<f64>,
    offset: &DVector<f64>,
    design: &DMatrix<f64>,
    coef: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = y.len();
    let mut eta = design * coef;
    eta += offset;
    let mut z = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let (ys, es, zs, ws) = (y.as_slice(), eta.as_slice(), z.as_mut_slice(), w.as_mut_slice());
    // canonical links: h'(μ) = 1/V(μ), so w = V(μ) and z = (y − μ)/w + η
    match family.kind() {
        crate::expfam::FamilyKind::Gaussian => {
            for i in 0..n {
                zs[i] = ys[i];
                ws[i] = 1.0;
            }
        }
        crate::expfam::FamilyKind::Bernoulli => {
            for i in 0..n {
                let e = es[i];
                let mu = if e >= 0.0 { 1.0 / (1.0 + (-e).exp()) } else { let t = e.exp(); t / (1.0 + t) };
                let mu = mu.clamp(crate::expfam::MU_EPS, 1.0 - crate::expfam::MU_EPS);
                let v = mu * (1.0 - mu);
                zs[i] = (ys[i] - mu) / v + e;
                ws[i] = v;
            }
        }
        crate::expfam::FamilyKind::Poisson => {
            for i in 0..n {
                let mu = es[i].exp().max(crate::expfam::MU_EPS);
                zs[i] = (ys[i] - mu) / mu + es[i];
                ws[i] = mu;
            }
        }
    }
    for i in 0..n {
        if !(ws[i] > 0.0 && ws[i].is_finite() && zs[i].is_finite()) {
            return Err(Error::Domain {
                context: "working_response",
                value: es[i],
                domain: "weights must stay positive and finite",
            });
        }
    }
    Ok((z, w))
}

/// Cholesky with the jitter fallback: on failure, add `1e-8 * mean(diag)` to
/// the diagonal, up to three times.
pub fn cholesky_with_jitter(
    mut a: DMatrix<f64>,
    what: &'static str,
) -> Result<Cholesky<f64, Dyn>> {
    match Cholesky::new(a.clone()) {
        Some(c) => Ok(c),
        None => {
            let k = a.nrows();
            let mean_diag = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / k as f64;
            let bump = 1e-8 * mean_diag.max(1e-300);
            for _ in 0..3 {
                for i in 0..k {
                    a[(i, i)] += bump;
                }
                if let Some(c) = Cholesky::new(a.clone()) {
                    return Ok(c);
                }
            }
            Err(Error::Singular { what })
        }
    }
}

// XᵀWX over the column-major storage; the weighted column is materialized
// once per outer column so the inner loops run on plain slices
pub(crate) fn weighted_gram(design: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let (n, k) = (design.nrows(), design.ncols());
    let data = design.as_slice();
    let ws = w.as_slice();
    let mut gram = DMatrix::zeros(k, k);
    let mut wcol = vec![0.0; n];
    for a in 0..k {
        let col_a = &data[a * n..(a + 1) * n];
        for i in 0..n {
            wcol[i] = ws[i] * col_a[i];
        }
        for b in a..k {
            let col_b = &data[b * n..(b + 1) * n];
            let acc = dot4(&wcol, col_b);
            gram[(a, b)] = acc;
            gram[(b, a)] = acc;
        }
    }
    gram
}

pub(crate) fn weighted_xtz(design: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let (n, k) = (design.nrows(), design.ncols());
    let data = design.as_slice();
    let ws = w.as_slice();
    let zs = z.as_slice();
    let mut out = DVector::zeros(k);
    for a in 0..k {
        let col = &data[a * n..(a + 1) * n];
        let mut acc = 0.0;
        for i in 0..n {
            acc += ws[i] * zs[i] * col[i];
        }
        out[a] = acc;
    }
    out
}

// dot product with four lanes; the fixed summation tree keeps results
// reproducible while letting the reduction pipeline
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

// XᵀWX and XᵀWz in one sweep over the design storage
pub(crate) fn weighted_normal_equations(
    design: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, k) = (design.nrows(), design.ncols());
    let data = design.as_slice();
    let ws = w.as_slice();
    let zs = z.as_slice();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    let mut wcol = vec![0.0; n];
    for a in 0..k {
        let col_a = &data[a * n..(a + 1) * n];
        for i in 0..n {
            wcol[i] = ws[i] * col_a[i];
        }
        rhs[a] = dot4(&wcol, zs);
        for b in a..k {
            let col_b = &data[b * n..(b + 1) * n];
            let acc = dot4(&wcol, col_b);
            gram[(a, b)] = acc;
            gram[(b, a)] = acc;
        }
    }
    (gram, rhs)
}

/// Solves (XᵀWX + ρI) c = XᵀWz.
pub fn wls_solve(
    design: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>> {
    let (mut gram, rhs) = weighted_normal_equations(design, w, z);
    if ridge > 0.0 {
        for i in 0..gram.nrows() {
            gram[(i, i)] += ridge;
        }
    }
    let chol = cholesky_with_jitter(gram, "weighted Gram matrix")?;
    Ok(chol.solve(&rhs))
}

/// Solves (XᵀWX + diag(ridge)) c = XᵀWz with a per-column ridge, used for
/// joint fits where only the spline block is penalized.
pub fn wls_solve_ridged(
    design: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
    ridge: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (mut gram, rhs) = weighted_normal_equations(design, w, z);
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge[i];
    }
    let chol = cholesky_with_jitter(gram, "weighted Gram matrix")?;
    Ok(chol.solve(&rhs))
}

/// One scoring update: z and W at the current coefficients, then the WLS
/// solve on z − offset. Returns the updated coefficients and the state they
/// came from.
pub fn iwls_step(
    family: &Family,
    y: &DVector<f64>,
    offset: &DVector<f64>,
    design: &DMatrix<f64>,
    coef: &DVector<f64>,
) -> Result<(DVector<f64>, IwlsState)> {
    let (z, w) = working_response(family, y, offset, design, coef)?;
    let target = &z - offset;
    let new = wls_solve(design, &w, &target, 0.0)?;
    Ok((new, IwlsState { z, w, converged: false, iterations: 1 }))
}

/// Runs scoring to convergence (coefficient change below `tol` in ∞-norm, or
/// the working quantities no longer moving, which ends Gaussian fits after a
/// single solve). The returned z and W are evaluated at the final
/// coefficients. Non-convergence is reported through the flag; the last
/// iterate is still returned.
pub fn fisher_scoring(
    family: &Family,
    y: &DVector<f64>,
    offset: &DVector<f64>,
    design: &DMatrix<f64>,
    coef0: DVector<f64>,
    ridge: f64,
    opts: &ScoringOptions,
) -> Result<ScoringFit> {
    let ridge_vec = DVector::from_element(design.ncols(), ridge);
    fisher_scoring_ridged(family, y, offset, design, coef0, &ridge_vec, 1.0, opts)
}

/// Scoring with a per-column ridge and a constant weight multiplier. Each
/// solve uses `(Xᵀ(sW)X + diag(ridge))⁻¹ Xᵀ(sW)z`; the weights in the
/// returned state carry the multiplier.
pub fn fisher_scoring_ridged(
    family: &Family,
    y: &DVector<f64>,
    offset: &DVector<f64>,
    design: &DMatrix<f64>,
    coef0: DVector<f64>,
    ridge: &DVector<f64>,
    weight_scale: f64,
    opts: &ScoringOptions,
) -> Result<ScoringFit> {
    let mut coef = coef0;
    let scale = |w: DVector<f64>| -> DVector<f64> {
        if weight_scale == 1.0 {
            w
        } else {
            w * weight_scale
        }
    };
    let (mut z, w0) = working_response(family, y, offset, design, &coef)?;
    let mut w = scale(w0);
    let mut converged = false;
    let mut iterations = 0;
    let mut target = &z - offset;
    while iterations < opts.max_iter {
        iterations += 1;
        let new = wls_solve_ridged(design, &w, &target, ridge)?;
        let delta = (&new - &coef).amax();
        coef = new;
        let (z2, w2) = working_response(family, y, offset, design, &coef)?;
        let w2 = scale(w2);
        let z_move = (&z2 - &z).amax() / (1.0 + z.amax());
        let w_move = (&w2 - &w).amax() / (1.0 + w.amax());
        z = z2;
        w = w2;
        if delta < opts.tol || (z_move < 1e-13 && w_move < 1e-13) {
            converged = true;
            break;
        }
        target = &z - offset;
    }
    Ok(ScoringFit { coef, state: IwlsState { z, w, converged, iterations } })
}

/// Ridge-penalized WLS estimate (DᵀWD + ρI)⁻¹ DᵀWz.
pub fn penalized_gamma_hat(
    d: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    assert!(rho > 0.0, "penalized solve needs rho > 0");
    wls_solve(d, w, z, rho)
}

/// Log-spaced grid for the smoothing search.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    assert!(min > 0.0 && max >= min && points >= 1);
    if points == 1 {
        return vec![max];
    }
    let (lo, hi) = (min.ln(), max.ln());
    (0..points).map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp()).collect()
}

/// Picks ρ by generalized cross-validation over the grid:
/// `GCV(ρ) = n ‖W^{1/2}(z − D γ̂_ρ)‖² / (n − tr(H_ρ))²` with
/// `H_ρ = D Σ_ρ Dᵀ W`. Grid points whose effective degrees of freedom reach
/// n are skipped; ties break toward the larger ρ.
pub fn gcv_select_rho(
    d: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
    grid: &[f64],
) -> Result<f64> {
    assert!(!grid.is_empty(), "GCV grid is empty");
    let n = d.nrows() as f64;
    let gram = weighted_gram(d, w);
    let rhs = weighted_xtz(d, w, z);
    let mut best: Option<(f64, f64)> = None;
    let mut ascending: Vec<f64> = grid.to_vec();
    ascending.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &rho in &ascending {
        let mut pen = gram.clone();
        for i in 0..pen.nrows() {
            pen[(i, i)] += rho;
        }
        let chol = cholesky_with_jitter(pen, "penalized Gram matrix")?;
        let gamma = chol.solve(&rhs);
        // tr(H) = tr(Σ_ρ DᵀWD)
        let mut tr = 0.0;
        let sol = chol.solve(&gram);
        for i in 0..sol.nrows() {
            tr += sol[(i, i)];
        }
        if tr >= n {
            continue;
        }
        let fitted = d * &gamma;
        let mut rss = 0.0;
        for i in 0..z.len() {
            let r = z[i] - fitted[i];
            rss += w[i] * r * r;
        }
        let gcv = n * rss / ((n - tr) * (n - tr));
        match best {
            Some((b, _)) if gcv > b => {}
            _ => best = Some((gcv, rho)),
        }
    }
    best.map(|(_, rho)| rho).ok_or(Error::Saturated)
}

/// Builds Σ_ρ, Σ_0, Λ and S₁ from one (D, W, z, ρ).
pub fn marginal_cache(
    d: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
    rho: f64,
) -> Result<PosteriorGaussianCache> {
    let l = d.ncols();
    let gram = weighted_gram(d, w);
    let chol0 = cholesky_with_jitter(gram.clone(), "unpenalized Gram matrix")?;
    let sigma_0 = chol0.inverse();
    let mut pen = gram.clone();
    for i in 0..l {
        pen[(i, i)] += rho;
    }
    let cholr = cholesky_with_jitter(pen, "penalized Gram matrix")?;
    let sigma_rho = cholr.inverse();

    let dwz = weighted_xtz(d, w, z);
    let ztwz: f64 = (0..z.len()).map(|i| w[i] * z[i] * z[i]).sum();
    let srb = &sigma_rho * &dwz;
    let s1 = ztwz + (&gram * &srb).dot(&srb);

    // Λ = (I + Σ_ρ Σ_0⁻¹) Σ_0 (I + Σ_ρ Σ_0⁻¹); Σ_0⁻¹ is the Gram matrix
    let mut k = &sigma_rho * &gram;
    for i in 0..l {
        k[(i, i)] += 1.0;
    }
    let lambda = &k * &sigma_0 * &k;

    Ok(PosteriorGaussianCache { sigma_rho, sigma_0, lambda, s1, dwz })
}

impl PosteriorGaussianCache {
    /// The Gaussian-marginalization exponent `(1/4)(DᵀWz)ᵀ Λ (DᵀWz)`.
    pub fn quarter_quadratic(&self) -> f64 {
        0.25 * (&self.lambda * &self.dwz).dot(&self.dwz)
    }
}
