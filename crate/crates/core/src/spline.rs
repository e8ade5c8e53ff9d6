//! Cubic B-spline representation of the arm-specific smooth `g` and the
//! linear identifiability constraint.
//!
//! The smooth is `g(u, a) = ψ̃(u)ᵀ γ̃_a` with a clamped cubic B-spline basis
//! `ψ̃: ℝ → ℝˡ` on evenly spaced knots. Stacking `γ̃ = (γ̃₀, γ̃₁) ∈ ℝ²ˡ`, the
//! identifiability condition `π₀ γ̃₀ + π₁ γ̃₁ = 0` is absorbed by a `2l × l`
//! basis `Z` of the constraint null space: setting `γ̃ = Zγ` for free
//! `γ ∈ ℝˡ` satisfies the constraint automatically, and the working design
//! matrix becomes `D_β = D̃_β Z`.

use crate::error::{Error, Result};
use crate::sampler::ParameterState;
use nalgebra::{DMatrix, DVector};

const DEGREE: usize = 3;

/// Fitted spline configuration: basis dimension, knots, randomization
/// probabilities and the constraint basis. Immutable once constructed and
/// shared read-only across chains.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSystem {
    /// Number of basis functions.
    l: usize,
    /// Strictly increasing breakpoints, `breaks.len() == l - 2`.
    breaks: Vec<f64>,
    /// Padded clamped knot vector of length `l + 4`.
    knots: Vec<f64>,
    pi0: f64,
    pi1: f64,
    /// `2l × l` orthonormal basis of the constraint null space.
    z_constraint: DMatrix<f64>,
}

/// Per-β design matrices for the stacked (`D̃`) and constrained (`D`)
/// parametrizations of the smooth.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    /// `n × 2l`; row i carries ψ̃(βᵀxᵢ)ᵀ in the block of arm aᵢ, zeros in the other.
    pub d_tilde: DMatrix<f64>,
    /// `n × l`; `D = D̃ Z`.
    pub d: DMatrix<f64>,
}

/// Orthonormal basis of the null space of `[π₀ I_l  π₁ I_l]`.
///
/// Column j is `(π₁ e_j, −π₀ e_j) / √(π₀² + π₁²)`: columns are orthonormal,
/// each satisfies the constraint exactly, and the first nonzero entry of each
/// column is positive, so the result is deterministic. Any orthonormal basis
/// of this null space differs only by a right rotation, which leaves the
/// fitted smooth unchanged.
pub fn constraint_basis(pi0: f64, pi1: f64, l: usize) -> Result<DMatrix<f64>> {
    check_probs(pi0, pi1)?;
    if l < 1 {
        return Err(Error::Config("constraint basis needs l >= 1".into()));
    }
    let s = (pi0 * pi0 + pi1 * pi1).sqrt();
    let mut z = DMatrix::zeros(2 * l, l);
    for j in 0..l {
        z[(j, j)] = pi1 / s;
        z[(l + j, j)] = -pi0 / s;
    }
    Ok(z)
}

fn check_probs(pi0: f64, pi1: f64) -> Result<()> {
    if !(pi0 > 0.0 && pi0 < 1.0 && pi1 > 0.0 && pi1 < 1.0) || (pi0 + pi1 - 1.0).abs() > 1e-8 {
        return Err(Error::Config(format!(
            "randomization probabilities must lie in (0,1) and sum to 1, got ({pi0}, {pi1})"
        )));
    }
    Ok(())
}

impl SplineSystem {
    /// Builds the system from explicit breakpoints (strictly increasing,
    /// at least two). The basis dimension is `breaks.len() + 2`.
    pub fn from_breaks(breaks: Vec<f64>, pi0: f64, pi1: f64) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::InvalidKnots("need at least two breakpoints".into()));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidKnots("breakpoints must be finite and strictly increasing".into()));
        }
        check_probs(pi0, pi1)?;
        let l = breaks.len() + 2;
        let mut knots = Vec::with_capacity(l + DEGREE + 1);
        for _ in 0..DEGREE {
            knots.push(breaks[0]);
        }
        knots.extend_from_slice(&breaks);
        for _ in 0..DEGREE {
            knots.push(*breaks.last().unwrap());
        }
        let z_constraint = constraint_basis(pi0, pi1, l)?;
        Ok(SplineSystem { l, breaks, knots, pi0, pi1, z_constraint })
    }

    /// Builds the system for a target basis dimension over the observed index
    /// values, padding the range by `padding * range` on each side. The knots
    /// are computed once here and stay fixed afterwards.
    pub fn from_index_values(
        index: &[f64],
        n_basis: usize,
        padding: f64,
        pi0: f64,
        pi1: f64,
    ) -> Result<Self> {
        if n_basis < 4 {
            return Err(Error::Config(format!("n_basis must be at least 4, got {n_basis}")));
        }
        if index.is_empty() {
            return Err(Error::Data("no index values to place knots over".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &u in index {
            lo = lo.min(u);
            hi = hi.max(u);
        }
        let mut range = hi - lo;
        if range < 1e-12 {
            // degenerate index spread; open up a unit window
            lo -= 0.5;
            hi += 0.5;
            range = 1.0;
        }
        lo -= padding * range;
        hi += padding * range;
        let n_breaks = n_basis - 2;
        let step = (hi - lo) / (n_breaks - 1) as f64;
        let breaks: Vec<f64> = (0..n_breaks).map(|i| lo + step * i as f64).collect();
        Self::from_breaks(breaks, pi0, pi1)
    }

    pub fn n_basis(&self) -> usize {
        self.l
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pi(&self) -> (f64, f64) {
        (self.pi0, self.pi1)
    }

    pub fn z_constraint(&self) -> &DMatrix<f64> {
        &self.z_constraint
    }

    /// Inclusive knot range; index values outside are clamped before
    /// evaluation.
    pub fn knot_range(&self) -> (f64, f64) {
        (self.breaks[0], *self.breaks.last().unwrap())
    }

    /// Whether an index value falls outside the knot range (and would be
    /// clamped).
    pub fn extrapolates(&self, u: f64) -> bool {
        let (lo, hi) = self.knot_range();
        u < lo || u > hi
    }

    fn span_of(&self, u: f64) -> (usize, f64) {
        let (lo, hi) = self.knot_range();
        let u = u.clamp(lo, hi);
        // largest span index i in [DEGREE, l-1] with knots[i] <= u; u == hi
        // lands in the last nonempty span
        let mut ilo = DEGREE;
        let mut ihi = self.l - 1;
        while ilo < ihi {
            let mid = (ilo + ihi + 1) / 2;
            if self.knots[mid] <= u {
                ilo = mid;
            } else {
                ihi = mid - 1;
            }
        }
        (ilo, u)
    }

    /// Evaluates the cubic basis ψ̃(u) ∈ ℝˡ. At most four entries are
    /// nonzero; entries are nonnegative and sum to one inside the knot range.
    pub fn basis(&self, u: f64) -> DVector<f64> {
        let (first, vals) = self.basis_local_values(u);
        let mut out = DVector::zeros(self.l);
        for (r, &v) in vals.iter().enumerate() {
            out[first + r] = v;
        }
        out
    }

    /// The four nonzero basis values at `u` together with the index of the
    /// first: the allocation-free form used in the sampling loops.
    pub fn basis_local_values(&self, u: f64) -> (usize, [f64; DEGREE + 1]) {
        let (span, u) = self.span_of(u);
        (span - DEGREE, self.local_basis(span, u))
    }

    /// Basis values and first derivatives at `u`. Outside the knot range the
    /// clamped evaluation makes the derivative zero.
    pub fn basis_with_derivative(&self, u: f64) -> (DVector<f64>, DVector<f64>) {
        let (lo, hi) = self.knot_range();
        let clamped = u < lo || u > hi;
        let (span, u) = self.span_of(u);
        let vals = self.local_basis(span, u);
        let mut out = DVector::zeros(self.l);
        let mut dout = DVector::zeros(self.l);
        for (r, &v) in vals.iter().enumerate() {
            out[span - DEGREE + r] = v;
        }
        if clamped {
            return (out, dout);
        }
        // derivative via the degree-2 basis on the same span
        let quad = self.local_basis_deg2(span, u);
        let t = &self.knots;
        for r in 0..=DEGREE {
            let j = span - DEGREE + r;
            let mut d = 0.0;
            let den1 = t[j + DEGREE] - t[j];
            if den1 > 0.0 {
                d += quad_at(&quad, span, j) / den1;
            }
            let den2 = t[j + DEGREE + 1] - t[j + 1];
            if den2 > 0.0 {
                d -= quad_at(&quad, span, j + 1) / den2;
            }
            dout[j] = DEGREE as f64 * d;
        }
        (out, dout)
    }

    // triangular scheme for the DEGREE+1 nonzero basis values on a span
    fn local_basis(&self, span: usize, u: f64) -> [f64; DEGREE + 1] {
        let t = &self.knots;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        n
    }

    // degree-2 values N_{span-2..span, 2}(u)
    fn local_basis_deg2(&self, span: usize, u: f64) -> [f64; DEGREE] {
        let t = &self.knots;
        let mut n = [0.0; DEGREE];
        let mut left = [0.0; DEGREE];
        let mut right = [0.0; DEGREE];
        n[0] = 1.0;
        for j in 1..DEGREE {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        n
    }

    /// Stacked coefficient vector γ̃ = Zγ.
    pub fn gamma_tilde(&self, gamma: &DVector<f64>) -> DVector<f64> {
        &self.z_constraint * gamma
    }

    /// Evaluates g(u, a) from the stacked coefficients.
    pub fn g_from_tilde(&self, u: f64, arm: u8, gamma_tilde: &DVector<f64>) -> f64 {
        let (first, psi) = self.basis_local_values(u);
        let off = arm as usize * self.l + first;
        let mut acc = 0.0;
        for (r, &v) in psi.iter().enumerate() {
            acc += v * gamma_tilde[off + r];
        }
        acc
    }
}

// degree-2 basis lookup: quad[r] holds N_{span-2+r,2}; zero outside
fn quad_at(quad: &[f64; DEGREE], span: usize, j: usize) -> f64 {
    if j + 2 >= span && j <= span {
        quad[j + 2 - span]
    } else {
        0.0
    }
}

/// Builds the design matrices for one β: `D̃` places ψ̃(βᵀxᵢ)ᵀ into the block
/// of subject i's arm, and `D = D̃ Z`.
pub fn build_design(
    x_index: &DMatrix<f64>,
    arm: &[u8],
    beta: &DVector<f64>,
    system: &SplineSystem,
) -> Result<DesignMatrices> {
    let d = build_design_constrained(x_index, arm, beta, system)?;
    let n = x_index.nrows();
    let p = x_index.ncols();
    let l = system.n_basis();
    let mut d_tilde = DMatrix::zeros(n, 2 * l);
    let xs = x_index.as_slice();
    let bs = beta.as_slice();
    for i in 0..n {
        let mut u = 0.0;
        for j in 0..p {
            u += xs[j * n + i] * bs[j];
        }
        let (first, psi) = system.basis_local_values(u);
        let off = arm[i] as usize * l;
        for (r, &v) in psi.iter().enumerate() {
            d_tilde[(i, off + first + r)] = v;
        }
    }
    Ok(DesignMatrices { d_tilde, d })
}

/// The constrained design `D = D̃ Z` alone; the sampler's per-proposal path,
/// which never touches the stacked block.
pub fn build_design_constrained(
    x_index: &DMatrix<f64>,
    arm: &[u8],
    beta: &DVector<f64>,
    system: &SplineSystem,
) -> Result<DMatrix<f64>> {
    let norm = beta.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotUnit { context: "build_design", norm });
    }
    let n = x_index.nrows();
    let p = x_index.ncols();
    let l = system.n_basis();
    let mut d = DMatrix::zeros(n, l);
    let z = system.z_constraint();
    let zs = z.as_slice();
    let xs = x_index.as_slice();
    let bs = beta.as_slice();
    let ds = d.as_mut_slice();
    for i in 0..n {
        let mut u = 0.0;
        for j in 0..p {
            u += xs[j * n + i] * bs[j];
        }
        let (first, psi) = system.basis_local_values(u);
        let off = arm[i] as usize * l + first;
        // row of D: only the four nonzero ψ̃ entries meet Z (column-major)
        for c in 0..l {
            let zcol = &zs[c * 2 * l + off..c * 2 * l + off + psi.len()];
            let mut acc = 0.0;
            for (r, &v) in psi.iter().enumerate() {
                acc += v * zcol[r];
            }
            ds[c * n + i] = acc;
        }
    }
    Ok(d)
}

/// g(xᵀβ, a) at one covariate vector under a parameter state.
pub fn evaluate_g(
    x: &DVector<f64>,
    arm: u8,
    state: &ParameterState,
    system: &SplineSystem,
) -> f64 {
    let u = state.beta.dot(x);
    system.g_from_tilde(u, arm, &state.gamma_tilde)
}
