//! Symmetric 2×2 tensor calculus and the regularized scalar/matrix functions
//! used by both discretizations.
//!
//! A spectral function `g(φ)` is defined through the eigen-decomposition
//! `φ = O D Oᵀ` as `O g(D) Oᵀ`. All regularized functions are total on the
//! real line (or on symmetric matrices); only the unregularized logarithm and
//! the classic FENE-P relaxation term can fail.

pub mod lemmas;

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{FenepError, Result};

/// Symmetric 2×2 tensor stored by its three independent entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymTensor2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymTensor2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    pub const fn scaled_identity(c: f64) -> Self {
        Self::new(c, 0.0, c)
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Self::new(a, 0.0, b)
    }

    /// Symmetric part of a general 2×2 matrix.
    pub fn sym_part(m: &Matrix2<f64>) -> Self {
        Self::new(m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)])
    }

    pub fn to_matrix(self) -> Matrix2<f64> {
        Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }

    /// Component `c` in the storage order (xx, xy, yy).
    pub fn component(self, c: usize) -> f64 {
        match c {
            0 => self.xx,
            1 => self.xy,
            2 => self.yy,
            _ => panic!("SymTensor2 has three components, got index {c}"),
        }
    }

    pub fn from_components(c: [f64; 3]) -> Self {
        Self::new(c[0], c[1], c[2])
    }

    pub fn components(self) -> [f64; 3] {
        [self.xx, self.xy, self.yy]
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Frobenius inner product `φ : ψ`.
    pub fn ddot(self, other: Self) -> f64 {
        self.xx * other.xx + 2.0 * self.xy * other.xy + self.yy * other.yy
    }

    /// `φ : M` for a general matrix `M`.
    pub fn ddot_matrix(self, m: &Matrix2<f64>) -> f64 {
        self.xx * m[(0, 0)] + self.xy * (m[(0, 1)] + m[(1, 0)]) + self.yy * m[(1, 1)]
    }

    pub fn norm_sq(self) -> f64 {
        self.ddot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    /// Matrix product `φ ψ` (not symmetric in general).
    pub fn matmul(self, other: Self) -> Matrix2<f64> {
        self.to_matrix() * other.to_matrix()
    }

    pub fn eig(self) -> Result<SpectralDecomp> {
        eig_sym(self)
    }

    /// Applies a real function to the spectrum.
    pub fn map<F: Fn(f64) -> f64>(self, g: F) -> Self {
        let (vals, c, s) = self.eig_angle();
        compose(g(vals[0]), g(vals[1]), c, s)
    }

    /// Applies a partial function to the spectrum, propagating its error.
    pub fn try_map<F: Fn(f64) -> Result<f64>>(self, g: F) -> Result<Self> {
        if !self.is_finite() {
            return Err(non_finite(self));
        }
        let (vals, c, s) = self.eig_angle();
        Ok(compose(g(vals[0])?, g(vals[1])?, c, s))
    }

    /// Sum of the absolute eigenvalues, `tr|φ|`.
    pub fn trace_abs(self) -> f64 {
        let (vals, _, _) = self.eig_angle();
        vals[0].abs() + vals[1].abs()
    }

    pub fn min_eig(self) -> f64 {
        self.eig_angle().0[0]
    }

    pub fn max_eig(self) -> f64 {
        self.eig_angle().0[1]
    }

    /// Negative part `[φ]₋ = min(φ, 0)` taken spectrally.
    pub fn negative_part(self) -> Self {
        self.map(|x| x.min(0.0))
    }

    pub fn positive_part(self) -> Self {
        self.map(|x| x.max(0.0))
    }

    /// Ascending eigenvalues with the rotation (cos θ, sin θ) of the
    /// eigenvector belonging to the larger one.
    fn eig_angle(self) -> ([f64; 2], f64, f64) {
        let (a, b, c) = (self.xx, self.xy, self.yy);
        if b == 0.0 {
            return if a <= c {
                ([a, c], 0.0, 1.0)
            } else {
                ([c, a], 1.0, 0.0)
            };
        }
        let mean = 0.5 * (a + c);
        let half_diff = 0.5 * (a - c);
        let radius = half_diff.hypot(b);
        let (s, co) = (0.5 * b.atan2(half_diff)).sin_cos();
        let mut hi = mean + radius;
        let mut lo = mean - radius;
        // Recover the smaller-magnitude eigenvalue from the determinant.
        let det = a * c - b * b;
        if mean >= 0.0 && hi != 0.0 {
            lo = det / hi;
        } else if mean < 0.0 && lo != 0.0 {
            hi = det / lo;
        }
        ([lo, hi], co, s)
    }
}

fn compose(g_lo: f64, g_hi: f64, c: f64, s: f64) -> SymTensor2 {
    // v_hi = (c, s), v_lo = (-s, c)
    SymTensor2::new(
        g_lo * s * s + g_hi * c * c,
        (g_hi - g_lo) * c * s,
        g_lo * c * c + g_hi * s * s,
    )
}

fn non_finite(phi: SymTensor2) -> FenepError {
    FenepError::Domain(format!("non-finite tensor entries {phi}"))
}

impl fmt::Display for SymTensor2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.xx, self.xy, self.xy, self.yy)
    }
}

impl Add for SymTensor2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }
}

impl Sub for SymTensor2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }
}

impl Neg for SymTensor2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.xx, -self.xy, -self.yy)
    }
}

impl Mul<f64> for SymTensor2 {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        Self::new(c * self.xx, c * self.xy, c * self.yy)
    }
}

impl Mul<SymTensor2> for f64 {
    type Output = SymTensor2;
    fn mul(self, t: SymTensor2) -> SymTensor2 {
        t * self
    }
}

impl AddAssign for SymTensor2 {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for SymTensor2 {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

/// Eigen-decomposition `φ = O diag(λ) Oᵀ` with ascending eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralDecomp {
    pub eigvals: [f64; 2],
    /// Columns are the orthonormal eigenvectors.
    pub eigvecs: Matrix2<f64>,
}

impl SpectralDecomp {
    pub fn reconstruct(&self) -> SymTensor2 {
        let d = Matrix2::new(self.eigvals[0], 0.0, 0.0, self.eigvals[1]);
        SymTensor2::sym_part(&(self.eigvecs * d * self.eigvecs.transpose()))
    }
}

/// Closed-form eigen-decomposition of a symmetric 2×2 tensor.
///
/// Eigenvectors are normalized so that the first nonzero component of each
/// column is positive; a repeated eigenvalue returns the identity basis.
pub fn eig_sym(phi: SymTensor2) -> Result<SpectralDecomp> {
    if !phi.is_finite() {
        return Err(non_finite(phi));
    }
    let (vals, c, s) = phi.eig_angle();
    if vals[0] == vals[1] {
        return Ok(SpectralDecomp {
            eigvals: vals,
            eigvecs: Matrix2::identity(),
        });
    }
    let fix = |x: f64, y: f64| {
        if x > 0.0 || (x == 0.0 && y > 0.0) {
            (x, y)
        } else {
            (-x, -y)
        }
    };
    let (lx, ly) = fix(-s, c);
    let (hx, hy) = fix(c, s);
    Ok(SpectralDecomp {
        eigvals: vals,
        eigvecs: Matrix2::new(lx, hx, ly, hy),
    })
}

/// Regularization parameter δ together with the extensibility `b`.
///
/// `b = +∞` selects the Oldroyd-B limit, in which every `b`-dependent term
/// takes its formal limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub delta: f64,
    pub b: f64,
}

impl RegParams {
    pub fn new(delta: f64, b: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(FenepError::Argument(format!(
                "delta must lie in (0, 1/2], got {delta}"
            )));
        }
        if !(b > 0.0) || b.is_nan() {
            return Err(FenepError::Argument(format!(
                "extensibility b must be positive, got {b}"
            )));
        }
        if delta > b {
            return Err(FenepError::Argument(format!(
                "delta = {delta} exceeds b = {b}"
            )));
        }
        Ok(Self { delta, b })
    }

    pub fn oldroyd_b(delta: f64) -> Result<Self> {
        Self::new(delta, f64::INFINITY)
    }

    pub fn is_oldroyd_b(&self) -> bool {
        self.b.is_infinite()
    }

    /// The scalar coefficient `G_δ'(1 − η/b)` (equal to 1 for Oldroyd-B).
    pub fn trace_coefficient(&self, eta: f64) -> f64 {
        if self.is_oldroyd_b() {
            1.0
        } else {
            g_delta(1.0 - eta / self.b, self.delta).1
        }
    }

    /// Derivative of [`Self::trace_coefficient`] with respect to η.
    pub fn trace_coefficient_slope(&self, eta: f64) -> f64 {
        if self.is_oldroyd_b() {
            return 0.0;
        }
        let s = 1.0 - eta / self.b;
        if s > self.delta {
            1.0 / (self.b * s * s)
        } else {
            0.0
        }
    }
}

/// `G_δ(s)` and `G_δ'(s)`: the logarithm for `s ≥ δ`, extended linearly below.
pub fn g_delta(s: f64, delta: f64) -> (f64, f64) {
    if s >= delta {
        (s.ln(), 1.0 / s)
    } else {
        (s / delta + delta.ln() - 1.0, 1.0 / delta)
    }
}

pub fn g_delta_value(s: f64, delta: f64) -> f64 {
    g_delta(s, delta).0
}

pub fn g_delta_prime(s: f64, delta: f64) -> f64 {
    g_delta(s, delta).1
}

/// `β_δ(s) = max(s, δ)`, the inverse of `G_δ'`.
pub fn beta_delta(s: f64, delta: f64) -> f64 {
    s.max(delta)
}

/// `β_δ^b(s) = min(β_δ(s), b)`.
pub fn beta_delta_b(s: f64, rp: &RegParams) -> f64 {
    beta_delta(s, rp.delta).min(rp.b)
}

/// `H_δ(s)`: the logarithm on `(0, 1/δ]`, extended linearly above.
pub fn h_delta(s: f64, delta: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(FenepError::Domain(format!(
            "H_delta is defined for positive arguments only, got {s}"
        )));
    }
    Ok(h_delta_positive(s, delta))
}

fn h_delta_positive(s: f64, delta: f64) -> f64 {
    if s <= 1.0 / delta {
        s.ln()
    } else {
        delta * s - delta.ln() - 1.0
    }
}

/// `H_δ(G_δ'(s))`, total on the real line since `G_δ' > 0`.
pub fn h_of_g_prime(s: f64, delta: f64) -> f64 {
    h_delta_positive(g_delta_prime(s, delta), delta)
}

impl SymTensor2 {
    pub fn g_delta(self, delta: f64) -> Self {
        self.map(|x| g_delta_value(x, delta))
    }

    pub fn g_delta_prime(self, delta: f64) -> Self {
        self.map(|x| g_delta_prime(x, delta))
    }

    pub fn beta_delta(self, delta: f64) -> Self {
        self.map(|x| beta_delta(x, delta))
    }

    /// `tr H_δ(G_δ'(φ))`.
    pub fn trace_h_of_g_prime(self, delta: f64) -> f64 {
        let (vals, _, _) = self.eig_angle();
        h_of_g_prime(vals[0], delta) + h_of_g_prime(vals[1], delta)
    }

    /// `tr G_δ(φ)`.
    pub fn trace_g_delta(self, delta: f64) -> f64 {
        let (vals, _, _) = self.eig_angle();
        g_delta_value(vals[0], delta) + g_delta_value(vals[1], delta)
    }
}

/// Classic FENE-P relaxation tensor `A(φ) = (1 − tr φ/b)⁻¹ I − φ⁻¹`.
pub fn relax_classic(phi: SymTensor2, b: f64) -> Result<SymTensor2> {
    let dec = eig_sym(phi)?;
    if dec.eigvals[0] <= 0.0 {
        return Err(FenepError::Domain(format!(
            "relaxation tensor needs a positive definite argument, smallest eigenvalue {}",
            dec.eigvals[0]
        )));
    }
    let coef = if b.is_infinite() {
        1.0
    } else {
        let tr = phi.trace();
        if tr >= b {
            return Err(FenepError::Domain(format!(
                "trace {tr} is not below the extensibility b = {b}"
            )));
        }
        1.0 / (1.0 - tr / b)
    };
    let inv = phi.try_map(|x| Ok(1.0 / x))?;
    Ok(SymTensor2::scaled_identity(coef) - inv)
}

/// Regularized relaxation tensor `A_δ(φ, η) = G_δ'(1 − η/b) I − G_δ'(φ)`.
pub fn relax_reg(phi: SymTensor2, eta: f64, rp: &RegParams) -> SymTensor2 {
    SymTensor2::scaled_identity(rp.trace_coefficient(eta)) - phi.g_delta_prime(rp.delta)
}

/// Test tensor `E_c` for storage component `c`: diag(1,0), the symmetric
/// off-diagonal unit, or diag(0,1).
pub fn basis_tensor(c: usize) -> SymTensor2 {
    match c {
        0 => SymTensor2::new(1.0, 0.0, 0.0),
        1 => SymTensor2::new(0.0, 1.0, 0.0),
        2 => SymTensor2::new(0.0, 0.0, 1.0),
        _ => panic!("component index {c} out of range"),
    }
}

/// `E_c : M` for a general 2×2 matrix `M`.
pub fn basis_ddot(c: usize, m: &Matrix2<f64>) -> f64 {
    match c {
        0 => m[(0, 0)],
        1 => m[(0, 1)] + m[(1, 0)],
        2 => m[(1, 1)],
        _ => panic!("component index {c} out of range"),
    }
}

/// `E_c : E_d` (1, 2, 1 on the diagonal, 0 off it).
pub fn basis_weight(c: usize, d: usize) -> f64 {
    match (c, d) {
        (1, 1) => 2.0,
        (c, d) if c == d => 1.0,
        _ => 0.0,
    }
}

/// `tr(A² B)` for symmetric `A`, `B`.
pub fn trace_sq_weighted(a: SymTensor2, b: SymTensor2) -> f64 {
    (a.matmul(a) * b.to_matrix()).trace()
}

/// Stress-scaling factor `k_δ(φ, η) = sqrt(β_δ^b(η) / tr β_δ(φ))`; 1 for Oldroyd-B.
pub fn k_delta(phi: SymTensor2, eta: f64, rp: &RegParams) -> f64 {
    if rp.is_oldroyd_b() {
        return 1.0;
    }
    (beta_delta_b(eta, rp) / phi.beta_delta(rp.delta).trace()).sqrt()
}

/// Regularized relative-entropy density
/// `−[b G_δ(1 − η/b) + tr(G_δ(φ) + I)]`.
///
/// In the Oldroyd-B limit the `b`-term is replaced by `tr φ`, giving
/// `tr(φ − G_δ(φ) − I)`.
pub fn entropy_density(phi: SymTensor2, eta: f64, rp: &RegParams) -> f64 {
    let tensor_part = phi.trace_g_delta(rp.delta) + 2.0;
    if rp.is_oldroyd_b() {
        phi.trace() - tensor_part
    } else {
        -(rp.b * g_delta_value(1.0 - eta / rp.b, rp.delta) + tensor_part)
    }
}

/// Unregularized entropy density `−[b ln(1 − tr φ/b) + tr(ln φ + I)]`.
pub fn entropy_density_exact(phi: SymTensor2, b: f64) -> Result<f64> {
    let dec = eig_sym(phi)?;
    if dec.eigvals[0] <= 0.0 {
        return Err(FenepError::Domain(format!(
            "entropy needs a positive definite tensor, smallest eigenvalue {}",
            dec.eigvals[0]
        )));
    }
    let log_part = dec.eigvals[0].ln() + dec.eigvals[1].ln() + 2.0;
    if b.is_infinite() {
        return Ok(phi.trace() - log_part);
    }
    let tr = phi.trace();
    if tr >= b {
        return Err(FenepError::Domain(format!(
            "trace {tr} is not below the extensibility b = {b}"
        )));
    }
    Ok(-(b * (1.0 - tr / b).ln() + log_part))
}
