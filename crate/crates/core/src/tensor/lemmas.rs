//! Evaluators for the pointwise inequalities satisfied by the regularized
//! functions. Each returns `lhs − rhs` for an inequality `lhs ≥ rhs`, so a
//! value `≥ −slack` means the inequality holds.

use super::{
    beta_delta, g_delta, k_delta, relax_reg, trace_sq_weighted, RegParams, SymTensor2,
};

/// `‖β_δ(φ) G_δ'(φ) − I‖`, which must vanish.
pub fn inverse_identity_error(phi: SymTensor2, delta: f64) -> f64 {
    let prod = phi.beta_delta(delta).matmul(phi.g_delta_prime(delta));
    let id = nalgebra::Matrix2::identity();
    (prod - id).norm()
}

/// `tr(φ − G_δ(φ) − I) ≥ 0`.
pub fn entropy_lower_bound(phi: SymTensor2, delta: f64) -> f64 {
    phi.trace() - phi.trace_g_delta(delta) - 2.0
}

/// Both sides of the concavity sandwich
/// `(φ−ψ):G_δ'(ψ) ≥ tr(G_δ(φ)−G_δ(ψ)) ≥ (φ−ψ):G_δ'(φ)`.
pub fn concavity(phi: SymTensor2, psi: SymTensor2, delta: f64) -> [f64; 2] {
    let diff = phi - psi;
    let mid = phi.trace_g_delta(delta) - psi.trace_g_delta(delta);
    [
        diff.ddot(psi.g_delta_prime(delta)) - mid,
        mid - diff.ddot(phi.g_delta_prime(delta)),
    ]
}

/// `−(φ−ψ):(G_δ'(φ)−G_δ'(ψ)) ≥ δ²‖G_δ'(φ)−G_δ'(ψ)‖²`.
pub fn strong_monotonicity(phi: SymTensor2, psi: SymTensor2, delta: f64) -> f64 {
    let dg = phi.g_delta_prime(delta) - psi.g_delta_prime(delta);
    -(phi - psi).ddot(dg) - delta * delta * dg.norm_sq()
}

/// For `δ ≤ ½`: `tr(φ − G_δ(φ)) ≥ ½‖φ‖`, `tr(φ − G_δ(φ)) ≥ (2δ)⁻¹‖[φ]₋‖`
/// and `φ:(I − G_δ'(φ)) ≥ ½‖φ‖ − 2`.
pub fn coercivity(phi: SymTensor2, delta: f64) -> [f64; 3] {
    let lhs = phi.trace() - phi.trace_g_delta(delta);
    let norm = phi.norm();
    let neg = phi.negative_part().norm();
    let third = phi.ddot(SymTensor2::identity() - phi.g_delta_prime(delta));
    [
        lhs - 0.5 * norm,
        lhs - neg / (2.0 * delta),
        third - (0.5 * norm - 2.0),
    ]
}

/// Scalar bounds for the trace term, `δ ≤ ½`:
/// `−b G_δ(1 − s/b) − s ≥ ½[|s| − 3b]₊` and `(G_δ'(1 − s/b) − 1)s ≥ [|s| − b]₊`.
pub fn trace_term_bounds(s: f64, b: f64, delta: f64) -> [f64; 2] {
    let (g, gp) = g_delta(1.0 - s / b, delta);
    [
        -b * g - s - 0.5 * (s.abs() - 3.0 * b).max(0.0),
        (gp - 1.0) * s - (s.abs() - b).max(0.0),
    ]
}

/// `tr((ηI − G_δ'(φ))² β_δ(φ)) ≥ 0`.
pub fn positive_term(phi: SymTensor2, eta: f64, delta: f64) -> f64 {
    let a = SymTensor2::scaled_identity(eta) - phi.g_delta_prime(delta);
    trace_sq_weighted(a, phi.beta_delta(delta))
}

/// `tr(A_δ(φ,η)² β_δ(φ)) ≥ 0`.
pub fn relaxation_dissipation(phi: SymTensor2, eta: f64, rp: &RegParams) -> f64 {
    trace_sq_weighted(relax_reg(phi, eta, rp), phi.beta_delta(rp.delta))
}

/// `b tr(A_δ² β_δ) ≥ ‖k_δ A_δ β_δ‖²`; only meaningful for finite `b`.
pub fn stress_bound(phi: SymTensor2, eta: f64, rp: &RegParams) -> f64 {
    let a = relax_reg(phi, eta, rp);
    let beta = phi.beta_delta(rp.delta);
    let k = k_delta(phi, eta, rp);
    let lhs = rp.b * trace_sq_weighted(a, beta);
    let rhs = (a.matmul(beta) * k).norm_squared();
    lhs - rhs
}

/// Spectral functions checked for the Lipschitz bound `‖g(φ)−g(ψ)‖ ≤ g_Lip ‖φ−ψ‖`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LipschitzFn {
    Beta,
    NegativePart,
    GDeltaPrime,
}

impl LipschitzFn {
    pub const ALL: [LipschitzFn; 3] = [Self::Beta, Self::NegativePart, Self::GDeltaPrime];

    pub fn apply(self, phi: SymTensor2, delta: f64) -> SymTensor2 {
        match self {
            Self::Beta => phi.map(|x| beta_delta(x, delta)),
            Self::NegativePart => phi.negative_part(),
            Self::GDeltaPrime => phi.g_delta_prime(delta),
        }
    }

    pub fn constant(self, delta: f64) -> f64 {
        match self {
            Self::Beta | Self::NegativePart => 1.0,
            Self::GDeltaPrime => 1.0 / (delta * delta),
        }
    }
}

pub fn lipschitz(g: LipschitzFn, phi: SymTensor2, psi: SymTensor2, delta: f64) -> f64 {
    g.constant(delta) * (phi - psi).norm() - (g.apply(phi, delta) - g.apply(psi, delta)).norm()
}

/// `‖φ‖² ≥ ½(tr|φ|)²` and `(tr|φ|)² ≥ ‖φ‖²`.
pub fn norm_equivalence(phi: SymTensor2) -> [f64; 2] {
    let t = phi.trace_abs();
    let n2 = phi.norm_sq();
    [n2 - 0.5 * t * t, t * t - n2]
}
