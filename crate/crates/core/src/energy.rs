//! Free-energy functionals and the per-step dissipation audit.

use serde::Serialize;

use crate::error::Result;
use crate::mesh::TriMesh;
use crate::quadrature::QuadratureRule;
use crate::space::{eval_p1_tensor, lumped_weights};
use crate::tensor::{entropy_density, entropy_density_exact, RegParams, SymTensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeEnergyVariant {
    /// Unregularized entropy; needs σ positive definite with tr σ < b.
    Exact,
    /// Regularized entropy with η = tr σ, integrated by quadrature.
    Regularized,
    /// Regularized entropy sampled at vertices with η = ρ (P1 stress);
    /// coincides with `Regularized` for piecewise-constant stress.
    DiscreteLumped,
}

/// Stress representation entering the entropy integral.
#[derive(Clone, Copy, Debug)]
pub enum StressRef<'a> {
    P0(&'a [SymTensor2]),
    P1 {
        sigma: &'a [SymTensor2],
        rho: &'a [f64],
    },
}

/// `∫ entropy density` of the stress field (without the `ε/2Wi` factor).
pub fn entropy_integral(
    mesh: &TriMesh,
    stress: StressRef<'_>,
    reg: &RegParams,
    variant: FreeEnergyVariant,
) -> Result<f64> {
    let density = |s: SymTensor2, eta: f64| -> Result<f64> {
        match variant {
            FreeEnergyVariant::Exact => entropy_density_exact(s, reg.b),
            _ => Ok(entropy_density(s, eta, reg)),
        }
    };
    match stress {
        StressRef::P0(sigma) => {
            let mut total = 0.0;
            for (k, s) in sigma.iter().enumerate() {
                total += mesh.area(k) * density(*s, s.trace())?;
            }
            Ok(total)
        }
        StressRef::P1 { sigma, rho } => match variant {
            FreeEnergyVariant::DiscreteLumped => Ok(lumped_weights(mesh)
                .iter()
                .zip(sigma.iter().zip(rho))
                .map(|(m, (s, r))| m * entropy_density(*s, *r, reg))
                .sum()),
            _ => {
                let rule = QuadratureRule::order4();
                let mut total = 0.0;
                for k in 0..mesh.n_cells() {
                    for (l, w) in rule.iter() {
                        let s = eval_p1_tensor(mesh, k, l, sigma);
                        total += w * mesh.area(k) * density(s, s.trace())?;
                    }
                }
                Ok(total)
            }
        },
    }
}

/// `F = Re/2 ‖u‖² + ε/(2 Wi) ∫ entropy`.
pub fn free_energy(re: f64, eps: f64, wi: f64, u_norm_sq: f64, entropy: f64) -> f64 {
    0.5 * re * u_norm_sq + 0.5 * eps / wi * entropy
}

/// Audit slack `max(1e-8, 100 tol (|F_before| + |F_after| + 1))`.
pub fn slack(picard_tol: f64, f_before: f64, f_after: f64) -> f64 {
    (100.0 * picard_tol * (f_before.abs() + f_after.abs() + 1.0)).max(1e-8)
}

/// Terms of the discrete energy inequality for one step, as computed by a
/// scheme from its previous and new states.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyTerms {
    pub f_before: f64,
    pub kinetic: f64,
    pub entropy: f64,
    pub kinetic_jump: f64,
    pub viscous: f64,
    pub relaxation: f64,
    pub diffusion_sigma: f64,
    pub diffusion_rho: f64,
    /// Whether the diffusion terms are covered by the mesh hypothesis.
    pub diffusion_certified: bool,
    pub forcing: f64,
    pub trace_balance: f64,
    pub min_eig_sigma: f64,
    pub max_trace_sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnergyStepReport {
    pub step: usize,
    pub t: f64,
    pub f_before: f64,
    pub f_after: f64,
    pub kinetic: f64,
    pub entropy: f64,
    pub kinetic_jump: f64,
    pub viscous: f64,
    pub relaxation: f64,
    pub diffusion_sigma: f64,
    pub diffusion_rho: f64,
    pub diffusion_certified: bool,
    pub forcing: f64,
    pub slack: f64,
    pub trace_balance: f64,
    pub min_eig_sigma: f64,
    pub max_trace_sigma: f64,
    pub picard_iters: usize,
    pub residual: f64,
    pub converged: bool,
    pub pass: bool,
}

impl EnergyStepReport {
    /// Sum of the certified dissipation terms on the left-hand side.
    pub fn dissipation(&self) -> f64 {
        let diffusion = if self.diffusion_certified {
            self.diffusion_sigma + self.diffusion_rho
        } else {
            0.0
        };
        self.kinetic_jump + self.viscous + self.relaxation + diffusion
    }

    /// `F_before + forcing + slack − (F_after + dissipation)`; nonnegative iff the step passes.
    pub fn margin(&self) -> f64 {
        self.f_before + self.forcing + self.slack - (self.f_after + self.dissipation())
    }
}

/// Evaluates the energy inequality
/// `F_after + dissipation ≤ F_before + forcing + slack`.
pub fn audit(terms: &EnergyTerms, picard_tol: f64) -> EnergyStepReport {
    let f_after = terms.kinetic + terms.entropy;
    let mut rep = EnergyStepReport {
        f_before: terms.f_before,
        f_after,
        kinetic: terms.kinetic,
        entropy: terms.entropy,
        kinetic_jump: terms.kinetic_jump,
        viscous: terms.viscous,
        relaxation: terms.relaxation,
        diffusion_sigma: terms.diffusion_sigma,
        diffusion_rho: terms.diffusion_rho,
        diffusion_certified: terms.diffusion_certified,
        forcing: terms.forcing,
        slack: slack(picard_tol, terms.f_before, f_after),
        trace_balance: terms.trace_balance,
        min_eig_sigma: terms.min_eig_sigma,
        max_trace_sigma: terms.max_trace_sigma,
        ..Default::default()
    };
    rep.pass = rep.margin() >= 0.0 && rep.margin().is_finite();
    rep
}

/// Summed form of a sequence of step reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Telescope {
    pub f_initial: f64,
    pub f_final: f64,
    pub dissipation: f64,
    pub forcing: f64,
    pub slack: f64,
    pub pass: bool,
}

/// `F(end) + Σ dissipation ≤ F(0) + Σ forcing + Σ slack`.
pub fn telescope(reports: &[EnergyStepReport]) -> Telescope {
    let Some(first) = reports.first() else {
        return Telescope {
            pass: true,
            ..Default::default()
        };
    };
    let last = reports.last().expect("nonempty");
    let dissipation = reports.iter().map(EnergyStepReport::dissipation).sum();
    let forcing = reports.iter().map(|r| r.forcing).sum();
    let slack = reports.iter().map(|r| r.slack).sum();
    let t = Telescope {
        f_initial: first.f_before,
        f_final: last.f_after,
        dissipation,
        forcing,
        slack,
        pass: false,
    };
    Telescope {
        pass: t.f_final + t.dissipation <= t.f_initial + t.forcing + t.slack,
        ..t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn free_energy_at_identity() {
        let m = TriMesh::structured_unit_square(2).unwrap();
        let reg = RegParams::new(0.1, 5.0).unwrap();
        let sigma = vec![SymTensor2::identity(); m.n_cells()];
        let e = entropy_integral(&m, StressRef::P0(&sigma), &reg, FreeEnergyVariant::Regularized).unwrap();
        let f = free_energy(1.0, 0.5, 1.0, 0.0, e);
        assert_relative_eq!(f, -0.25 * (5.0 * 0.6f64.ln() + 2.0), epsilon = 1e-13);
        assert_relative_eq!(f, 0.138532, epsilon = 1e-6);

        let ob = RegParams::oldroyd_b(0.1).unwrap();
        let e = entropy_integral(&m, StressRef::P0(&sigma), &ob, FreeEnergyVariant::Regularized).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn variants_agree_in_unregularized_range() {
        let m = TriMesh::structured_unit_square(2).unwrap();
        let reg = RegParams::new(0.05, 5.0).unwrap();
        let sigma: Vec<_> = m
            .vertices()
            .iter()
            .map(|p| SymTensor2::new(1.0 + 0.2 * p.x, 0.1 * p.y, 0.8))
            .collect();
        let rho: Vec<f64> = sigma.iter().map(|s| s.trace()).collect();
        let st = StressRef::P1 { sigma: &sigma, rho: &rho };
        let ex = entropy_integral(&m, st, &reg, FreeEnergyVariant::Exact).unwrap();
        let rg = entropy_integral(&m, st, &reg, FreeEnergyVariant::Regularized).unwrap();
        assert_relative_eq!(ex, rg, epsilon = 1e-13);
        assert!(entropy_integral(&m, st, &reg, FreeEnergyVariant::DiscreteLumped).unwrap() > 0.0);
    }

    #[test]
    fn exact_variant_rejects_inadmissible_stress() {
        let m = TriMesh::structured_unit_square(1).unwrap();
        let reg = RegParams::new(0.1, 5.0).unwrap();
        let sigma = vec![SymTensor2::diag(3.0, 3.0); 2];
        assert!(entropy_integral(&m, StressRef::P0(&sigma), &reg, FreeEnergyVariant::Exact).is_err());
    }

    #[test]
    fn audit_pass_logic() {
        let t = EnergyTerms {
            f_before: 1.0,
            kinetic: 0.2,
            entropy: 0.5,
            kinetic_jump: 0.1,
            viscous: 0.1,
            relaxation: 0.05,
            ..Default::default()
        };
        let r = audit(&t, 1e-10);
        assert!(r.pass);
        assert_relative_eq!(r.margin(), 1.0 + 2.7e-8 - 0.95, epsilon = 1e-15);
        let bad = EnergyTerms { entropy: 0.9, ..t };
        assert!(!audit(&bad, 1e-10).pass);
        let tel = telescope(&[r.clone(), r]);
        assert_relative_eq!(tel.dissipation, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uncertified_diffusion_excluded() {
        let t = EnergyTerms {
            f_before: 1.0,
            kinetic: 0.9,
            diffusion_sigma: 5.0,
            diffusion_certified: false,
            ..Default::default()
        };
        assert!(audit(&t, 1e-10).pass);
        assert!(!audit(&EnergyTerms { diffusion_certified: true, ..t }, 1e-10).pass);
    }

    #[test]
    fn slack_floor() {
        assert_eq!(slack(1e-10, 0.0, 0.0), 1e-8);
        assert_relative_eq!(slack(1e-6, 1.0, 2.0), 4e-4, epsilon = 1e-15);
    }
}
