//! Continuous P1 stress scheme with stress diffusion, the auxiliary trace
//! variable ρ and the Λ_δ transport tensors.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use nalgebra::{Matrix2, Vector2};

use crate::assemble::{
    cell_value_integrals, divergence, load_vector, p1_stiffness, pressure_mass, pressure_weights, skew_convection,
    vector_mass, vector_stiffness, vertex_gradient_integrals,
};
use crate::energy::{audit, entropy_integral, free_energy, EnergyStepReport, EnergyTerms, FreeEnergyVariant, StressRef};
use crate::error::{FenepError, Result};
use crate::mesh::{Point, TriMesh};
use crate::nlsolve::{fd_jacobian, picard_solve, saddle_solve, Block, NonlinearSystem, PicardConfig, SolveReport};
use crate::params::ModelParams;
use crate::quadrature::QuadratureRule;
use crate::space::{
    check_pairing, convection_rule, grad_p1, lumped_weights, velocity_rule, DofMap, SpaceKind, VelocityTable,
};
use crate::sparse::{max_abs, solve, CsrMatrix, Triplets};
use crate::tensor::{
    basis_ddot, basis_tensor, basis_weight, beta_delta, g_delta_prime, k_delta, trace_sq_weighted,
    RegParams, SymTensor2,
};

#[derive(Clone, Debug, PartialEq)]
pub struct StateP1 {
    pub t: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma: Vec<SymTensor2>,
    pub rho: Vec<f64>,
}

/// `Λ̂` for two vertex values of a scalar field: the difference quotient of
/// `H_δ∘G_δ'` over `G_δ'` (equal to `β_δ(a)` when the β-values coincide).
pub fn lambda_scalar(a: f64, c: f64, delta: f64) -> f64 {
    // G_δ' = 1/β_δ and H_δ∘G_δ' = −ln β_δ, so the quotient is
    // β_a ln(1 + x)/x with x = (β_a − β_c)/β_c.
    let (ba, bc) = (beta_delta(a, delta), beta_delta(c, delta));
    let x = (ba - bc) / bc;
    let q = if x.abs() < 1e-4 {
        1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x))
    } else {
        x.ln_1p() / x
    };
    ba * q
}

/// Relative threshold below which the denominator of [`lambda_matrix`] counts as zero.
pub const LAMBDA_DEN_TOL: f64 = 1e-13;

/// Tensor `Λ̂ = (1 − λ) β_δ(a) + λ β_δ(c)` with
/// `Λ̂ : (G_δ'(a) − G_δ'(c)) = tr H_δ(G_δ'(a)) − tr H_δ(G_δ'(c))`.
/// Returns `Λ̂` and `λ`.
pub fn lambda_matrix(a: SymTensor2, c: SymTensor2, delta: f64) -> (SymTensor2, f64) {
    let (ba, bc) = (a.beta_delta(delta), c.beta_delta(delta));
    let d = a.g_delta_prime(delta) - c.g_delta_prime(delta);
    let den = (bc - ba).ddot(d);
    if den.abs() <= LAMBDA_DEN_TOL * (ba.norm() + bc.norm()) {
        return (ba, 0.0);
    }
    let dh = a.trace_h_of_g_prime(delta) - c.trace_h_of_g_prime(delta);
    let lambda = (dh - ba.ddot(d)) / den;
    ((1.0 - lambda) * ba + lambda * bc, lambda)
}

/// `(Bᵀ)⁻¹` and `Bᵀ` for the cell map with columns `P_j − P_0`.
fn cell_frames(mesh: &TriMesh, k: usize) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    let p = mesh.cell_points(k);
    let bt = Matrix2::new(p[1].x - p[0].x, p[1].y - p[0].y, p[2].x - p[0].x, p[2].y - p[0].y);
    let inv = bt
        .try_inverse()
        .ok_or_else(|| FenepError::Mesh(format!("cell {k} has a degenerate affine map")))?;
    Ok((inv, bt))
}

/// Per-cell scalar transport matrix `Λ_{m,p}` of a P1 field with vertex values `vals`.
pub fn lambda_transport_scalar(mesh: &TriMesh, k: usize, vals: [f64; 3], delta: f64) -> Result<Matrix2<f64>> {
    let (inv, bt) = cell_frames(mesh, k)?;
    let hat = [lambda_scalar(vals[1], vals[0], delta), lambda_scalar(vals[2], vals[0], delta)];
    let d = Matrix2::new(hat[0], 0.0, 0.0, hat[1]);
    Ok(inv * d * bt)
}

/// Per-cell tensor transport coefficients `Λ_{m,p}` of a P1 tensor field.
pub fn lambda_transport_tensor(
    mesh: &TriMesh,
    k: usize,
    vals: [SymTensor2; 3],
    delta: f64,
) -> Result<[[SymTensor2; 2]; 2]> {
    let (inv, bt) = cell_frames(mesh, k)?;
    let hat = [lambda_matrix(vals[1], vals[0], delta).0, lambda_matrix(vals[2], vals[0], delta).0];
    Ok(std::array::from_fn(|m| {
        std::array::from_fn(|p| {
            (0..2).fold(SymTensor2::zero(), |acc, j| acc + (inv[(m, j)] * bt[(j, p)]) * hat[j])
        })
    }))
}

/// Vertex bounds of the initial stress datum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialBounds {
    pub eig_min: f64,
    pub eig_max: f64,
    pub trace_max: f64,
}

impl InitialBounds {
    /// Bounds observed at the vertices and the degree-8 quadrature points of every cell.
    pub fn sample(mesh: &TriMesh, sigma0: impl Fn(Point) -> SymTensor2) -> Self {
        let rule = QuadratureRule::order8();
        let mut b = Self {
            eig_min: f64::INFINITY,
            eig_max: f64::NEG_INFINITY,
            trace_max: f64::NEG_INFINITY,
        };
        let mut visit = |s: SymTensor2| {
            b.eig_min = b.eig_min.min(s.min_eig());
            b.eig_max = b.eig_max.max(s.max_eig());
            b.trace_max = b.trace_max.max(s.trace());
        };
        for &v in mesh.vertices() {
            visit(sigma0(v));
        }
        for k in 0..mesh.n_cells() {
            for (l, _) in rule.iter() {
                visit(sigma0(mesh.point_at(k, l)));
            }
        }
        b
    }
}

pub struct SchemeP1Diff {
    mesh: TriMesh,
    velocity: DofMap,
    pressure: DofMap,
    vt: VelocityTable,
    vt_conv: VelocityTable,
    mass: Triplets,
    mass_csr: CsrMatrix,
    stiffness: Triplets,
    stiffness_csr: CsrMatrix,
    div: Triplets,
    div_csr: CsrMatrix,
    pweights: Vec<f64>,
    pnorm: Vec<f64>,
    lumped: Vec<f64>,
    p1_stiff: Triplets,
    /// `∫ λ_p ∇φ_j` merged over the cells around each vertex.
    vertex_grad: Vec<Vec<(usize, Matrix2<f64>)>>,
    cell_values: Vec<Vec<Vector2<f64>>>,
    non_obtuse: bool,
    params: ModelParams,
    picard: PicardConfig,
    dt_warned: AtomicBool,
}

impl SchemeP1Diff {
    pub fn new(mesh: TriMesh, velocity: SpaceKind, params: ModelParams, picard: PicardConfig) -> Result<Self> {
        check_pairing(velocity, SpaceKind::PressureP1)?;
        if !matches!(velocity, SpaceKind::VelocityP2 | SpaceKind::VelocityMini) {
            return Err(FenepError::Argument(format!(
                "the stress-diffusion scheme needs p2 or mini velocity, got {velocity}"
            )));
        }
        params.validate()?;
        picard.validate()?;
        let vel = DofMap::new(&mesh, velocity);
        let pres = DofMap::new(&mesh, SpaceKind::PressureP1);
        let vt = VelocityTable::new(&mesh, &vel, &velocity_rule(velocity));
        let vt_conv = VelocityTable::new(&mesh, &vel, &convection_rule(velocity));
        let nu = vel.n_dofs();
        let mass = vector_mass(&vt, nu);
        let stiffness = vector_stiffness(&vt, nu);
        let div = divergence(&vt, nu, &pres);
        let pweights = pressure_weights(&mesh, &pres);
        let pnorm = pressure_mass(&mesh, &pres).to_csr().diagonal().iter().map(|d| d.sqrt()).collect();
        let mut merged = vec![BTreeMap::<usize, Matrix2<f64>>::new(); mesh.n_vertices()];
        for (k, per_vertex) in vertex_gradient_integrals(&vt).into_iter().enumerate() {
            let cell = mesh.cell(k);
            for (a, mats) in per_vertex.iter().enumerate() {
                for (&d, g) in vt.cells[k].dofs.iter().zip(mats) {
                    *merged[cell[a]].entry(d).or_insert_with(Matrix2::zeros) += g;
                }
            }
        }
        let vertex_grad = merged.into_iter().map(|m| m.into_iter().collect()).collect();
        let non_obtuse = mesh.audit()?.non_obtuse;
        Ok(Self {
            mass_csr: mass.to_csr(),
            stiffness_csr: stiffness.to_csr(),
            div_csr: div.to_csr(),
            lumped: lumped_weights(&mesh),
            p1_stiff: p1_stiffness(&mesh),
            cell_values: cell_value_integrals(&vt),
            vertex_grad,
            non_obtuse,
            mesh,
            velocity: vel,
            pressure: pres,
            vt,
            vt_conv,
            mass,
            stiffness,
            div,
            pweights,
            pnorm,
            params,
            picard,
            dt_warned: AtomicBool::new(false),
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn picard(&self) -> &PicardConfig {
        &self.picard
    }

    pub fn velocity(&self) -> &DofMap {
        &self.velocity
    }

    pub fn pressure(&self) -> &DofMap {
        &self.pressure
    }

    /// Whether the gradient terms of the energy inequality are certified on this mesh.
    pub fn diffusion_certified(&self) -> bool {
        self.non_obtuse
    }

    /// Smoothed projections of the initial data: `(M + Δt₀ K) u = ∫ u0·v`
    /// over discretely divergence-free velocities, `(M_L + Δt₀ K) σ = ∫ σ0 : χ`
    /// componentwise, and `ρ = tr σ` at the vertices. The projected stress
    /// must respect `bounds` at every vertex.
    pub fn project_initial(
        &self,
        u0: impl Fn(Point) -> Vector2<f64>,
        sigma0: impl Fn(Point) -> SymTensor2,
        dt0: f64,
        bounds: &InitialBounds,
    ) -> Result<StateP1> {
        if !(dt0 > 0.0) {
            return Err(FenepError::Argument(format!("projection step must be positive, got {dt0}")));
        }
        if !(bounds.eig_min > 0.0) || bounds.trace_max >= self.params.reg.b {
            return Err(FenepError::Argument(format!(
                "initial stress must be positive definite with trace below b = {}: {bounds:?}",
                self.params.reg.b
            )));
        }
        let nu = self.velocity.n_dofs();
        let mut a = self.mass.clone();
        a.add_block(&self.stiffness, dt0, 0, 0);
        let rhs = load_vector(&self.vt, nu, u0);
        let (u, _) = saddle_solve(
            &a,
            &self.div,
            &self.pweights,
            self.velocity.dirichlet_mask(),
            &rhs,
            &vec![0.0; self.pressure.n_dofs()],
        )?;

        let np = self.mesh.n_vertices();
        let mut s = Triplets::new(np, np);
        for (p, &m) in self.lumped.iter().enumerate() {
            s.push(p, p, m);
        }
        s.add_block(&self.p1_stiff, dt0, 0, 0);
        let s = s.to_csr();
        let rule = QuadratureRule::order8();
        let mut rhs = vec![[0.0; 3]; np];
        for k in 0..self.mesh.n_cells() {
            let cell = self.mesh.cell(k);
            let area = self.mesh.area(k);
            for (l, w) in rule.iter() {
                let v = sigma0(self.mesh.point_at(k, l)).components();
                for a in 0..3 {
                    for c in 0..3 {
                        rhs[cell[a]][c] += w * area * l[a] * v[c];
                    }
                }
            }
        }
        let mut comps = Vec::with_capacity(3);
        for c in 0..3 {
            let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
            comps.push(solve(&s, &b)?);
        }
        let sigma: Vec<SymTensor2> = (0..np)
            .map(|p| SymTensor2::new(comps[0][p], comps[1][p], comps[2][p]))
            .collect();
        let tol = 1e-10 * (1.0 + bounds.eig_max.abs());
        for (p, x) in sigma.iter().enumerate() {
            let (lo, hi, tr) = (x.min_eig(), x.max_eig(), x.trace());
            if lo < bounds.eig_min - tol || hi > bounds.eig_max + tol || tr > bounds.trace_max + tol {
                return Err(FenepError::Argument(format!(
                    "projected initial stress leaves its bounds at vertex {p}: eigenvalues [{lo}, {hi}], trace {tr}, bounds {bounds:?}"
                )));
            }
        }
        let rho = sigma.iter().map(|x| x.trace()).collect();
        Ok(StateP1 {
            t: 0.0,
            u,
            p: vec![0.0; self.pressure.n_dofs()],
            sigma,
            rho,
        })
    }

    pub fn homogeneous_state(&self, sigma: SymTensor2) -> StateP1 {
        let np = self.mesh.n_vertices();
        StateP1 {
            t: 0.0,
            u: vec![0.0; self.velocity.n_dofs()],
            p: vec![0.0; self.pressure.n_dofs()],
            sigma: vec![sigma; np],
            rho: vec![sigma.trace(); np],
        }
    }

    pub fn kinetic_norm_sq(&self, u: &[f64]) -> f64 {
        dot(u, &self.mass_csr.matvec(u))
    }

    pub fn free_energy(&self, state: &StateP1, reg: &RegParams, variant: FreeEnergyVariant) -> Result<f64> {
        let st = StressRef::P1 {
            sigma: &state.sigma,
            rho: &state.rho,
        };
        let e = entropy_integral(&self.mesh, st, reg, variant)?;
        let p = &self.params;
        Ok(free_energy(p.re, p.eps, p.wi, self.kinetic_norm_sq(&state.u), e))
    }

    /// `∫ (tr σ − ρ)`.
    pub fn trace_balance(&self, state: &StateP1) -> f64 {
        self.lumped
            .iter()
            .zip(state.sigma.iter().zip(&state.rho))
            .map(|(m, (s, r))| m * (s.trace() - r))
            .sum()
    }

    /// `max_q |∫ q div u| / ‖q‖` over P1 pressure basis functions.
    pub fn divergence_residual(&self, u: &[f64]) -> f64 {
        self.div_csr
            .matvec(u)
            .iter()
            .zip(&self.pnorm)
            .map(|(b, n)| b.abs() / n)
            .fold(0.0, f64::max)
    }

    /// `C⋆ α^{1+ζ} h²`.
    pub fn convergence_dt_bound(&self) -> f64 {
        self.params.convergence_dt_bound(self.mesh.h())
    }

    pub fn step(&self, prev: &StateP1, n: usize) -> Result<(StateP1, EnergyStepReport)> {
        let dt = self.params.schedule.dt(n);
        let (state, mut rep) = self.step_with(prev, dt, &self.params.reg, None)?;
        rep.step = n + 1;
        Ok((state, rep))
    }

    pub fn step_with(
        &self,
        prev: &StateP1,
        dt: f64,
        reg: &RegParams,
        guess: Option<&StateP1>,
    ) -> Result<(StateP1, EnergyStepReport)> {
        let bound = self.convergence_dt_bound();
        if dt > bound && !self.dt_warned.swap(true, Ordering::Relaxed) {
            warn!("dt = {dt} exceeds the convergence bound C* alpha^(1+zeta) h^2 = {bound:.3e}; the step stays energy stable");
        }
        let (state, solve) = self.solve_step(prev, dt, reg, guess)?;
        if !solve.converged {
            return Err(FenepError::Solver(format!(
                "nonlinear iteration did not converge in {} iterations (t = {}, dt = {dt}): last scaled residual {:.3e} (momentum {:.3e}, continuity {:.3e}, stress {:.3e}, trace {:.3e})",
                solve.iterations,
                prev.t + dt,
                solve.residuals.max(),
                solve.residuals.momentum,
                solve.residuals.continuity,
                solve.residuals.stress,
                solve.residuals.trace
            )));
        }
        let mut rep = self.audit_step(prev, &state, dt, reg)?;
        rep.picard_iters = solve.iterations;
        rep.residual = solve.residuals.max();
        rep.converged = true;
        Ok((state, rep))
    }

    pub fn solve_step(
        &self,
        prev: &StateP1,
        dt: f64,
        reg: &RegParams,
        guess: Option<&StateP1>,
    ) -> Result<(StateP1, SolveReport)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FenepError::Argument(format!("time step must be positive, got {dt}")));
        }
        let sys = StepSystem::new(self, prev, dt, *reg);
        let g = guess.unwrap_or(prev);
        let mut x0 = Vec::with_capacity(sys.len());
        x0.extend_from_slice(&g.u);
        x0.extend_from_slice(&g.p);
        x0.extend(g.sigma.iter().flat_map(|s| s.components()));
        x0.extend_from_slice(&g.rho);
        x0.push(0.0);
        let scale = max_abs(&prev.u)
            .max(max_abs(&prev.p))
            .max(prev.sigma.iter().map(|s| max_abs(&s.components())).fold(0.0, f64::max))
            .max(max_abs(&prev.rho))
            + 1.0;
        let (x, rep) = picard_solve(&sys, &x0, scale, &self.picard)?;
        Ok((sys.unpack(&x, prev.t + dt), rep))
    }

    /// Evaluates every term of the discrete energy inequality between two states.
    pub fn audit_step(&self, prev: &StateP1, next: &StateP1, dt: f64, reg: &RegParams) -> Result<EnergyStepReport> {
        let p = &self.params;
        let du: Vec<f64> = next.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
        let load = self.load(prev.t, next.t);
        let mut relaxation = 0.0;
        for (q, (s, r)) in next.sigma.iter().zip(&next.rho).enumerate() {
            let a = SymTensor2::scaled_identity(reg.trace_coefficient(*r)) - s.g_delta_prime(reg.delta);
            relaxation += self.lumped[q] * trace_sq_weighted(a, s.beta_delta(reg.delta));
        }
        let st = StressRef::P1 {
            sigma: &next.sigma,
            rho: &next.rho,
        };
        let entropy = entropy_integral(&self.mesh, st, reg, FreeEnergyVariant::DiscreteLumped)?;
        let gp: Vec<SymTensor2> = next.sigma.iter().map(|s| s.g_delta_prime(reg.delta)).collect();
        let mut grad_sigma = 0.0;
        let mut grad_rho = 0.0;
        let gq: Vec<f64> = if reg.is_oldroyd_b() {
            Vec::new()
        } else {
            next.rho.iter().map(|r| g_delta_prime(1.0 - r / reg.b, reg.delta)).collect()
        };
        for k in 0..self.mesh.n_cells() {
            let area = self.mesh.area(k);
            for c in 0..3 {
                let vals: Vec<f64> = gp.iter().map(|s| s.component(c)).collect();
                grad_sigma += area * basis_weight(c, c) * grad_p1(&self.mesh, k, &vals).norm_squared();
            }
            if !gq.is_empty() {
                grad_rho += area * grad_p1(&self.mesh, k, &gq).norm_squared();
            }
        }
        let diff = p.alpha * p.eps * reg.delta * reg.delta * dt / (2.0 * p.wi);
        let terms = EnergyTerms {
            f_before: self.free_energy(prev, reg, FreeEnergyVariant::DiscreteLumped)?,
            kinetic: 0.5 * p.re * self.kinetic_norm_sq(&next.u),
            entropy: 0.5 * p.eps / p.wi * entropy,
            kinetic_jump: 0.5 * p.re * self.kinetic_norm_sq(&du),
            viscous: dt * (1.0 - p.eps) * dot(&next.u, &self.stiffness_csr.matvec(&next.u)),
            relaxation: p.eps * dt / (2.0 * p.wi * p.wi) * relaxation,
            diffusion_sigma: diff * grad_sigma,
            diffusion_rho: if reg.is_oldroyd_b() { 0.0 } else { diff * reg.b * grad_rho },
            diffusion_certified: self.non_obtuse,
            forcing: dt * dot(&load, &next.u),
            trace_balance: self.trace_balance(next),
            min_eig_sigma: next.sigma.iter().map(|s| s.min_eig()).fold(f64::INFINITY, f64::min),
            max_trace_sigma: next.sigma.iter().map(|s| s.trace()).fold(f64::NEG_INFINITY, f64::max),
        };
        let mut rep = audit(&terms, self.picard.tol);
        rep.t = next.t;
        Ok(rep)
    }

    fn load(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut b = if self.params.forcing.is_zero() {
            vec![0.0; self.velocity.n_dofs()]
        } else {
            let f = &self.params.forcing;
            load_vector(&self.vt, self.velocity.n_dofs(), |x| f.step_value(x, t0, t1))
        };
        self.velocity.apply_dirichlet(&mut b);
        b
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The coupled step residual in unknowns `[u | p | σ | ρ | λ]`.
struct StepSystem<'a> {
    s: &'a SchemeP1Diff,
    reg: RegParams,
    linear: Triplets,
    linear_csr: CsrMatrix,
    rhs: Vec<f64>,
    /// `∫_K uⁿ⁻¹` per cell.
    u_bar: Vec<Vector2<f64>>,
    nu: usize,
    np: usize,
}

impl<'a> StepSystem<'a> {
    fn new(s: &'a SchemeP1Diff, prev: &StateP1, dt: f64, reg: RegParams) -> Self {
        let p = &s.params;
        let (nu, np) = (s.velocity.n_dofs(), s.mesh.n_vertices());
        let n = nu + np + 3 * np + np + 1;
        let mask = s.velocity.dirichlet_mask();
        let (off_s, off_r) = (nu + np, nu + 4 * np);

        let mut mom = Triplets::new(nu, nu);
        mom.add_block(&s.mass, p.re / dt, 0, 0);
        mom.add_block(&skew_convection(&s.vt_conv, nu, &prev.u), p.re, 0, 0);
        mom.add_block(&s.stiffness, 1.0 - p.eps, 0, 0);
        let mut lin = crate::assemble::constrain(&mom, mask);
        lin.n_rows = n;
        lin.n_cols = n;
        for &(q, j, v) in &s.div.entries {
            if !mask[j] {
                lin.push(nu + q, j, v);
                lin.push(j, nu + q, v);
            }
        }
        for (q, &w) in s.pweights.iter().enumerate() {
            lin.push(nu + q, n - 1, w);
            lin.push(n - 1, nu + q, w);
        }
        let mut rhs = vec![0.0; n];
        let mu = s.mass_csr.matvec(&prev.u);
        let load = s.load(prev.t, prev.t + dt);
        for i in 0..nu {
            if !mask[i] {
                rhs[i] = p.re / dt * mu[i] + load[i];
            }
        }
        for (q, &m) in s.lumped.iter().enumerate() {
            for c in 0..3 {
                let row = off_s + 3 * q + c;
                lin.push(row, row, m / dt * basis_weight(c, c));
                rhs[row] = m / dt * prev.sigma[q].ddot(basis_tensor(c));
            }
            lin.push(off_r + q, off_r + q, m / dt);
            rhs[off_r + q] = m / dt * prev.rho[q];
        }
        for &(i, j, v) in &s.p1_stiff.entries {
            for c in 0..3 {
                lin.push(off_s + 3 * i + c, off_s + 3 * j + c, p.alpha * v * basis_weight(c, c));
            }
            lin.push(off_r + i, off_r + j, p.alpha * v);
        }
        let u_bar: Vec<Vector2<f64>> = s
            .cell_values
            .iter()
            .zip(&s.vt.cells)
            .map(|(vals, cell)| vals.iter().zip(&cell.dofs).map(|(v, &d)| v * prev.u[d]).sum())
            .collect();
        if reg.is_oldroyd_b() {
            // −∫ ρ uⁿ⁻¹·∇χ
            for (k, cell_t) in s.vt.cells.iter().enumerate() {
                let cell = s.mesh.cell(k);
                let g = s.mesh.barycentric_gradients(k);
                let mut w = [Vector2::zeros(); 3];
                for (qi, qp) in cell_t.points.iter().enumerate() {
                    let uq = s.vt.value(k, qi, &prev.u);
                    for (a, wa) in w.iter_mut().enumerate() {
                        *wa += uq * (qp.weight * qp.lambda[a]);
                    }
                }
                for a in 0..3 {
                    for (b, wb) in w.iter().enumerate() {
                        lin.push(off_r + cell[a], off_r + cell[b], -wb.dot(&g[a]));
                    }
                }
            }
        }
        Self {
            s,
            reg,
            linear_csr: lin.to_csr(),
            linear: lin,
            rhs,
            u_bar,
            nu,
            np,
        }
    }

    fn off_s(&self) -> usize {
        self.nu + self.np
    }

    fn off_r(&self) -> usize {
        self.nu + 4 * self.np
    }

    fn sigma_at(&self, x: &[f64], q: usize) -> SymTensor2 {
        let o = self.off_s() + 3 * q;
        SymTensor2::new(x[o], x[o + 1], x[o + 2])
    }

    fn vertex_grad(&self, x: &[f64], q: usize) -> Matrix2<f64> {
        self.s.vertex_grad[q].iter().map(|(d, g)| g * x[*d]).sum()
    }

    /// Vertex maps `[T = k(cβ − I) (3), kβ (3), cβ − I (3), c tr β − 2]`.
    fn vertex_maps(&self, v: [f64; 4]) -> [f64; 10] {
        let sigma = SymTensor2::new(v[0], v[1], v[2]);
        let rho = v[3];
        let beta = sigma.beta_delta(self.reg.delta);
        let c = self.reg.trace_coefficient(rho);
        let k = k_delta(sigma, rho, &self.reg);
        let r = (c * beta - SymTensor2::identity()).components();
        let kb = (k * beta).components();
        [
            k * r[0],
            k * r[1],
            k * r[2],
            kb[0],
            kb[1],
            kb[2],
            r[0],
            r[1],
            r[2],
            c * beta.trace() - 2.0,
        ]
    }

    /// Transport contributions of cell `k` to its 3 × 3 stress rows.
    fn sigma_transport(&self, k: usize, vals: [f64; 9]) -> [f64; 9] {
        let sig: [SymTensor2; 3] = std::array::from_fn(|a| SymTensor2::new(vals[3 * a], vals[3 * a + 1], vals[3 * a + 2]));
        let mut out = [0.0; 9];
        let Ok(lam) = lambda_transport_tensor(&self.s.mesh, k, sig, self.reg.delta) else {
            return out;
        };
        let g = self.s.mesh.barycentric_gradients(k);
        let ub = self.u_bar[k];
        for a in 0..3 {
            let mut t = SymTensor2::zero();
            for m in 0..2 {
                for p in 0..2 {
                    t += (ub[m] * g[a][p]) * lam[m][p];
                }
            }
            for c in 0..3 {
                out[3 * a + c] = -t.ddot(basis_tensor(c));
            }
        }
        out
    }

    /// Transport contributions of cell `k` to its 3 trace rows (finite `b`).
    fn rho_transport(&self, k: usize, rho: [f64; 3]) -> [f64; 3] {
        let b = self.reg.b;
        let q = rho.map(|r| 1.0 - r / b);
        let Ok(lam) = lambda_transport_scalar(&self.s.mesh, k, q, self.reg.delta) else {
            return [0.0; 3];
        };
        let g = self.s.mesh.barycentric_gradients(k);
        let ub = self.u_bar[k];
        std::array::from_fn(|a| b * (ub.transpose() * lam * g[a])[(0, 0)])
    }

    fn cell_sigma(&self, x: &[f64], k: usize) -> [f64; 9] {
        let cell = self.s.mesh.cell(k);
        let mut v = [0.0; 9];
        for a in 0..3 {
            let c = self.sigma_at(x, cell[a]).components();
            v[3 * a..3 * a + 3].copy_from_slice(&c);
        }
        v
    }

    fn cell_rho(&self, x: &[f64], k: usize) -> [f64; 3] {
        self.s.mesh.cell(k).map(|v| x[self.off_r() + v])
    }

    fn unpack(&self, x: &[f64], t: f64) -> StateP1 {
        let (nu, np) = (self.nu, self.np);
        StateP1 {
            t,
            u: x[..nu].to_vec(),
            p: x[nu..nu + np].to_vec(),
            sigma: (0..np).map(|q| self.sigma_at(x, q)).collect(),
            rho: x[self.off_r()..self.off_r() + np].to_vec(),
        }
    }
}

impl NonlinearSystem for StepSystem<'_> {
    fn len(&self) -> usize {
        self.linear.n_rows
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.s.params;
        let mask = self.s.velocity.dirichlet_mask();
        let (off_s, off_r) = (self.off_s(), self.off_r());
        let mut r = self.linear_csr.matvec(x);
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri -= bi;
        }
        for q in 0..self.np {
            let s = self.sigma_at(x, q).components();
            let f = self.vertex_maps([s[0], s[1], s[2], x[off_r + q]]);
            let t = SymTensor2::new(f[0], f[1], f[2]);
            let kb = SymTensor2::new(f[3], f[4], f[5]).to_matrix();
            let rel = SymTensor2::new(f[6], f[7], f[8]);
            for (d, g) in &self.s.vertex_grad[q] {
                if !mask[*d] {
                    r[*d] += p.eps / p.wi * t.ddot_matrix(g);
                }
            }
            let gu = self.vertex_grad(x, q);
            let m = self.s.lumped[q];
            let gkb = gu * kb;
            for c in 0..3 {
                r[off_s + 3 * q + c] += m / p.wi * rel.ddot(basis_tensor(c)) - 2.0 * basis_ddot(c, &gkb);
            }
            r[off_r + q] += m / p.wi * f[9] - 2.0 * (gu.transpose() * kb).trace();
        }
        for k in 0..self.s.mesh.n_cells() {
            let cell = self.s.mesh.cell(k);
            let ts = self.sigma_transport(k, self.cell_sigma(x, k));
            for a in 0..3 {
                for c in 0..3 {
                    r[off_s + 3 * cell[a] + c] += ts[3 * a + c];
                }
            }
            if !self.reg.is_oldroyd_b() {
                let tr = self.rho_transport(k, self.cell_rho(x, k));
                for a in 0..3 {
                    r[off_r + cell[a]] += tr[a];
                }
            }
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let p = &self.s.params;
        let mask = self.s.velocity.dirichlet_mask();
        let (off_s, off_r) = (self.off_s(), self.off_r());
        let mut t = self.linear.clone();
        for q in 0..self.np {
            let s = self.sigma_at(x, q).components();
            let v = [s[0], s[1], s[2], x[off_r + q]];
            let f = self.vertex_maps(v);
            let jac = fd_jacobian(v, |v| self.vertex_maps(v));
            let kb = SymTensor2::new(f[3], f[4], f[5]).to_matrix();
            let gu = self.vertex_grad(x, q);
            let m = self.s.lumped[q];
            let col = |i: usize| if i < 3 { off_s + 3 * q + i } else { off_r + q };
            for (d, g) in &self.s.vertex_grad[q] {
                if mask[*d] {
                    continue;
                }
                for (i, j) in jac.iter().enumerate() {
                    t.push(*d, col(i), p.eps / p.wi * SymTensor2::new(j[0], j[1], j[2]).ddot_matrix(g));
                }
                let gkb = g * kb;
                for c in 0..3 {
                    t.push(off_s + 3 * q + c, *d, -2.0 * basis_ddot(c, &gkb));
                }
                t.push(off_r + q, *d, -2.0 * (g.transpose() * kb).trace());
            }
            for (i, j) in jac.iter().enumerate() {
                let dkb = SymTensor2::new(j[3], j[4], j[5]).to_matrix();
                let drel = SymTensor2::new(j[6], j[7], j[8]);
                let gdkb = gu * dkb;
                for c in 0..3 {
                    let val = m / p.wi * drel.ddot(basis_tensor(c)) - 2.0 * basis_ddot(c, &gdkb);
                    t.push(off_s + 3 * q + c, col(i), val);
                }
                t.push(off_r + q, col(i), m / p.wi * j[9] - 2.0 * (gu.transpose() * dkb).trace());
            }
        }
        for k in 0..self.s.mesh.n_cells() {
            let cell = self.s.mesh.cell(k);
            if self.u_bar[k] == Vector2::zeros() {
                continue;
            }
            let js = fd_jacobian(self.cell_sigma(x, k), |v| self.sigma_transport(k, v));
            for (i, row) in js.iter().enumerate() {
                let colv = off_s + 3 * cell[i / 3] + i % 3;
                for (o, v) in row.iter().enumerate() {
                    t.push(off_s + 3 * cell[o / 3] + o % 3, colv, *v);
                }
            }
            if !self.reg.is_oldroyd_b() {
                let jr = fd_jacobian(self.cell_rho(x, k), |v| self.rho_transport(k, v));
                for (i, row) in jr.iter().enumerate() {
                    for (o, v) in row.iter().enumerate() {
                        t.push(off_r + cell[o], off_r + cell[i], *v);
                    }
                }
            }
        }
        t.to_csr()
    }

    fn block_of(&self, row: usize) -> Block {
        if row < self.nu {
            Block::Momentum
        } else if row < self.off_s() {
            Block::Continuity
        } else if row < self.off_r() {
            Block::Stress
        } else if row < self.off_r() + self.np {
            Block::Trace
        } else {
            Block::Continuity
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::TimeSchedule;
    use approx::assert_relative_eq;

    fn scheme(n: usize, dt: f64, reg: RegParams, alpha: f64) -> SchemeP1Diff {
        let m = TriMesh::structured_unit_square(n).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.5, reg, TimeSchedule::uniform(dt, 5).unwrap())
            .unwrap()
            .with_alpha(alpha)
            .unwrap();
        SchemeP1Diff::new(m, SpaceKind::VelocityP2, p, PicardConfig::default()).unwrap()
    }

    #[test]
    fn lambda_scalar_examples() {
        assert_eq!(lambda_scalar(3.0, 3.0, 0.1), 3.0);
        assert_relative_eq!(lambda_scalar(2.0, 1.0, 0.5), 2.0 * 2f64.ln(), epsilon = 1e-14);
        assert_eq!(lambda_scalar(0.05, 0.025, 0.1), 0.1);
    }

    #[test]
    fn lambda_scalar_nearly_equal_values() {
        let a: f64 = 0.5714285714285714;
        let c = f64::from_bits(a.to_bits() + 1);
        let l = lambda_scalar(a, c, 0.1);
        assert!(l.is_finite());
        assert_relative_eq!(l, a, epsilon = 1e-15);
        let (a, c): (f64, f64) = (1.3, 1.3 + 1e-6);
        let quotient = (crate::tensor::h_of_g_prime(a, 0.1) - crate::tensor::h_of_g_prime(c, 0.1)) / (1.0 / a - 1.0 / c);
        assert_relative_eq!(lambda_scalar(a, c, 0.1), quotient, epsilon = 1e-9);
    }

    #[test]
    fn lambda_matrix_diagonal_case() {
        let (l, lam) = lambda_matrix(SymTensor2::scaled_identity(2.0), SymTensor2::identity(), 0.01);
        assert_relative_eq!(l.xx, 2.0 * 2f64.ln(), epsilon = 1e-13);
        assert_relative_eq!(l.yy, 2.0 * 2f64.ln(), epsilon = 1e-13);
        assert!(l.xy.abs() < 1e-14);
        assert!((0.0..=1.0).contains(&lam));
        let a = SymTensor2::new(1.3, 0.2, 0.7);
        assert_eq!(lambda_matrix(a, a, 0.1).0, a);
    }

    #[test]
    fn constant_field_collapses_to_beta() {
        let m = TriMesh::structured_unit_square(2).unwrap();
        let l = lambda_transport_scalar(&m, 3, [0.7; 3], 0.1).unwrap();
        assert_relative_eq!(l, Matrix2::identity() * 0.7, epsilon = 1e-14);
        let s = SymTensor2::new(0.05, 0.0, 2.0);
        let lt = lambda_transport_tensor(&m, 1, [s; 3], 0.1).unwrap();
        assert_eq!(lt[0][1], SymTensor2::zero());
        assert_relative_eq!(lt[0][0].xx, 0.1, epsilon = 1e-14);
        assert_relative_eq!(lt[1][1].yy, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn homogeneous_relaxation_keeps_trace_balance() {
        let reg = RegParams::new(0.1, 5.0).unwrap();
        let s = scheme(2, 0.2, reg, 0.1);
        let st = s.homogeneous_state(SymTensor2::new(2.0, 0.3, 1.5));
        let (next, rep) = s.step(&st, 0).unwrap();
        assert!(rep.pass && rep.converged, "{rep:?}");
        assert!(max_abs(&next.u) < 1e-12);
        assert!(s.trace_balance(&next).abs() < 1e-12);
        for (x, r) in next.sigma.iter().zip(&next.rho) {
            assert!(max_abs(&(*x - next.sigma[0]).components()) < 1e-12);
            assert_relative_eq!(x.trace(), *r, epsilon = 1e-11);
        }
    }

    #[test]
    fn projection_of_constant_is_exact() {
        let s = scheme(3, 0.1, RegParams::new(0.1, 5.0).unwrap(), 0.1);
        let c = SymTensor2::new(1.2, 0.1, 0.9);
        let b = InitialBounds::sample(s.mesh(), |_| c);
        let st = s.project_initial(|_| Vector2::zeros(), |_| c, 0.1, &b).unwrap();
        assert_eq!(max_abs(&st.u), 0.0);
        for x in &st.sigma {
            assert!(max_abs(&(*x - c).components()) < 1e-12);
        }
    }
}
