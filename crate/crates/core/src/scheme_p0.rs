//! Piecewise-constant stress scheme with discontinuous upwind transport,
//! and its δ → 0 continuation.

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::assemble::{
    cell_gradient_integrals, constrain, divergence, load_vector, pressure_mass, pressure_weights,
    skew_convection, vector_mass, vector_stiffness,
};
use crate::energy::{audit, entropy_integral, free_energy, EnergyStepReport, EnergyTerms, FreeEnergyVariant, StressRef};
use crate::error::{FenepError, Result};
use crate::mesh::{Edge, Point, TriMesh};
use crate::nlsolve::{fd_jacobian, picard_solve, saddle_solve, Block, NonlinearSystem, PicardConfig, SolveReport};
use crate::params::ModelParams;
use crate::quadrature::{gauss3_unit, QuadratureRule};
use crate::space::{check_pairing, convection_rule, velocity_rule, DofMap, SpaceKind, VelocityTable};
use crate::sparse::{max_abs, CsrMatrix, Triplets};
use crate::tensor::{basis_ddot, basis_tensor, basis_weight, trace_sq_weighted, RegParams, SymTensor2};

/// Fluxes below this magnitude count as zero when splitting an edge.
pub const FLUX_ZERO: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct StateP0 {
    pub t: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma: Vec<SymTensor2>,
}

/// Positive and negative parts of `∫_E w·n ds` over an interior edge, with
/// `n` pointing from `left` to `right`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeFlux {
    pub edge: usize,
    pub left: usize,
    pub right: usize,
    pub plus: f64,
    pub minus: f64,
}

impl EdgeFlux {
    pub fn net(&self) -> f64 {
        self.plus - self.minus
    }
}

pub struct SchemeP0 {
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
    grad_int: Vec<Vec<Matrix2<f64>>>,
    params: ModelParams,
    picard: PicardConfig,
}

impl SchemeP0 {
    pub fn new(mesh: TriMesh, velocity: SpaceKind, params: ModelParams, picard: PicardConfig) -> Result<Self> {
        check_pairing(velocity, SpaceKind::PressureP0)?;
        if !matches!(velocity, SpaceKind::VelocityP2 | SpaceKind::VelocityP2Reduced) {
            return Err(FenepError::Argument(format!(
                "the piecewise-constant stress scheme needs p2 or p2-reduced velocity, got {velocity}"
            )));
        }
        params.validate()?;
        picard.validate()?;
        let vel = DofMap::new(&mesh, velocity);
        let pres = DofMap::new(&mesh, SpaceKind::PressureP0);
        let vt = VelocityTable::new(&mesh, &vel, &velocity_rule(velocity));
        let vt_conv = VelocityTable::new(&mesh, &vel, &convection_rule(velocity));
        let nu = vel.n_dofs();
        let mass = vector_mass(&vt, nu);
        let stiffness = vector_stiffness(&vt, nu);
        let div = divergence(&vt, nu, &pres);
        let pweights = pressure_weights(&mesh, &pres);
        let pnorm = pressure_mass(&mesh, &pres).to_csr().diagonal().iter().map(|d| d.sqrt()).collect();
        let grad_int = cell_gradient_integrals(&vt);
        Ok(Self {
            mass_csr: mass.to_csr(),
            stiffness_csr: stiffness.to_csr(),
            div_csr: div.to_csr(),
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
            grad_int,
            params,
            picard,
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

    /// `σ⁰` = cell averages of `sigma0`; `u⁰` = L² projection of `u0` onto
    /// the discretely divergence-free velocities.
    pub fn initial_state(
        &self,
        u0: impl Fn(Point) -> Vector2<f64>,
        sigma0: impl Fn(Point) -> SymTensor2,
    ) -> Result<StateP0> {
        let rule = QuadratureRule::order8();
        let sigma = (0..self.mesh.n_cells())
            .map(|k| {
                rule.iter()
                    .fold(SymTensor2::zero(), |acc, (l, w)| acc + w * sigma0(self.mesh.point_at(k, l)))
            })
            .collect();
        let rhs = load_vector(&self.vt, self.velocity.n_dofs(), u0);
        let (u, _) = saddle_solve(
            &self.mass,
            &self.div,
            &self.pweights,
            self.velocity.dirichlet_mask(),
            &rhs,
            &vec![0.0; self.pressure.n_dofs()],
        )?;
        Ok(StateP0 {
            t: 0.0,
            u,
            p: vec![0.0; self.pressure.n_dofs()],
            sigma,
        })
    }

    /// Fluid at rest with spatially constant stress.
    pub fn homogeneous_state(&self, sigma: SymTensor2) -> StateP0 {
        StateP0 {
            t: 0.0,
            u: vec![0.0; self.velocity.n_dofs()],
            p: vec![0.0; self.pressure.n_dofs()],
            sigma: vec![sigma; self.mesh.n_cells()],
        }
    }

    pub fn kinetic_norm_sq(&self, u: &[f64]) -> f64 {
        dot(u, &self.mass_csr.matvec(u))
    }

    pub fn free_energy(&self, state: &StateP0, reg: &RegParams, variant: FreeEnergyVariant) -> Result<f64> {
        let e = entropy_integral(&self.mesh, StressRef::P0(&state.sigma), reg, variant)?;
        let p = &self.params;
        Ok(free_energy(p.re, p.eps, p.wi, self.kinetic_norm_sq(&state.u), e))
    }

    /// `max_q |∫ q div u| / ‖q‖` over pressure basis functions.
    pub fn divergence_residual(&self, u: &[f64]) -> f64 {
        self.div_csr
            .matvec(u)
            .iter()
            .zip(&self.pnorm)
            .map(|(b, n)| b.abs() / n)
            .fold(0.0, f64::max)
    }

    fn edge_normal_velocity(&self, e: &Edge, w: &[f64], t: f64) -> f64 {
        let k = e.left;
        let cell = self.mesh.cell(k);
        let mut l = [0.0; 3];
        for (i, &v) in cell.iter().enumerate() {
            if v == e.vertices[0] {
                l[i] = 1.0 - t;
            } else if v == e.vertices[1] {
                l[i] = t;
            }
        }
        self.velocity.eval_vector(k, l, w).dot(&e.normal)
    }

    /// Upwind fluxes of `w` through every interior edge. `w·n` is quadratic
    /// along the edge; it is split at its sign changes and each piece is
    /// integrated by three-point Gauss.
    pub fn upwind_fluxes(&self, w: &[f64]) -> Vec<EdgeFlux> {
        let gauss = gauss3_unit();
        let mut out = Vec::with_capacity(self.mesh.n_internal_edges());
        for (idx, e) in self.mesh.edges().iter().enumerate() {
            let Some(right) = e.right else { continue };
            let f0 = self.edge_normal_velocity(e, w, 0.0);
            let fh = self.edge_normal_velocity(e, w, 0.5);
            let f1 = self.edge_normal_velocity(e, w, 1.0);
            let a = 2.0 * f1 + 2.0 * f0 - 4.0 * fh;
            let b = f1 - f0 - a;
            let c = f0;
            let mut breaks = vec![0.0, 1.0];
            breaks.extend(quadratic_roots(a, b, c).into_iter().filter(|r| *r > 0.0 && *r < 1.0));
            breaks.sort_by(f64::total_cmp);
            let (mut plus, mut minus) = (0.0, 0.0);
            for s in breaks.windows(2) {
                let len = s[1] - s[0];
                if len <= 0.0 {
                    continue;
                }
                for &(g, wg) in &gauss {
                    let t = s[0] + g * len;
                    let f = (a * t + b) * t + c;
                    let wt = wg * len * e.length;
                    if f > FLUX_ZERO {
                        plus += wt * f;
                    } else if f < -FLUX_ZERO {
                        minus -= wt * f;
                    }
                }
            }
            out.push(EdgeFlux {
                edge: idx,
                left: e.left,
                right,
                plus,
                minus,
            });
        }
        out
    }

    /// Advances one step of the schedule.
    pub fn step(&self, prev: &StateP0, n: usize) -> Result<(StateP0, EnergyStepReport)> {
        let dt = self.params.schedule.dt(n);
        let (state, mut rep) = self.step_with(prev, dt, &self.params.reg, None)?;
        rep.step = n + 1;
        Ok((state, rep))
    }

    /// Solves one implicit step of size `dt` with the given regularization.
    /// `guess` (default: `prev`) seeds the nonlinear iteration.
    pub fn step_with(
        &self,
        prev: &StateP0,
        dt: f64,
        reg: &RegParams,
        guess: Option<&StateP0>,
    ) -> Result<(StateP0, EnergyStepReport)> {
        let (state, solve) = self.solve_step(prev, dt, reg, guess)?;
        if !solve.converged {
            return Err(FenepError::Solver(format!(
                "nonlinear iteration did not converge in {} iterations (t = {}, dt = {dt}): last scaled residual {:.3e} (momentum {:.3e}, continuity {:.3e}, stress {:.3e})",
                solve.iterations,
                prev.t + dt,
                solve.residuals.max(),
                solve.residuals.momentum,
                solve.residuals.continuity,
                solve.residuals.stress
            )));
        }
        let mut rep = self.audit_step(prev, &state, dt, reg)?;
        rep.picard_iters = solve.iterations;
        rep.residual = solve.residuals.max();
        rep.converged = true;
        Ok((state, rep))
    }

    /// Runs the nonlinear iteration without judging convergence.
    pub fn solve_step(
        &self,
        prev: &StateP0,
        dt: f64,
        reg: &RegParams,
        guess: Option<&StateP0>,
    ) -> Result<(StateP0, SolveReport)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FenepError::Argument(format!("time step must be positive, got {dt}")));
        }
        let sys = StepSystem::new(self, prev, dt, *reg);
        let g = guess.unwrap_or(prev);
        let mut x0 = Vec::with_capacity(sys.len());
        x0.extend_from_slice(&g.u);
        x0.extend_from_slice(&g.p);
        x0.extend(g.sigma.iter().flat_map(|s| s.components()));
        x0.push(0.0);
        let scale = max_abs(&prev.u)
            .max(max_abs(&prev.p))
            .max(prev.sigma.iter().map(|s| max_abs(&s.components())).fold(0.0, f64::max))
            + 1.0;
        let (x, rep) = picard_solve(&sys, &x0, scale, &self.picard)?;
        Ok((sys.unpack(&x, prev.t + dt), rep))
    }

    /// Evaluates every term of the discrete energy inequality between two states.
    pub fn audit_step(&self, prev: &StateP0, next: &StateP0, dt: f64, reg: &RegParams) -> Result<EnergyStepReport> {
        let p = &self.params;
        let du: Vec<f64> = next.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
        let load = self.load(prev.t, next.t);
        let mut relaxation = 0.0;
        for (k, s) in next.sigma.iter().enumerate() {
            let beta = s.beta_delta(reg.delta);
            let a = SymTensor2::scaled_identity(reg.trace_coefficient(s.trace())) - s.g_delta_prime(reg.delta);
            relaxation += self.mesh.area(k) * trace_sq_weighted(a, beta);
        }
        let entropy = entropy_integral(&self.mesh, StressRef::P0(&next.sigma), reg, FreeEnergyVariant::Regularized)?;
        let terms = EnergyTerms {
            f_before: self.free_energy(prev, reg, FreeEnergyVariant::Regularized)?,
            kinetic: 0.5 * p.re * self.kinetic_norm_sq(&next.u),
            entropy: 0.5 * p.eps / p.wi * entropy,
            kinetic_jump: 0.5 * p.re * self.kinetic_norm_sq(&du),
            viscous: dt * (1.0 - p.eps) * dot(&next.u, &self.stiffness_csr.matvec(&next.u)),
            relaxation: p.eps * dt / (2.0 * p.wi * p.wi) * relaxation,
            forcing: dt * dot(&load, &next.u),
            min_eig_sigma: next.sigma.iter().map(|s| s.min_eig()).fold(f64::INFINITY, f64::min),
            max_trace_sigma: next.sigma.iter().map(|s| s.trace()).fold(f64::NEG_INFINITY, f64::max),
            ..Default::default()
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

    /// Re-solves the step `n` for each δ of a decreasing schedule, warm
    /// starting from the previous level.
    pub fn delta_continuation(&self, prev: &StateP0, n: usize, deltas: &[f64]) -> Result<ContinuationReport> {
        if deltas.is_empty() {
            return Err(FenepError::Argument("empty delta schedule".into()));
        }
        if deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FenepError::Argument(format!("delta schedule must decrease strictly: {deltas:?}")));
        }
        let dt = self.params.schedule.dt(n);
        let b = self.params.reg.b;
        let mut levels = Vec::with_capacity(deltas.len());
        let mut current: Option<StateP0> = None;
        for &delta in deltas {
            let reg = RegParams::new(delta, b)?;
            let (state, solve) = self.solve_step(prev, dt, &reg, current.as_ref())?;
            let audit = spd_audit(&self.mesh, &state.sigma, b);
            let change = current.as_ref().map(|c| {
                c.sigma
                    .iter()
                    .zip(&state.sigma)
                    .map(|(a, b)| max_abs(&(*a - *b).components()))
                    .fold(0.0, f64::max)
            });
            levels.push(ContinuationLevel {
                delta,
                converged: solve.converged,
                residual: solve.residuals.max(),
                min_eig: audit.min_eig,
                min_trace_gap: audit.min_trace_gap,
                change,
            });
            current = Some(state);
        }
        let last = levels.last().expect("nonempty schedule");
        let success = levels.iter().all(|l| l.converged)
            && last.change.is_some_and(|c| c < CONTINUATION_TOL)
            && last.min_eig > 0.0
            && last.min_trace_gap > 0.0;
        Ok(ContinuationReport {
            levels,
            success,
            state: current.expect("nonempty schedule"),
        })
    }
}

/// Stagnation tolerance between successive δ levels.
pub const CONTINUATION_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuationLevel {
    pub delta: f64,
    pub converged: bool,
    pub residual: f64,
    pub min_eig: f64,
    pub min_trace_gap: f64,
    /// Largest change of a stress component from the previous level.
    pub change: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ContinuationReport {
    pub levels: Vec<ContinuationLevel>,
    pub success: bool,
    pub state: StateP0,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpdAudit {
    pub cell_min_eig: Vec<f64>,
    pub cell_trace_gap: Vec<f64>,
    pub min_eig: f64,
    pub min_trace_gap: f64,
    /// `∫ ‖[σ]₋‖`.
    pub negative_part: f64,
    /// `∫ |[b − tr σ]₋|`.
    pub trace_excess: f64,
}

/// Per-cell smallest eigenvalue and `b − tr σ` of a piecewise-constant stress.
pub fn spd_audit(mesh: &TriMesh, sigma: &[SymTensor2], b: f64) -> SpdAudit {
    let cell_min_eig: Vec<f64> = sigma.iter().map(|s| s.min_eig()).collect();
    let cell_trace_gap: Vec<f64> = sigma.iter().map(|s| b - s.trace()).collect();
    let mut negative_part = 0.0;
    let mut trace_excess = 0.0;
    for (k, s) in sigma.iter().enumerate() {
        negative_part += mesh.area(k) * s.negative_part().norm();
        trace_excess += mesh.area(k) * (b - s.trace()).min(0.0).abs();
    }
    SpdAudit {
        min_eig: cell_min_eig.iter().copied().fold(f64::INFINITY, f64::min),
        min_trace_gap: cell_trace_gap.iter().copied().fold(f64::INFINITY, f64::min),
        cell_min_eig,
        cell_trace_gap,
        negative_part,
        trace_excess,
    }
}

/// Real roots of `a t² + b t + c`.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The coupled step residual in unknowns `[u | p | σ | λ]`.
struct StepSystem<'a> {
    s: &'a SchemeP0,
    reg: RegParams,
    linear: Triplets,
    linear_csr: CsrMatrix,
    rhs: Vec<f64>,
    nu: usize,
    np: usize,
    nk: usize,
}

impl<'a> StepSystem<'a> {
    fn new(s: &'a SchemeP0, prev: &StateP0, dt: f64, reg: RegParams) -> Self {
        let p = &s.params;
        let (nu, np, nk) = (s.velocity.n_dofs(), s.pressure.n_dofs(), s.mesh.n_cells());
        let n = nu + np + 3 * nk + 1;
        let mask = s.velocity.dirichlet_mask();
        let off_s = nu + np;

        let mut mom = Triplets::new(nu, nu);
        mom.add_block(&s.mass, p.re / dt, 0, 0);
        mom.add_block(&skew_convection(&s.vt_conv, nu, &prev.u), p.re, 0, 0);
        mom.add_block(&s.stiffness, 1.0 - p.eps, 0, 0);
        let mut lin = constrain(&mom, mask);
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
        for k in 0..nk {
            let a = s.mesh.area(k);
            for c in 0..3 {
                let row = off_s + 3 * k + c;
                lin.push(row, row, a / dt * basis_weight(c, c));
                rhs[row] = a / dt * prev.sigma[k].ddot(basis_tensor(c));
            }
        }
        for f in s.upwind_fluxes(&prev.u) {
            for c in 0..3 {
                let w = basis_weight(c, c);
                let (rl, rr) = (off_s + 3 * f.left + c, off_s + 3 * f.right + c);
                lin.push(rr, rr, f.plus * w);
                lin.push(rr, rl, -f.plus * w);
                lin.push(rl, rl, f.minus * w);
                lin.push(rl, rr, -f.minus * w);
            }
        }
        Self {
            s,
            reg,
            linear_csr: lin.to_csr(),
            linear: lin,
            rhs,
            nu,
            np,
            nk,
        }
    }

    fn sigma_at(&self, x: &[f64], k: usize) -> SymTensor2 {
        let o = self.nu + self.np + 3 * k;
        SymTensor2::new(x[o], x[o + 1], x[o + 2])
    }

    fn cell_grad(&self, x: &[f64], k: usize) -> Matrix2<f64> {
        self.s.vt.cells[k]
            .dofs
            .iter()
            .zip(&self.s.grad_int[k])
            .map(|(&d, g)| g * x[d])
            .sum()
    }

    /// Returns `T = cβ − I` and `β` for a cell stress.
    fn cell_maps(&self, sigma: SymTensor2) -> (SymTensor2, SymTensor2) {
        let beta = sigma.beta_delta(self.reg.delta);
        let c = self.reg.trace_coefficient(sigma.trace());
        (c * beta - SymTensor2::identity(), beta)
    }

    fn unpack(&self, x: &[f64], t: f64) -> StateP0 {
        StateP0 {
            t,
            u: x[..self.nu].to_vec(),
            p: x[self.nu..self.nu + self.np].to_vec(),
            sigma: (0..self.nk).map(|k| self.sigma_at(x, k)).collect(),
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
        let off_s = self.nu + self.np;
        let mut r = self.linear_csr.matvec(x);
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri -= bi;
        }
        for k in 0..self.nk {
            let sigma = self.sigma_at(x, k);
            let (t, beta) = self.cell_maps(sigma);
            for (&d, g) in self.s.vt.cells[k].dofs.iter().zip(&self.s.grad_int[k]) {
                if !mask[d] {
                    r[d] += p.eps / p.wi * t.ddot_matrix(g);
                }
            }
            let gu = self.cell_grad(x, k) * beta.to_matrix();
            let a = self.s.mesh.area(k);
            for c in 0..3 {
                r[off_s + 3 * k + c] += -2.0 * basis_ddot(c, &gu) + a / p.wi * t.ddot(basis_tensor(c));
            }
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let p = &self.s.params;
        let mask = self.s.velocity.dirichlet_mask();
        let off_s = self.nu + self.np;
        let mut t = self.linear.clone();
        for k in 0..self.nk {
            let sigma = self.sigma_at(x, k);
            let (_, beta) = self.cell_maps(sigma);
            let jac = fd_jacobian(sigma.components(), |v| {
                let (t, b) = self.cell_maps(SymTensor2::from_components(v));
                let (t, b) = (t.components(), b.components());
                [t[0], t[1], t[2], b[0], b[1], b[2]]
            });
            let dt_: Vec<SymTensor2> = jac
                .iter()
                .map(|j| SymTensor2::new(j[0], j[1], j[2]))
                .collect();
            let db: Vec<Matrix2<f64>> = jac
                .iter()
                .map(|j| SymTensor2::new(j[3], j[4], j[5]).to_matrix())
                .collect();
            let gu = self.cell_grad(x, k);
            let a = self.s.mesh.area(k);
            let dofs = &self.s.vt.cells[k].dofs;
            for (&d, g) in dofs.iter().zip(&self.s.grad_int[k]) {
                if mask[d] {
                    continue;
                }
                for cp in 0..3 {
                    t.push(d, off_s + 3 * k + cp, p.eps / p.wi * dt_[cp].ddot_matrix(g));
                }
                let gb = g * beta.to_matrix();
                for c in 0..3 {
                    t.push(off_s + 3 * k + c, d, -2.0 * basis_ddot(c, &gb));
                }
            }
            for c in 0..3 {
                for cp in 0..3 {
                    let v = -2.0 * basis_ddot(c, &(gu * db[cp])) + a / p.wi * dt_[cp].ddot(basis_tensor(c));
                    t.push(off_s + 3 * k + c, off_s + 3 * k + cp, v);
                }
            }
        }
        t.to_csr()
    }

    fn block_of(&self, row: usize) -> Block {
        if row < self.nu {
            Block::Momentum
        } else if row < self.nu + self.np {
            Block::Continuity
        } else if row < self.nu + self.np + 3 * self.nk {
            Block::Stress
        } else {
            Block::Continuity
        }
    }
}
