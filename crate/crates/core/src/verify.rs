//! Headless property-oracle suite, reference data and interpolation studies.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assemble::inf_sup_estimate;
use crate::energy::{telescope, EnergyStepReport, FreeEnergyVariant};
use crate::error::Result;
use crate::mesh::{Point, TriMesh};
use crate::nlsolve::PicardConfig;
use crate::params::{Forcing, ModelParams, SpatialForce, TimeProfile, TimeSchedule};
use crate::quadrature::QuadratureRule;
use crate::scheme_p0::SchemeP0;
use crate::scheme_p1diff::{lambda_matrix, lambda_transport_scalar, lambda_transport_tensor, InitialBounds, SchemeP1Diff};
use crate::space::{eval_p1, eval_p1_tensor, grad_p1, integrate, pi_h, pi_h_tensor, SpaceKind};
use crate::tensor::lemmas::{self, LipschitzFn};
use crate::tensor::{h_of_g_prime, k_delta, RegParams, SymTensor2};

/// Divergence-free vortex `amp · curl(x²(1−x)² y²(1−y)²)`.
pub fn vortex(amp: f64) -> impl Fn(Point) -> Vector2<f64> + Copy {
    move |p: Point| {
        let (x, y) = (p.x, p.y);
        let fx = x * x * (1.0 - x) * (1.0 - x);
        let fy = y * y * (1.0 - y) * (1.0 - y);
        let dfx = 2.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
        let dfy = 2.0 * y * (1.0 - y) * (1.0 - 2.0 * y);
        Vector2::new(fx * dfy, -dfx * fy) * amp
    }
}

/// Smooth positive definite tensor field with eigenvalues in `[lo, hi]`
/// and a rotating eigenframe, drawn from a seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothStress {
    lo: f64,
    hi: f64,
    coef: [[f64; 3]; 3],
}

impl SmoothStress {
    pub fn new(lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef = std::array::from_fn(|_| [rng.random_range(1.0..3.0), rng.random_range(1.0..3.0), rng.random_range(0.0..2.0 * PI)]);
        Self { lo, hi, coef }
    }

    fn wave(&self, i: usize, p: Point) -> f64 {
        let [a, b, ph] = self.coef[i];
        (a * PI * p.x + b * PI * p.y + ph).sin()
    }

    pub fn eval(&self, p: Point) -> SymTensor2 {
        let s = |i| self.lo + (self.hi - self.lo) * (0.5 + 0.5 * self.wave(i, p));
        let (l1, l2) = (s(0), s(1));
        let th = PI * self.wave(2, p);
        let (c, sn) = (th.cos(), th.sin());
        let r = Matrix2::new(c, -sn, sn, c);
        SymTensor2::sym_part(&(r * Matrix2::new(l1, 0.0, 0.0, l2) * r.transpose()))
    }
}

/// Structured mesh with interior vertices displaced so that some triangles
/// become obtuse.
pub fn obtuse_mesh(n: usize) -> Result<TriMesh> {
    let base = TriMesh::structured_unit_square(n)?;
    let h = 1.0 / n as f64;
    let vertices = base
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| {
            if base.is_boundary_vertex(v) {
                *p
            } else {
                let s = if v % 2 == 0 { 0.3 } else { -0.3 };
                p + Vector2::new(s * h, -s * h)
            }
        })
        .collect();
    TriMesh::new(vertices, base.cells().to_vec())
}

/// Least-squares slope of `log err` against `log h`.
pub fn convergence_rate(h: &[f64], err: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `‖(I − π_h)[q₁ q₂]‖_{L¹}` for the vertex interpolants of two smooth functions.
pub fn product_interpolation_error(mesh: &TriMesh) -> f64 {
    let q1 = pi_h(mesh, |p| (PI * p.x).sin() * (PI * p.y).cos() + p.x);
    let q2 = pi_h(mesh, |p| (2.0 * p.x * p.y).exp() - p.y);
    let prod: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a * b).collect();
    integrate(mesh, &QuadratureRule::order4(), |k, l, _| {
        (eval_p1(mesh, k, l, &q1) * eval_p1(mesh, k, l, &q2) - eval_p1(mesh, k, l, &prod)).abs()
    })
}

/// `‖π_h[β_δ(φ)] − β_δ(φ)‖_{L²}` for the vertex interpolant φ of a smooth
/// tensor field that crosses the regularization threshold.
pub fn beta_interpolation_error(mesh: &TriMesh, delta: f64) -> f64 {
    let field = |p: Point| {
        SymTensor2::new(
            (2.0 * PI * p.x).sin() * p.y,
            0.4 * (PI * (p.x + p.y)).cos(),
            1.0 - 2.0 * p.x * p.y,
        )
    };
    let phi = pi_h_tensor(mesh, field);
    let beta: Vec<SymTensor2> = phi.iter().map(|s| s.beta_delta(delta)).collect();
    integrate(mesh, &QuadratureRule::order4().subdivided(2), |k, l, _| {
        let exact = eval_p1_tensor(mesh, k, l, &phi).beta_delta(delta);
        (eval_p1_tensor(mesh, k, l, &beta) - exact).norm_sq()
    })
    .sqrt()
}

/// Outcome of one verification check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub lemma_samples: usize,
    pub lambda_fields: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            lemma_samples: 100_000,
            lambda_fields: 10_000,
            seed: 7,
        }
    }
}

/// Random symmetric tensor with eigenvalues in `[lo, hi]` and a random frame.
pub fn random_tensor(rng: &mut impl Rng, lo: f64, hi: f64) -> SymTensor2 {
    let (a, b) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
    let th: f64 = rng.random_range(0.0..PI);
    let (c, s) = (th.cos(), th.sin());
    let r = Matrix2::new(c, -s, s, c);
    SymTensor2::sym_part(&(r * Matrix2::new(a, 0.0, 0.0, b) * r.transpose()))
}

const LEMMA_SLACK: f64 = 1e-10;

/// Pointwise inequalities of the regularized functions on random samples.
pub fn check_lemmas(samples: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut worst_name = "";
    let mut count = 0usize;
    for &delta in &[0.5, 0.25, 0.1, 0.01] {
        for &b in &[2.0, 5.0, 50.0, f64::INFINITY] {
            let Ok(rp) = RegParams::new(delta, b) else { continue };
            let span = if b.is_finite() { 2.0 * b } else { 20.0 };
            for _ in 0..samples {
                let phi = random_tensor(&mut rng, -5.0, 10.0);
                let psi = random_tensor(&mut rng, -5.0, 10.0);
                let eta = rng.random_range(-span..span);
                let mut rec = |name: &'static str, v: f64| {
                    count += 1;
                    if v < worst {
                        worst = v;
                        worst_name = name;
                    }
                };
                rec("inverse identity", -lemmas::inverse_identity_error(phi, delta));
                rec("entropy lower bound", lemmas::entropy_lower_bound(phi, delta));
                let [c1, c2] = lemmas::concavity(phi, psi, delta);
                rec("concavity", c1);
                rec("concavity", c2);
                rec("strong monotonicity", lemmas::strong_monotonicity(phi, psi, delta));
                for v in lemmas::coercivity(phi, delta) {
                    rec("coercivity", v);
                }
                rec("positive term", lemmas::positive_term(phi, eta, delta));
                rec("relaxation dissipation", lemmas::relaxation_dissipation(phi, eta, &rp));
                for g in LipschitzFn::ALL {
                    rec("lipschitz", lemmas::lipschitz(g, phi, psi, delta));
                }
                for v in lemmas::norm_equivalence(phi) {
                    rec("norm equivalence", v);
                }
                if b.is_finite() {
                    for v in lemmas::trace_term_bounds(eta, b, delta) {
                        rec("trace term", v);
                    }
                    rec("stress bound", lemmas::stress_bound(phi, eta, &rp));
                    let k = k_delta(phi, eta, &rp);
                    rec("k bound", b - k * k * phi.beta_delta(delta).trace());
                }
            }
        }
    }
    CheckOutcome::new(
        "lemma oracle suite",
        worst >= -LEMMA_SLACK,
        format!("{count} inequalities, worst margin {worst:.3e} ({worst_name})"),
    )
}

fn abs_entries(s: SymTensor2) -> SymTensor2 {
    SymTensor2::from_components(s.components().map(f64::abs))
}

/// Residuals of the two per-cell chain-rule identities, relative to the
/// componentwise magnitude of the summands, and the range of λ.
pub fn lambda_identity_residuals(mesh: &TriMesh, sigma: &[SymTensor2], q: &[f64], delta: f64) -> Result<(f64, f64, (f64, f64))> {
    let (mut tensor_res, mut scalar_res) = (0.0f64, 0.0f64);
    let (mut lam_lo, mut lam_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let gp: [Vec<f64>; 3] = std::array::from_fn(|c| sigma.iter().map(|s| s.g_delta_prime(delta).component(c)).collect());
    let htr: Vec<f64> = sigma.iter().map(|s| s.trace_h_of_g_prime(delta)).collect();
    let qg: Vec<f64> = q.iter().map(|v| crate::tensor::g_delta_prime(*v, delta)).collect();
    let qh: Vec<f64> = q.iter().map(|v| h_of_g_prime(*v, delta)).collect();
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let vals = cell.map(|v| sigma[v]);
        for j in 1..3 {
            let (_, lam) = lambda_matrix(vals[j], vals[0], delta);
            lam_lo = lam_lo.min(lam);
            lam_hi = lam_hi.max(lam);
        }
        let lt = lambda_transport_tensor(mesh, k, vals, delta)?;
        let grads: [Vector2<f64>; 3] = std::array::from_fn(|c| grad_p1(mesh, k, &gp[c]));
        let rhs = grad_p1(mesh, k, &htr);
        // componentwise magnitude of the vertex sums before cancellation
        let bary = mesh.barycentric_gradients(k).map(|g| g.abs());
        let scale = |vals: &[f64]| -> Vector2<f64> { (0..3).map(|a| bary[a] * vals[cell[a]].abs()).sum() };
        let sg: [Vector2<f64>; 3] = std::array::from_fn(|c| scale(&gp[c]));
        let sh = scale(&htr);
        for m in 0..2 {
            let mut lhs = 0.0;
            let mut size = sh[m];
            for p in 0..2 {
                let dg = SymTensor2::new(grads[0][p], grads[1][p], grads[2][p]);
                lhs += lt[m][p].ddot(dg);
                size += abs_entries(lt[m][p]).ddot(SymTensor2::new(sg[0][p], sg[1][p], sg[2][p]));
            }
            tensor_res = tensor_res.max((lhs - rhs[m]).abs() / size.max(1.0));
        }
        let ls = lambda_transport_scalar(mesh, k, cell.map(|v| q[v]), delta)?;
        let g = grad_p1(mesh, k, &qg);
        let rhs = grad_p1(mesh, k, &qh);
        let lhs = ls * g;
        let size = ls.abs() * scale(&qg) + scale(&qh);
        for m in 0..2 {
            scalar_res = scalar_res.max((lhs[m] - rhs[m]).abs() / size[m].max(1.0));
        }
    }
    Ok((tensor_res, scalar_res, (lam_lo, lam_hi)))
}

pub fn check_lambda_identities(fields: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tr, mut sr) = (0.0f64, 0.0f64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let meshes: Vec<TriMesh> = [2, 4, 8].iter().map(|&n| TriMesh::structured_unit_square(n)).collect::<Result<_>>()?;
    for i in 0..fields {
        let mesh = &meshes[i % meshes.len()];
        let delta = [0.5, 0.1, 0.01][i % 3];
        let sigma: Vec<SymTensor2> = (0..mesh.n_vertices()).map(|_| random_tensor(&mut rng, -1.0, 4.0)).collect();
        let q: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.random_range(-1.0..2.0)).collect();
        let (t, s, (l, h)) = lambda_identity_residuals(mesh, &sigma, &q, delta)?;
        tr = tr.max(t);
        sr = sr.max(s);
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let pass = tr <= 1e-12 && sr <= 1e-12 && lo >= -1e-12 && hi <= 1.0 + 1e-12;
    Ok(CheckOutcome::new(
        "transport tensor identities",
        pass,
        format!("{fields} fields: tensor residual {tr:.2e}, scalar residual {sr:.2e}, lambda in [{lo:.3e}, {hi:.3e}]"),
    ))
}

fn params(dt: f64, steps: usize, reg: RegParams, alpha: f64) -> Result<ModelParams> {
    ModelParams::new(1.0, 1.0, 0.5, reg, TimeSchedule::uniform(dt, steps)?)?.with_alpha(alpha)
}

/// Runs a scheme for all steps of its schedule, collecting the reports.
pub fn run_p0(s: &SchemeP0, st: crate::scheme_p0::StateP0) -> Result<(crate::scheme_p0::StateP0, Vec<EnergyStepReport>)> {
    let mut st = st;
    let mut reps = Vec::new();
    for n in 0..s.params().schedule.len() {
        let (next, r) = s.step(&st, n)?;
        reps.push(r);
        st = next;
    }
    Ok((st, reps))
}

pub fn run_p1(
    s: &SchemeP1Diff,
    st: crate::scheme_p1diff::StateP1,
) -> Result<(crate::scheme_p1diff::StateP1, Vec<EnergyStepReport>)> {
    let mut st = st;
    let mut reps = Vec::new();
    for n in 0..s.params().schedule.len() {
        let (next, r) = s.step(&st, n)?;
        reps.push(r);
        st = next;
    }
    Ok((st, reps))
}

/// Energy stability of both schemes over a range of time steps and δ.
pub fn check_energy_stability(n: usize, steps: usize, b: f64) -> Result<CheckOutcome> {
    let mut failed = Vec::new();
    let mut total = 0;
    let field = SmoothStress::new(0.05, 1.2, 11);
    for &dt in &[0.01, 0.1, 1.0, 10.0] {
        for &delta in &[0.25, 0.1] {
            let reg = RegParams::new(delta, b)?;
            let p = params(dt, steps, reg, 0.1)?;
            let s0 = SchemeP0::new(TriMesh::structured_unit_square(n)?, SpaceKind::VelocityP2, p.clone(), PicardConfig::default())?;
            let st = s0.initial_state(vortex(30.0), |x| field.eval(x))?;
            for r in run_p0(&s0, st)?.1 {
                total += 1;
                if !r.pass {
                    failed.push(format!("p0 dt={dt} delta={delta} step {}", r.step));
                }
            }
            if b.is_finite() {
                let s1 = SchemeP1Diff::new(TriMesh::structured_unit_square(n)?, SpaceKind::VelocityP2, p, PicardConfig::default())?;
                let bounds = InitialBounds::sample(s1.mesh(), |x| field.eval(x));
                let st = s1.project_initial(vortex(30.0), |x| field.eval(x), dt, &bounds)?;
                for r in run_p1(&s1, st)?.1 {
                    total += 1;
                    if !r.pass {
                        failed.push(format!("p1diff dt={dt} delta={delta} step {}", r.step));
                    }
                }
            }
        }
    }
    Ok(CheckOutcome::new(
        "unconditional energy stability",
        failed.is_empty(),
        format!("{total} steps audited, failures: {failed:?}"),
    ))
}

fn rotational_forcing(amplitude: f64) -> Forcing {
    Forcing::Separable {
        spatial: SpatialForce::Rotational { amplitude },
        temporal: TimeProfile::Constant,
    }
}

/// Trace balance over a forced stress-diffusion run.
pub fn check_trace_balance(n: usize, steps: usize) -> Result<CheckOutcome> {
    let reg = RegParams::new(0.1, 5.0)?;
    let p = params(0.05, steps, reg, 0.1)?.with_forcing(rotational_forcing(20.0));
    let s = SchemeP1Diff::new(TriMesh::structured_unit_square(n)?, SpaceKind::VelocityP2, p, PicardConfig::default())?;
    let st = s.homogeneous_state(SymTensor2::identity());
    let (_, reps) = run_p1(&s, st)?;
    let worst = reps.iter().map(|r| r.trace_balance.abs()).fold(0.0, f64::max);
    let all_pass = reps.iter().all(|r| r.pass);
    Ok(CheckOutcome::new(
        "trace balance",
        worst < 1e-9 && all_pass,
        format!("{} steps, max |int(tr sigma - rho)| = {worst:.2e}, audits pass: {all_pass}", reps.len()),
    ))
}

/// One backward-Euler step of the homogeneous relaxation ODE
/// `(σ − σ_old)/Δt + (c(tr σ) β_δ(σ) − I)/Wi = 0`, by Newton iteration.
pub fn relaxation_ode_step(old: SymTensor2, dt: f64, wi: f64, reg: &RegParams) -> SymTensor2 {
    let f = |x: [f64; 3]| {
        let s = SymTensor2::from_components(x);
        let r = (s - old) * (1.0 / dt) + (reg.trace_coefficient(s.trace()) * s.beta_delta(reg.delta) - SymTensor2::identity()) * (1.0 / wi);
        r.components()
    };
    let mut x = old.components();
    for _ in 0..100 {
        let r = f(x);
        if r.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        let j = crate::nlsolve::fd_jacobian(x, f);
        let m = nalgebra::Matrix3::from_fn(|i, k| j[k][i]);
        let Some(d) = m.lu().solve(&nalgebra::Vector3::new(-r[0], -r[1], -r[2])) else { break };
        for i in 0..3 {
            x[i] += d[i];
        }
    }
    SymTensor2::from_components(x)
}

/// Homogeneous relaxation: equilibrium and the scalar ODE oracle.
pub fn check_equilibrium(b: f64) -> Result<CheckOutcome> {
    let tight = PicardConfig {
        tol: 1e-13,
        ..PicardConfig::default()
    };
    let reg = RegParams::new(0.1, b)?;
    let target = if b.is_finite() { b / (b + 2.0) } else { 1.0 };
    let sigma0 = SymTensor2::new(2.0, 0.3, 1.5);
    let (dt, steps) = (0.5, 60);
    let p = params(dt, steps, reg, 0.1)?;
    let mut oracle = vec![sigma0];
    for i in 0..steps {
        let next = relaxation_ode_step(oracle[i], dt, p.wi, &reg);
        oracle.push(next);
    }
    let mut dev: f64 = 0.0;
    let s0 = SchemeP0::new(TriMesh::structured_unit_square(4)?, SpaceKind::VelocityP2, p.clone(), tight)?;
    let mut st = s0.homogeneous_state(sigma0);
    for n in 0..steps {
        st = s0.step(&st, n)?.0;
        for x in &st.sigma {
            dev = dev.max(crate::sparse::max_abs(&(*x - oracle[n + 1]).components()));
        }
    }
    let mut eq_err = st.sigma.iter().map(|x| crate::sparse::max_abs(&(*x - SymTensor2::scaled_identity(target)).components())).fold(0.0, f64::max);
    if b.is_finite() {
        let s1 = SchemeP1Diff::new(TriMesh::structured_unit_square(4)?, SpaceKind::VelocityP2, p, tight)?;
        let mut st = s1.homogeneous_state(sigma0);
        for n in 0..steps {
            st = s1.step(&st, n)?.0;
            for x in &st.sigma {
                dev = dev.max(crate::sparse::max_abs(&(*x - oracle[n + 1]).components()));
            }
        }
        eq_err = eq_err.max(st.sigma.iter().map(|x| crate::sparse::max_abs(&(*x - SymTensor2::scaled_identity(target)).components())).fold(0.0, f64::max));
    }
    Ok(CheckOutcome::new(
        "equilibrium and ODE oracle",
        dev < 1e-10 && eq_err < 1e-6,
        format!("max deviation from oracle {dev:.2e}, distance to {target:.6}·I: {eq_err:.2e}"),
    ))
}

/// δ-continuation of one step of the piecewise-constant scheme.
pub fn check_delta_continuation(n: usize) -> Result<CheckOutcome> {
    let b = 5.0;
    let reg = RegParams::new(0.25, b)?;
    let p = params(0.1, 1, reg, 0.0)?;
    let s = SchemeP0::new(TriMesh::structured_unit_square(n)?, SpaceKind::VelocityP2, p, PicardConfig::default())?;
    let field = SmoothStress::new(0.05, 2.2, 5);
    let st = s.initial_state(vortex(30.0), |x| field.eval(x))?;
    let max_tr = st.sigma.iter().map(|x| x.trace()).fold(0.0, f64::max);
    let deltas: Vec<f64> = (2..=8).map(|i| 0.5f64.powi(i)).collect();
    let rep = s.delta_continuation(&st, 0, &deltas)?;
    let last = rep.levels.last().expect("levels");
    Ok(CheckOutcome::new(
        "delta continuation",
        rep.success && max_tr <= 0.9 * b,
        format!(
            "initial max trace {max_tr:.3}, final change {:.2e}, min eigenvalue {:.4}, min b - tr {:.4}",
            last.change.unwrap_or(f64::NAN),
            last.min_eig,
            last.min_trace_gap
        ),
    ))
}

/// Telescoped energy bound over forced runs of both schemes.
pub fn check_telescope(n: usize, steps: usize) -> Result<CheckOutcome> {
    let reg = RegParams::new(0.1, 5.0)?;
    let field = SmoothStress::new(0.2, 1.5, 3);
    let mut lines = Vec::new();
    let mut pass = true;
    let p = params(0.1, steps, reg, 0.0)?.with_forcing(rotational_forcing(10.0));
    let s0 = SchemeP0::new(TriMesh::structured_unit_square(n)?, SpaceKind::VelocityP2, p.clone(), PicardConfig::default())?;
    let st = s0.initial_state(vortex(10.0), |x| field.eval(x))?;
    let t = telescope(&run_p0(&s0, st)?.1);
    pass &= t.pass;
    lines.push(format!("p0: {:.6} <= {:.6}", t.f_final + t.dissipation, t.f_initial + t.forcing + t.slack));
    for &alpha in &[0.01, 0.1, 1.0] {
        let pa = p.clone().with_alpha(alpha)?;
        let s1 = SchemeP1Diff::new(TriMesh::structured_unit_square(n)?, SpaceKind::VelocityP2, pa, PicardConfig::default())?;
        let bounds = InitialBounds::sample(s1.mesh(), |x| field.eval(x));
        let st = s1.project_initial(vortex(10.0), |x| field.eval(x), 0.1, &bounds)?;
        let t = telescope(&run_p1(&s1, st)?.1);
        pass &= t.pass;
        lines.push(format!(
            "p1diff alpha={alpha}: {:.6} <= {:.6}",
            t.f_final + t.dissipation,
            t.f_initial + t.forcing + t.slack
        ));
    }
    Ok(CheckOutcome::new("telescoped energy bound", pass, lines.join("; ")))
}

/// Oldroyd-B limit of the piecewise-constant scheme.
pub fn check_oldroyd_b(n: usize) -> Result<CheckOutcome> {
    let reg = RegParams::oldroyd_b(0.1)?;
    let field = SmoothStress::new(0.05, 1.2, 11);
    let p = params(0.1, 1, reg, 0.0)?;
    let s = SchemeP0::new(TriMesh::structured_unit_square(n)?, SpaceKind::VelocityP2, p, PicardConfig::default())?;
    let st = s.initial_state(|_| Vector2::zeros(), |x| field.eval(x))?;
    let direct: f64 = st
        .sigma
        .iter()
        .enumerate()
        .map(|(k, x)| s.mesh().area(k) * (x.trace() - x.trace_g_delta(0.1) - 2.0))
        .sum::<f64>()
        * 0.25;
    let f = s.free_energy(&st, &reg, FreeEnergyVariant::Regularized)?;
    let entropy_ok = (f - direct).abs() < 1e-12;
    let stab = check_energy_stability(n, 2, f64::INFINITY)?;
    let eq = check_equilibrium(f64::INFINITY)?;
    Ok(CheckOutcome::new(
        "Oldroyd-B collapse",
        entropy_ok && stab.pass && eq.pass,
        format!("entropy form matches: {entropy_ok}; stability: {}; equilibrium: {}", stab.detail, eq.detail),
    ))
}

/// Interpolation rates and discrete inf-sup constants.
pub fn check_numerics() -> Result<CheckOutcome> {
    let ns = [4usize, 8, 16, 32];
    let meshes: Vec<TriMesh> = ns.iter().map(|&n| TriMesh::structured_unit_square(n)).collect::<Result<_>>()?;
    let h: Vec<f64> = meshes.iter().map(TriMesh::h).collect();
    let e2: Vec<f64> = meshes.iter().map(product_interpolation_error).collect();
    let eb: Vec<f64> = meshes.iter().map(|m| beta_interpolation_error(m, 0.1)).collect();
    let (r2, rb) = (convergence_rate(&h, &e2), convergence_rate(&h, &eb));
    let pairs = [
        (SpaceKind::VelocityP2, SpaceKind::PressureP0),
        (SpaceKind::VelocityP2Reduced, SpaceKind::PressureP0),
        (SpaceKind::VelocityP2, SpaceKind::PressureP1),
        (SpaceKind::VelocityMini, SpaceKind::PressureP1),
    ];
    let coarse = &meshes[0];
    let fine = &meshes[1];
    let mut inf_sup_ok = true;
    let mut lines = Vec::new();
    for (v, p) in pairs {
        let (a, b) = (inf_sup_estimate(coarse, v, p)?, inf_sup_estimate(fine, v, p)?);
        inf_sup_ok &= a > 0.0 && b > 0.0 && b >= 0.8 * a;
        lines.push(format!("{v}/{p}: {a:.3} -> {b:.3}"));
    }
    let ctrl = inf_sup_estimate(fine, SpaceKind::VelocityP1, SpaceKind::PressureP1)?;
    let ctrl_ok = ctrl < 1e-8;
    Ok(CheckOutcome::new(
        "interpolation and inf-sup",
        r2 >= 1.9 && rb >= 0.9 && inf_sup_ok && ctrl_ok,
        format!("product rate {r2:.3}, beta rate {rb:.3}; {}; p1/p1 control {ctrl:.2e}", lines.join(", ")),
    ))
}

/// A corrupted state must fail the audit and an obtuse mesh must leave the
/// gradient terms uncertified.
pub fn check_negative_controls() -> Result<CheckOutcome> {
    let reg = RegParams::new(0.1, 5.0)?;
    let p = params(0.1, 1, reg, 0.1)?;
    let s0 = SchemeP0::new(TriMesh::structured_unit_square(4)?, SpaceKind::VelocityP2, p.clone(), PicardConfig::default())?;
    let st = s0.homogeneous_state(SymTensor2::scaled_identity(2.0));
    let (mut next, rep) = s0.step(&st, 0)?;
    for x in &mut next.sigma {
        *x = *x * 2.0;
    }
    let corrupted_p0 = rep.pass && !s0.audit_step(&st, &next, 0.1, &reg)?.pass;

    let s1 = SchemeP1Diff::new(TriMesh::structured_unit_square(4)?, SpaceKind::VelocityP2, p.clone(), PicardConfig::default())?;
    let st = s1.homogeneous_state(SymTensor2::scaled_identity(2.0));
    let (mut next, rep) = s1.step(&st, 0)?;
    for x in &mut next.sigma {
        *x = *x * 2.0;
    }
    let corrupted_p1 = rep.pass && !s1.audit_step(&st, &next, 0.1, &reg)?.pass;

    let mesh = obtuse_mesh(4)?;
    let obtuse = !mesh.audit()?.non_obtuse;
    let s2 = SchemeP1Diff::new(mesh, SpaceKind::VelocityP2, p, PicardConfig::default())?;
    let field = SmoothStress::new(0.2, 1.5, 9);
    let bounds = InitialBounds::sample(s2.mesh(), |x| field.eval(x));
    let st = s2.project_initial(vortex(10.0), |x| field.eval(x), 0.1, &bounds);
    let uncertified = match st {
        Ok(st) => !s2.step(&st, 0)?.1.diffusion_certified,
        // the projection's vertex bounds need the non-obtuse hypothesis too
        Err(_) => !s2.step(&s2.homogeneous_state(SymTensor2::identity()), 0)?.1.diffusion_certified,
    };
    Ok(CheckOutcome::new(
        "negative controls",
        corrupted_p0 && corrupted_p1 && obtuse && uncertified,
        format!("corrupted p0 fails: {corrupted_p0}; corrupted p1diff fails: {corrupted_p1}; obtuse mesh detected: {obtuse}; gradient terms uncertified: {uncertified}"),
    ))
}

/// Runs every check of the suite in order.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let wrap = |name: &str, r: Result<CheckOutcome>| {
        r.unwrap_or_else(|e| CheckOutcome::new(name, false, format!("error: {e}")))
    };
    vec![
        check_lemmas(opts.lemma_samples, opts.seed),
        wrap("transport tensor identities", check_lambda_identities(opts.lambda_fields, opts.seed)),
        wrap("unconditional energy stability", check_energy_stability(8, 3, 5.0)),
        wrap("trace balance", check_trace_balance(8, 100)),
        wrap("equilibrium and ODE oracle", check_equilibrium(5.0)),
        wrap("delta continuation", check_delta_continuation(8)),
        wrap("telescoped energy bound", check_telescope(8, 20)),
        wrap("Oldroyd-B collapse", check_oldroyd_b(8)),
        wrap("interpolation and inf-sup", check_numerics()),
        wrap("negative controls", check_negative_controls()),
    ]
}
