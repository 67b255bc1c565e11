//! Per-step nonlinear solution by damped fixed-point iteration over
//! frozen-coefficient linearizations, and the linear saddle-point solve.

use serde::Serialize;

use crate::assemble::constrain;
use crate::error::{FenepError, Result};
use crate::sparse::{max_abs, solve, CsrMatrix, SparseLu, Triplets};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub omega_floor: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 50,
            omega_floor: 1.0 / 16.0,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.omega_floor > 0.0 && self.omega_floor <= 1.0) {
            return Err(FenepError::Argument(format!("invalid Picard settings {self:?}")));
        }
        Ok(())
    }
}

/// Equation blocks reported separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Momentum,
    Continuity,
    Stress,
    Trace,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BlockResiduals {
    pub momentum: f64,
    pub continuity: f64,
    pub stress: f64,
    pub trace: f64,
}

impl BlockResiduals {
    pub fn max(&self) -> f64 {
        self.momentum.max(self.continuity).max(self.stress).max(self.trace)
    }

    fn slot(&mut self, b: Block) -> &mut f64 {
        match b {
            Block::Momentum => &mut self.momentum,
            Block::Continuity => &mut self.continuity,
            Block::Stress => &mut self.stress,
            Block::Trace => &mut self.trace,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residuals: BlockResiduals,
    pub converged: bool,
    pub omega_history: Vec<f64>,
    pub scale: f64,
}

/// A discretized time step `R(x) = 0` together with an approximate Jacobian.
///
/// The iteration only relies on `residual` being the full nonlinear residual;
/// any Jacobian approximation gives a frozen-coefficient linearization whose
/// fixed points are solutions of the scheme.
pub trait NonlinearSystem {
    fn len(&self) -> usize;
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> CsrMatrix;
    fn block_of(&self, row: usize) -> Block;
}

fn scaled_blocks<S: NonlinearSystem + ?Sized>(sys: &S, r: &[f64], diag: &[f64]) -> BlockResiduals {
    let mut b = BlockResiduals::default();
    for (i, (&ri, &di)) in r.iter().zip(diag).enumerate() {
        let v = if di != 0.0 { (ri / di).abs() } else { ri.abs() };
        let slot = b.slot(sys.block_of(i));
        *slot = slot.max(v);
    }
    b
}

/// Iterates `x ← x + ω δ` with `J(x) δ = −R(x)`, halving `ω` while the
/// Jacobi-scaled residual grows (down to `cfg.omega_floor`).
///
/// Converged when every block of the scaled residual is below
/// `cfg.tol · scale`. Failure to converge is reported, not an error; only a
/// singular linearization is an error.
pub fn picard_solve<S: NonlinearSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    scale: f64,
    cfg: &PicardConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut report = SolveReport {
        scale,
        ..Default::default()
    };
    let mut r = sys.residual(&x);
    for it in 0..=cfg.max_iters {
        let jac = sys.jacobian(&x);
        let diag: Vec<f64> = jac.diagonal().iter().map(|d| d.abs()).collect();
        let blocks = scaled_blocks(sys, &r, &diag);
        report.residuals = blocks;
        report.iterations = it;
        if !blocks.max().is_finite() {
            return Err(FenepError::Solver(format!("non-finite residual at iteration {it}")));
        }
        if blocks.max() <= cfg.tol * scale {
            report.converged = true;
            break;
        }
        if it == cfg.max_iters {
            break;
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = SparseLu::factor(&jac)?.solve(&neg)?;
        let norm = blocks.max();
        let mut omega = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + omega * d).collect();
            let rt = sys.residual(&trial);
            let nt = scaled_blocks(sys, &rt, &diag).max();
            if (nt.is_finite() && nt <= norm) || omega <= cfg.omega_floor {
                x = trial;
                r = rt;
                break;
            }
            omega *= 0.5;
        }
        report.omega_history.push(omega);
    }
    Ok((x, report))
}

/// Solves `[[A, Bᵀ, 0], [B, 0, w], [0, wᵀ, 0]] (u, p, λ) = (f, g, 0)`: a
/// saddle-point problem with the pressure mean `wᵀp` pinned to zero by a
/// multiplier. Velocity dofs flagged in `mask` are fixed to zero.
pub fn saddle_solve(
    a: &Triplets,
    b: &Triplets,
    weights: &[f64],
    mask: &[bool],
    rhs_u: &[f64],
    rhs_p: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nu, np) = (a.n_rows, b.n_rows);
    if a.n_cols != nu || b.n_cols != nu || weights.len() != np || rhs_u.len() != nu || rhs_p.len() != np {
        return Err(FenepError::Argument("saddle_solve: incompatible block sizes".into()));
    }
    let n = nu + np + 1;
    let mut t = Triplets::new(n, n);
    let mut ac = constrain(a, mask);
    ac.n_rows = n;
    ac.n_cols = n;
    t.add_block(&ac, 1.0, 0, 0);
    for &(q, j, v) in &b.entries {
        if !mask[j] {
            t.push(nu + q, j, v);
            t.push(j, nu + q, v);
        }
    }
    for (q, &w) in weights.iter().enumerate() {
        t.push(nu + q, n - 1, w);
        t.push(n - 1, nu + q, w);
    }
    let mut rhs = Vec::with_capacity(n);
    rhs.extend(rhs_u.iter().zip(mask).map(|(&f, &m)| if m { 0.0 } else { f }));
    rhs.extend_from_slice(rhs_p);
    rhs.push(0.0);
    let m = t.to_csr();
    let x = solve(&m, &rhs)?;
    let res = max_abs(
        &m.matvec(&x)
            .iter()
            .zip(&rhs)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    if res > 1e-10 * (max_abs(&rhs) + 1.0) {
        return Err(FenepError::Solver(format!("saddle solve residual {res:.3e}")));
    }
    Ok((x[..nu].to_vec(), x[nu..nu + np].to_vec()))
}

/// Central-difference Jacobian of a small local map: `jac[i][j] = ∂f_j/∂x_i`.
pub fn fd_jacobian<const N: usize, const M: usize>(
    x: [f64; N],
    f: impl Fn([f64; N]) -> [f64; M],
) -> [[f64; M]; N] {
    let mut jac = [[0.0; M]; N];
    for i in 0..N {
        let h = 1e-7 * (1.0 + x[i].abs());
        let mut xp = x;
        let mut xm = x;
        xp[i] += h;
        xm[i] -= h;
        let (fp, fm) = (f(xp), f(xm));
        for j in 0..M {
            jac[i][j] = (fp[j] - fm[j]) / (2.0 * h);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{divergence, pressure_weights, vector_stiffness};
    use crate::mesh::TriMesh;
    use crate::space::{velocity_rule, DofMap, SpaceKind, VelocityTable};

    /// `x_i³ + 2 x_i − c_i = 0`, decoupled.
    struct Cubic(Vec<f64>);

    impl NonlinearSystem for Cubic {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            x.iter().zip(&self.0).map(|(x, c)| x * x * x + 2.0 * x - c).collect()
        }
        fn jacobian(&self, x: &[f64]) -> CsrMatrix {
            let e: Vec<_> = x.iter().enumerate().map(|(i, x)| (i, i, 3.0 * x * x + 2.0)).collect();
            CsrMatrix::from_triplets(x.len(), x.len(), &e)
        }
        fn block_of(&self, _: usize) -> Block {
            Block::Stress
        }
    }

    struct Linear;

    impl NonlinearSystem for Linear {
        fn len(&self) -> usize {
            2
        }
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            vec![2.0 * x[0] + x[1] - 1.0, x[0] + 3.0 * x[1] - 2.0]
        }
        fn jacobian(&self, _: &[f64]) -> CsrMatrix {
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
        }
        fn block_of(&self, i: usize) -> Block {
            if i == 0 { Block::Momentum } else { Block::Continuity }
        }
    }

    #[test]
    fn fd_jacobian_of_smooth_map() {
        let j = fd_jacobian([1.0, 2.0], |x| [x[0] * x[1], x[0].exp()]);
        assert!((j[0][0] - 2.0).abs() < 1e-8);
        assert!((j[1][0] - 1.0).abs() < 1e-8);
        assert!((j[0][1] - 1f64.exp()).abs() < 1e-7);
        assert_eq!(j[1][1], 0.0);
    }

    #[test]
    fn linear_problem_converges_in_one_iteration() {
        let (x, rep) = picard_solve(&Linear, &[0.0, 0.0], 1.0, &PicardConfig::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!((x[0] - 0.2).abs() < 1e-14 && (x[1] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn nonlinear_problem_converges() {
        let sys = Cubic(vec![3.0, -12.0, 0.5]);
        let (x, rep) = picard_solve(&sys, &[0.0; 3], 1.0, &PicardConfig::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        for r in sys.residual(&x) {
            assert!(r.abs() < 1e-9);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let sys = Cubic(vec![1e6]);
        let cfg = PicardConfig { max_iters: 2, ..Default::default() };
        let (_, rep) = picard_solve(&sys, &[0.0], 1.0, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 2);
        assert_eq!(rep.omega_history.len(), 2);
    }

    #[test]
    fn stokes_without_forcing_is_at_rest() {
        let m = TriMesh::structured_unit_square(3).unwrap();
        let vel = DofMap::new(&m, SpaceKind::VelocityP2);
        let pres = DofMap::new(&m, SpaceKind::PressureP1);
        let vt = VelocityTable::new(&m, &vel, &velocity_rule(SpaceKind::VelocityP2));
        let a = vector_stiffness(&vt, vel.n_dofs());
        let b = divergence(&vt, vel.n_dofs(), &pres);
        let w = pressure_weights(&m, &pres);
        let (u, p) = saddle_solve(
            &a,
            &b,
            &w,
            vel.dirichlet_mask(),
            &vec![0.0; vel.n_dofs()],
            &vec![0.0; pres.n_dofs()],
        )
        .unwrap();
        assert!(max_abs(&u) == 0.0 && max_abs(&p) == 0.0);
    }
}
