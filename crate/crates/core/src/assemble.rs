//! Assembly of the bilinear forms shared by both schemes.

use nalgebra::{Cholesky, DMatrix, Matrix2, SymmetricEigen, Vector2};

use crate::error::{FenepError, Result};
use crate::mesh::{Point, TriMesh};
use crate::space::{check_pairing, velocity_rule, DofMap, SpaceKind, VelocityTable};
use crate::sparse::Triplets;

/// `∫ u·v` on a velocity space.
pub fn vector_mass(vt: &VelocityTable, n: usize) -> Triplets {
    let mut t = Triplets::new(n, n);
    for cell in &vt.cells {
        for qp in &cell.points {
            for (i, vi) in qp.val.iter().enumerate() {
                for (j, vj) in qp.val.iter().enumerate() {
                    t.push(cell.dofs[i], cell.dofs[j], qp.weight * vi.dot(vj));
                }
            }
        }
    }
    t
}

/// `∫ ∇u : ∇v` on a velocity space.
pub fn vector_stiffness(vt: &VelocityTable, n: usize) -> Triplets {
    let mut t = Triplets::new(n, n);
    for cell in &vt.cells {
        for qp in &cell.points {
            for (i, gi) in qp.grad.iter().enumerate() {
                for (j, gj) in qp.grad.iter().enumerate() {
                    t.push(cell.dofs[i], cell.dofs[j], qp.weight * gi.dot(gj));
                }
            }
        }
    }
    t
}

/// Antisymmetrized convection `½[((w·∇)u)·v − ((w·∇)v)·u]` with `w` a field
/// of the same space.
pub fn skew_convection(vt: &VelocityTable, n: usize, w: &[f64]) -> Triplets {
    let mut t = Triplets::new(n, n);
    for (k, cell) in vt.cells.iter().enumerate() {
        for (q, qp) in cell.points.iter().enumerate() {
            let wq = vt.value(k, q, w);
            let conv: Vec<Vector2<f64>> = qp.grad.iter().map(|g| g * wq).collect();
            for i in 0..qp.val.len() {
                for j in 0..qp.val.len() {
                    let v = 0.5 * qp.weight * (conv[j].dot(&qp.val[i]) - conv[i].dot(&qp.val[j]));
                    t.push(cell.dofs[i], cell.dofs[j], v);
                }
            }
        }
    }
    t
}

/// `B_{qj} = −∫ q div φ_j` (rows: pressure dofs, columns: velocity dofs).
pub fn divergence(vt: &VelocityTable, n_u: usize, pressure: &DofMap) -> Triplets {
    let mut t = Triplets::new(pressure.n_dofs(), n_u);
    for (k, cell) in vt.cells.iter().enumerate() {
        for qp in &cell.points {
            for pd in pressure.local(k) {
                let q = pd.shape.value(qp.lambda);
                for (j, g) in qp.grad.iter().enumerate() {
                    t.push(pd.dof, cell.dofs[j], -qp.weight * q * g.trace());
                }
            }
        }
    }
    t
}

/// `∫ f·v`.
pub fn load_vector(vt: &VelocityTable, n: usize, f: impl Fn(Point) -> Vector2<f64>) -> Vec<f64> {
    let mut b = vec![0.0; n];
    for cell in &vt.cells {
        for qp in &cell.points {
            let fq = f(qp.x);
            for (i, v) in qp.val.iter().enumerate() {
                b[cell.dofs[i]] += qp.weight * fq.dot(v);
            }
        }
    }
    b
}

/// `∫_K ∇φ_j` for every local velocity basis function of every cell.
pub fn cell_gradient_integrals(vt: &VelocityTable) -> Vec<Vec<Matrix2<f64>>> {
    vt.cells
        .iter()
        .map(|cell| {
            let mut acc = vec![Matrix2::zeros(); cell.dofs.len()];
            for qp in &cell.points {
                for (a, g) in acc.iter_mut().zip(&qp.grad) {
                    *a += g * qp.weight;
                }
            }
            acc
        })
        .collect()
}

/// `∫_K λ_a ∇φ_j` for every local vertex `a` and local velocity basis function `j`.
pub fn vertex_gradient_integrals(vt: &VelocityTable) -> Vec<[Vec<Matrix2<f64>>; 3]> {
    vt.cells
        .iter()
        .map(|cell| {
            let mut acc: [Vec<Matrix2<f64>>; 3] =
                std::array::from_fn(|_| vec![Matrix2::zeros(); cell.dofs.len()]);
            for qp in &cell.points {
                for (a, acc_a) in acc.iter_mut().enumerate() {
                    for (x, g) in acc_a.iter_mut().zip(&qp.grad) {
                        *x += g * (qp.weight * qp.lambda[a]);
                    }
                }
            }
            acc
        })
        .collect()
}

/// `∫_K φ_j` for every local velocity basis function.
pub fn cell_value_integrals(vt: &VelocityTable) -> Vec<Vec<Vector2<f64>>> {
    vt.cells
        .iter()
        .map(|cell| {
            let mut acc = vec![Vector2::zeros(); cell.dofs.len()];
            for qp in &cell.points {
                for (a, v) in acc.iter_mut().zip(&qp.val) {
                    *a += v * qp.weight;
                }
            }
            acc
        })
        .collect()
}

/// Scalar P1 stiffness `∫ ∇λ_p·∇λ_q` (exact).
pub fn p1_stiffness(mesh: &TriMesh) -> Triplets {
    let n = mesh.n_vertices();
    let mut t = Triplets::new(n, n);
    for k in 0..mesh.n_cells() {
        let g = mesh.barycentric_gradients(k);
        let c = mesh.cell(k);
        for i in 0..3 {
            for j in 0..3 {
                t.push(c[i], c[j], mesh.area(k) * g[i].dot(&g[j]));
            }
        }
    }
    t
}

/// Scalar P1 consistent mass `∫ λ_p λ_q` (exact).
pub fn p1_mass(mesh: &TriMesh) -> Triplets {
    let n = mesh.n_vertices();
    let mut t = Triplets::new(n, n);
    for k in 0..mesh.n_cells() {
        let c = mesh.cell(k);
        for i in 0..3 {
            for j in 0..3 {
                let f = if i == j { 2.0 } else { 1.0 };
                t.push(c[i], c[j], mesh.area(k) * f / 12.0);
            }
        }
    }
    t
}

/// Mass matrix of a pressure space.
pub fn pressure_mass(mesh: &TriMesh, pressure: &DofMap) -> Triplets {
    match pressure.kind() {
        SpaceKind::PressureP0 => {
            let n = mesh.n_cells();
            let mut t = Triplets::new(n, n);
            for k in 0..n {
                t.push(k, k, mesh.area(k));
            }
            t
        }
        _ => p1_mass(mesh),
    }
}

/// `∫ q_i` for every pressure basis function.
pub fn pressure_weights(mesh: &TriMesh, pressure: &DofMap) -> Vec<f64> {
    match pressure.kind() {
        SpaceKind::PressureP0 => (0..mesh.n_cells()).map(|k| mesh.area(k)).collect(),
        _ => crate::space::lumped_weights(mesh),
    }
}

/// Drops the rows and columns of Dirichlet dofs and puts ones on their diagonal.
pub fn constrain(t: &Triplets, mask: &[bool]) -> Triplets {
    let mut out = Triplets::new(t.n_rows, t.n_cols);
    for &(i, j, v) in &t.entries {
        if !(mask.get(i).copied().unwrap_or(false) || mask.get(j).copied().unwrap_or(false)) {
            out.push(i, j, v);
        }
    }
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out.push(i, i, 1.0);
        }
    }
    out
}

/// Largest dense problem accepted by [`inf_sup_estimate`].
pub const INF_SUP_MAX_N: usize = 16;

/// Discrete inf-sup constant of a velocity/pressure pairing: the square root
/// of the smallest eigenvalue of `B A⁻¹ Bᵀ` relative to the pressure mass on
/// mean-zero pressures, with `A` the vector Laplacian on the constrained
/// velocity space.
///
/// Dense; `mesh` must be no larger than a structured `16 × 16` mesh.
pub fn inf_sup_estimate(mesh: &TriMesh, velocity: SpaceKind, pressure: SpaceKind) -> Result<f64> {
    if velocity != SpaceKind::VelocityP1 {
        check_pairing(velocity, pressure)?;
    } else if pressure != SpaceKind::PressureP1 {
        return Err(FenepError::Argument("P1 velocity pairs only with P1 pressure".into()));
    }
    if mesh.n_cells() > 2 * INF_SUP_MAX_N * INF_SUP_MAX_N {
        return Err(FenepError::Capability(format!(
            "dense inf-sup estimate limited to {} cells, mesh has {}",
            2 * INF_SUP_MAX_N * INF_SUP_MAX_N,
            mesh.n_cells()
        )));
    }
    let vel = DofMap::new(mesh, velocity);
    let pres = DofMap::new(mesh, pressure);
    let vt = VelocityTable::new(mesh, &vel, &velocity_rule(velocity));
    let free: Vec<usize> = (0..vel.n_dofs()).filter(|&i| !vel.is_dirichlet(i)).collect();
    let mut pos = vec![usize::MAX; vel.n_dofs()];
    for (a, &i) in free.iter().enumerate() {
        pos[i] = a;
    }
    let nf = free.len();
    let np = pres.n_dofs();

    let mut a = DMatrix::<f64>::zeros(nf, nf);
    for &(i, j, v) in &vector_stiffness(&vt, vel.n_dofs()).entries {
        if pos[i] != usize::MAX && pos[j] != usize::MAX {
            a[(pos[i], pos[j])] += v;
        }
    }
    let mut bt = DMatrix::<f64>::zeros(nf, np);
    for &(q, j, v) in &divergence(&vt, vel.n_dofs(), &pres).entries {
        if pos[j] != usize::MAX {
            bt[(pos[j], q)] += v;
        }
    }
    let mp = pressure_mass(mesh, &pres).to_csr().to_dense();

    let chol_a = Cholesky::new(a)
        .ok_or_else(|| FenepError::Solver("velocity Laplacian not positive definite".into()))?;
    let s = bt.transpose() * chol_a.solve(&bt);
    let l = Cholesky::new(mp)
        .ok_or_else(|| FenepError::Solver("pressure mass not positive definite".into()))?
        .l();
    let linv: DMatrix<f64> = l
        .clone()
        .try_inverse()
        .ok_or_else(|| FenepError::Solver("pressure mass factor singular".into()))?;
    let mut c: DMatrix<f64> = &linv * s * linv.transpose();
    c = (&c + c.transpose()) * 0.5;

    // deflate the constant pressure, which lies in the kernel of Bᵀ
    let ones = DMatrix::<f64>::from_element(np, 1, 1.0);
    let mut z = l.transpose() * ones;
    z /= z.norm();
    let shift = c.diagonal().iter().copied().fold(0.0, f64::max) * 4.0 + 1.0;
    c += &z * z.transpose() * shift;

    let eig = SymmetricEigen::new(c);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(min.max(0.0).sqrt())
}
