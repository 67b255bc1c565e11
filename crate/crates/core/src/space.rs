//! Finite element spaces, degree-of-freedom maps and tabulated bases.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};

use crate::error::{FenepError, Result};
use crate::mesh::{Point, TriMesh};
use crate::quadrature::QuadratureRule;
use crate::tensor::SymTensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    VelocityP2,
    VelocityP2Reduced,
    VelocityMini,
    /// Continuous P1 velocity: not inf-sup stable, kept as a test control.
    VelocityP1,
    PressureP0,
    PressureP1,
    StressP0Sym,
    StressP1Sym,
    TraceP1,
}

impl SpaceKind {
    pub fn is_velocity(self) -> bool {
        matches!(
            self,
            Self::VelocityP2 | Self::VelocityP2Reduced | Self::VelocityMini | Self::VelocityP1
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::VelocityP2 => "p2",
            Self::VelocityP2Reduced => "p2-reduced",
            Self::VelocityMini => "mini",
            Self::VelocityP1 => "p1",
            Self::PressureP0 => "pressure-p0",
            Self::PressureP1 => "pressure-p1",
            Self::StressP0Sym => "stress-p0",
            Self::StressP1Sym => "stress-p1",
            Self::TraceP1 => "trace-p1",
        }
    }
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpaceKind {
    type Err = FenepError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "p2" => Self::VelocityP2,
            "p2-reduced" => Self::VelocityP2Reduced,
            "mini" => Self::VelocityMini,
            "p1" => Self::VelocityP1,
            "pressure-p0" => Self::PressureP0,
            "pressure-p1" => Self::PressureP1,
            "stress-p0" => Self::StressP0Sym,
            "stress-p1" => Self::StressP1Sym,
            "trace-p1" => Self::TraceP1,
            other => return Err(FenepError::Argument(format!("unknown space kind '{other}'"))),
        })
    }
}

/// Scalar shape functions in barycentric form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Constant,
    Linear(usize),
    QuadVertex(usize),
    /// `4 λ_a λ_b`, equal to one at the edge midpoint.
    QuadEdge(usize, usize),
    /// `27 λ₀ λ₁ λ₂`.
    Bubble,
}

impl Shape {
    pub fn value(self, l: [f64; 3]) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Linear(i) => l[i],
            Self::QuadVertex(i) => l[i] * (2.0 * l[i] - 1.0),
            Self::QuadEdge(a, b) => 4.0 * l[a] * l[b],
            Self::Bubble => 27.0 * l[0] * l[1] * l[2],
        }
    }

    pub fn grad(self, l: [f64; 3], g: &[Vector2<f64>; 3]) -> Vector2<f64> {
        match self {
            Self::Constant => Vector2::zeros(),
            Self::Linear(i) => g[i],
            Self::QuadVertex(i) => g[i] * (4.0 * l[i] - 1.0),
            Self::QuadEdge(a, b) => (g[a] * l[b] + g[b] * l[a]) * 4.0,
            Self::Bubble => (g[0] * (l[1] * l[2]) + g[1] * (l[0] * l[2]) + g[2] * (l[0] * l[1])) * 27.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attachment {
    Vertex(usize),
    Edge(usize),
    Cell(usize),
}

/// One local basis function: a scalar shape times a fixed direction
/// (velocity spaces) or times one (scalar spaces).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalDof {
    pub dof: usize,
    pub shape: Shape,
    pub dir: Vector2<f64>,
}

#[derive(Clone, Debug)]
pub struct DofMap {
    kind: SpaceKind,
    n_dofs: usize,
    basis: Vec<Vec<LocalDof>>,
    attachment: Vec<Attachment>,
    dirichlet: Vec<bool>,
}

impl DofMap {
    pub fn new(mesh: &TriMesh, kind: SpaceKind) -> Self {
        let (np, ne, nk) = (mesh.n_vertices(), mesh.n_edges(), mesh.n_cells());
        let ex = Vector2::new(1.0, 0.0);
        let ey = Vector2::new(0.0, 1.0);
        let one = Vector2::new(1.0, 1.0);

        let mut attachment = Vec::new();
        let n_dofs = match kind {
            SpaceKind::VelocityP2 => {
                for v in 0..np {
                    attachment.extend([Attachment::Vertex(v); 2]);
                }
                for e in 0..ne {
                    attachment.extend([Attachment::Edge(e); 2]);
                }
                2 * (np + ne)
            }
            SpaceKind::VelocityP2Reduced => {
                for v in 0..np {
                    attachment.extend([Attachment::Vertex(v); 2]);
                }
                attachment.extend((0..ne).map(Attachment::Edge));
                2 * np + ne
            }
            SpaceKind::VelocityMini => {
                for v in 0..np {
                    attachment.extend([Attachment::Vertex(v); 2]);
                }
                for k in 0..nk {
                    attachment.extend([Attachment::Cell(k); 2]);
                }
                2 * (np + nk)
            }
            SpaceKind::VelocityP1 => {
                for v in 0..np {
                    attachment.extend([Attachment::Vertex(v); 2]);
                }
                2 * np
            }
            SpaceKind::PressureP0 => {
                attachment.extend((0..nk).map(Attachment::Cell));
                nk
            }
            SpaceKind::PressureP1 | SpaceKind::TraceP1 => {
                attachment.extend((0..np).map(Attachment::Vertex));
                np
            }
            SpaceKind::StressP0Sym => {
                for k in 0..nk {
                    attachment.extend([Attachment::Cell(k); 3]);
                }
                3 * nk
            }
            SpaceKind::StressP1Sym => {
                for v in 0..np {
                    attachment.extend([Attachment::Vertex(v); 3]);
                }
                3 * np
            }
        };

        let mut basis = Vec::with_capacity(nk);
        for k in 0..nk {
            let c = mesh.cell(k);
            let ce = mesh.cell_edges(k);
            let mut local = Vec::new();
            let vertex_vec = |local: &mut Vec<LocalDof>, shape: fn(usize) -> Shape| {
                for (i, &v) in c.iter().enumerate() {
                    local.push(LocalDof { dof: 2 * v, shape: shape(i), dir: ex });
                    local.push(LocalDof { dof: 2 * v + 1, shape: shape(i), dir: ey });
                }
            };
            match kind {
                SpaceKind::VelocityP2 => {
                    vertex_vec(&mut local, Shape::QuadVertex);
                    for (i, &e) in ce.iter().enumerate() {
                        let s = Shape::QuadEdge((i + 1) % 3, (i + 2) % 3);
                        local.push(LocalDof { dof: 2 * (np + e), shape: s, dir: ex });
                        local.push(LocalDof { dof: 2 * (np + e) + 1, shape: s, dir: ey });
                    }
                }
                SpaceKind::VelocityP2Reduced => {
                    vertex_vec(&mut local, Shape::Linear);
                    for (i, &e) in ce.iter().enumerate() {
                        let s = Shape::QuadEdge((i + 1) % 3, (i + 2) % 3);
                        let n = mesh.edges()[e].normal;
                        local.push(LocalDof { dof: 2 * np + e, shape: s, dir: n });
                    }
                }
                SpaceKind::VelocityMini => {
                    vertex_vec(&mut local, Shape::Linear);
                    local.push(LocalDof { dof: 2 * (np + k), shape: Shape::Bubble, dir: ex });
                    local.push(LocalDof { dof: 2 * (np + k) + 1, shape: Shape::Bubble, dir: ey });
                }
                SpaceKind::VelocityP1 => vertex_vec(&mut local, Shape::Linear),
                SpaceKind::PressureP0 => {
                    local.push(LocalDof { dof: k, shape: Shape::Constant, dir: one });
                }
                SpaceKind::PressureP1 | SpaceKind::TraceP1 => {
                    for (i, &v) in c.iter().enumerate() {
                        local.push(LocalDof { dof: v, shape: Shape::Linear(i), dir: one });
                    }
                }
                SpaceKind::StressP0Sym => {
                    for comp in 0..3 {
                        local.push(LocalDof { dof: 3 * k + comp, shape: Shape::Constant, dir: one });
                    }
                }
                SpaceKind::StressP1Sym => {
                    for (i, &v) in c.iter().enumerate() {
                        for comp in 0..3 {
                            local.push(LocalDof { dof: 3 * v + comp, shape: Shape::Linear(i), dir: one });
                        }
                    }
                }
            }
            basis.push(local);
        }

        let dirichlet = if kind.is_velocity() {
            attachment
                .iter()
                .map(|a| match *a {
                    Attachment::Vertex(v) => mesh.is_boundary_vertex(v),
                    Attachment::Edge(e) => !mesh.edges()[e].is_interior(),
                    Attachment::Cell(_) => false,
                })
                .collect()
        } else {
            vec![false; n_dofs]
        };

        Self {
            kind,
            n_dofs,
            basis,
            attachment,
            dirichlet,
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn local(&self, k: usize) -> &[LocalDof] {
        &self.basis[k]
    }

    pub fn cell_dofs(&self, k: usize) -> Vec<usize> {
        self.basis[k].iter().map(|d| d.dof).collect()
    }

    pub fn attachment(&self, dof: usize) -> Attachment {
        self.attachment[dof]
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet[dof]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    /// Evaluates a velocity field at barycentric point `l` of cell `k`.
    pub fn eval_vector(&self, k: usize, l: [f64; 3], coeffs: &[f64]) -> Vector2<f64> {
        self.basis[k]
            .iter()
            .map(|d| d.dir * (d.shape.value(l) * coeffs[d.dof]))
            .sum()
    }

    /// Velocity gradient `(∇u)_{ab} = ∂_b u_a` at barycentric point `l` of cell `k`.
    pub fn eval_vector_grad(&self, mesh: &TriMesh, k: usize, l: [f64; 3], coeffs: &[f64]) -> Matrix2<f64> {
        let g = mesh.barycentric_gradients(k);
        self.basis[k]
            .iter()
            .map(|d| d.dir * d.shape.grad(l, &g).transpose() * coeffs[d.dof])
            .sum()
    }

    /// Interpolates a vector function: vertex and edge dofs by nodal values,
    /// edge-normal and cell bubbles by matching the midpoint / centroid.
    /// Boundary dofs are not masked.
    pub fn interpolate_vector(&self, mesh: &TriMesh, f: impl Fn(Point) -> Vector2<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.n_dofs];
        let mut done = vec![false; self.n_dofs];
        for k in 0..mesh.n_cells() {
            // nodal dofs first, then bubbles against the remainder
            for d in &self.basis[k] {
                if done[d.dof] {
                    continue;
                }
                let node = match d.shape {
                    Shape::Linear(i) | Shape::QuadVertex(i) => {
                        let mut l = [0.0; 3];
                        l[i] = 1.0;
                        Some(l)
                    }
                    Shape::QuadEdge(a, b) if self.kind == SpaceKind::VelocityP2 => {
                        let mut l = [0.0; 3];
                        l[a] = 0.5;
                        l[b] = 0.5;
                        Some(l)
                    }
                    _ => None,
                };
                if let Some(l) = node {
                    x[d.dof] = f(mesh.point_at(k, l)).dot(&d.dir);
                    done[d.dof] = true;
                }
            }
        }
        for k in 0..mesh.n_cells() {
            for d in &self.basis[k] {
                if done[d.dof] {
                    continue;
                }
                let l = match d.shape {
                    Shape::QuadEdge(a, b) => {
                        let mut l = [0.0; 3];
                        l[a] = 0.5;
                        l[b] = 0.5;
                        l
                    }
                    Shape::Bubble => [1.0 / 3.0; 3],
                    _ => unreachable!("nodal dofs handled above"),
                };
                // value of the nodal part at the bubble's node
                let nodal: Vector2<f64> = self.basis[k]
                    .iter()
                    .filter(|o| done[o.dof])
                    .map(|o| o.dir * (o.shape.value(l) * x[o.dof]))
                    .sum();
                let target = f(mesh.point_at(k, l)) - nodal;
                let peak = d.shape.value(l);
                x[d.dof] = target.dot(&d.dir) / (peak * d.dir.norm_squared());
                done[d.dof] = true;
            }
        }
        x
    }

    /// Zeroes the Dirichlet dofs of a coefficient vector.
    pub fn apply_dirichlet(&self, x: &mut [f64]) {
        for (v, &d) in x.iter_mut().zip(&self.dirichlet) {
            if d {
                *v = 0.0;
            }
        }
    }
}

/// Velocity basis values and gradients tabulated at the quadrature points
/// of every cell.
#[derive(Clone, Debug)]
pub struct VelocityTable {
    pub cells: Vec<CellTable>,
}

#[derive(Clone, Debug)]
pub struct CellTable {
    pub dofs: Vec<usize>,
    pub points: Vec<QPoint>,
}

#[derive(Clone, Debug)]
pub struct QPoint {
    /// Quadrature weight including the cell area.
    pub weight: f64,
    pub lambda: [f64; 3],
    pub x: Point,
    pub val: Vec<Vector2<f64>>,
    pub grad: Vec<Matrix2<f64>>,
}

impl VelocityTable {
    pub fn new(mesh: &TriMesh, space: &DofMap, rule: &QuadratureRule) -> Self {
        let cells = (0..mesh.n_cells())
            .map(|k| {
                let g = mesh.barycentric_gradients(k);
                let area = mesh.area(k);
                let local = space.local(k);
                let points = rule
                    .iter()
                    .map(|(l, w)| QPoint {
                        weight: w * area,
                        lambda: l,
                        x: mesh.point_at(k, l),
                        val: local.iter().map(|d| d.dir * d.shape.value(l)).collect(),
                        grad: local
                            .iter()
                            .map(|d| d.dir * d.shape.grad(l, &g).transpose())
                            .collect(),
                    })
                    .collect();
                CellTable {
                    dofs: local.iter().map(|d| d.dof).collect(),
                    points,
                }
            })
            .collect();
        Self { cells }
    }

    pub fn value(&self, k: usize, q: usize, coeffs: &[f64]) -> Vector2<f64> {
        let c = &self.cells[k];
        c.points[q]
            .val
            .iter()
            .zip(&c.dofs)
            .map(|(v, &d)| v * coeffs[d])
            .sum()
    }

    pub fn gradient(&self, k: usize, q: usize, coeffs: &[f64]) -> Matrix2<f64> {
        let c = &self.cells[k];
        c.points[q]
            .grad
            .iter()
            .zip(&c.dofs)
            .map(|(g, &d)| g * coeffs[d])
            .sum()
    }
}

/// Default quadrature for a velocity space: degree 4 for polynomial degree
/// two, degree 8 when cubic bubbles are present.
pub fn velocity_rule(kind: SpaceKind) -> QuadratureRule {
    match kind {
        SpaceKind::VelocityMini => QuadratureRule::order8(),
        _ => QuadratureRule::order4(),
    }
}

/// Rule for the convection form (one degree higher than the mass form).
pub fn convection_rule(kind: SpaceKind) -> QuadratureRule {
    match kind {
        SpaceKind::VelocityMini => QuadratureRule::order8(),
        _ => QuadratureRule::order5(),
    }
}

/// Vertex interpolation π_h of a scalar function.
pub fn pi_h(mesh: &TriMesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    mesh.vertices().iter().map(|&p| f(p)).collect()
}

/// Vertex interpolation π_h of a tensor function.
pub fn pi_h_tensor(mesh: &TriMesh, f: impl Fn(Point) -> SymTensor2) -> Vec<SymTensor2> {
    mesh.vertices().iter().map(|&p| f(p)).collect()
}

/// Evaluates a P1 field at barycentric point `l` of cell `k`.
pub fn eval_p1(mesh: &TriMesh, k: usize, l: [f64; 3], vals: &[f64]) -> f64 {
    let c = mesh.cell(k);
    l[0] * vals[c[0]] + l[1] * vals[c[1]] + l[2] * vals[c[2]]
}

pub fn eval_p1_tensor(mesh: &TriMesh, k: usize, l: [f64; 3], vals: &[SymTensor2]) -> SymTensor2 {
    let c = mesh.cell(k);
    vals[c[0]] * l[0] + vals[c[1]] * l[1] + vals[c[2]] * l[2]
}

/// Constant gradient of a P1 field on cell `k`.
pub fn grad_p1(mesh: &TriMesh, k: usize, vals: &[f64]) -> Vector2<f64> {
    let c = mesh.cell(k);
    let g = mesh.barycentric_gradients(k);
    g[0] * vals[c[0]] + g[1] * vals[c[1]] + g[2] * vals[c[2]]
}

/// Lumped mass weights `m_p = ∫ λ_p = Σ_{K ∋ p} |K|/3`.
pub fn lumped_weights(mesh: &TriMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_vertices()];
    for k in 0..mesh.n_cells() {
        for v in mesh.cell(k) {
            m[v] += mesh.area(k) / 3.0;
        }
    }
    m
}

/// `∫ π_h[q]` by the vertex rule.
pub fn lumped_integrate(mesh: &TriMesh, vertex_values: &[f64]) -> f64 {
    lumped_weights(mesh)
        .iter()
        .zip(vertex_values)
        .map(|(m, v)| m * v)
        .sum()
}

/// `∫ f` by a quadrature rule applied on every cell.
pub fn integrate(mesh: &TriMesh, rule: &QuadratureRule, f: impl Fn(usize, [f64; 3], Point) -> f64) -> f64 {
    let mut s = 0.0;
    for k in 0..mesh.n_cells() {
        let a = mesh.area(k);
        for (l, w) in rule.iter() {
            s += w * a * f(k, l, mesh.point_at(k, l));
        }
    }
    s
}

/// Checks that `kind` is admissible for the given scheme pairing.
pub fn check_pairing(velocity: SpaceKind, pressure: SpaceKind) -> Result<()> {
    use SpaceKind::*;
    match (velocity, pressure) {
        (VelocityP2 | VelocityP2Reduced, PressureP0) | (VelocityP2 | VelocityMini, PressureP1) => Ok(()),
        _ => Err(FenepError::Argument(format!(
            "inadmissible element pairing {velocity}/{pressure}"
        ))),
    }
}
