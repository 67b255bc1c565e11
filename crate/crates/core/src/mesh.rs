//! Conforming triangulations of a polygonal domain.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::error::{FenepError, Result};

pub type Point = Vector2<f64>;

/// A mesh edge. Interior edges have both a left and a right cell, with the
/// lower cell index on the left and the unit normal pointing left → right.
/// Boundary edges carry the outward normal of their only cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: Option<usize>,
    pub normal: Vector2<f64>,
    pub length: f64,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.right.is_some()
    }
}

/// Affine map `x = P₀ + B x̂` from the reference triangle onto a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub origin: Point,
    pub b: Matrix2<f64>,
    pub b_inv_t: Matrix2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshAudit {
    pub non_obtuse: bool,
    pub max_regularity_ratio: f64,
    pub quasi_uniform_ratio: f64,
    pub min_area: f64,
    /// Cells whose three vertices all lie on the boundary.
    pub boundary_only_cells: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    /// `cell_edges[k][i]` is the edge opposite local vertex `i`.
    cell_edges: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    area: Vec<f64>,
    diameter: Vec<f64>,
    inradius: Vec<f64>,
}

impl TriMesh {
    /// Builds a mesh, reorienting clockwise cells and validating conformity.
    pub fn new(vertices: Vec<Point>, mut cells: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        for (k, c) in cells.iter_mut().enumerate() {
            if c.iter().any(|&v| v >= nv) {
                return Err(FenepError::Mesh(format!(
                    "cell {k} references a vertex outside 0..{nv}"
                )));
            }
            if c[0] == c[1] || c[1] == c[2] || c[0] == c[2] {
                return Err(FenepError::Mesh(format!(
                    "cell {k} repeats a vertex index: {c:?}"
                )));
            }
            let a = signed_area(&vertices, *c);
            if a == 0.0 || !a.is_finite() {
                return Err(FenepError::Mesh(format!("cell {k} is degenerate (area {a})")));
            }
            if a < 0.0 {
                c.swap(1, 2);
            }
        }
        check_duplicate_vertices(&vertices)?;

        let mut edge_cells: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (k, c) in cells.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (c[(i + 1) % 3], c[(i + 2) % 3]);
                edge_cells
                    .entry((a.min(b), a.max(b)))
                    .or_default()
                    .push((k, i));
            }
        }
        let mut keys: Vec<_> = edge_cells.keys().copied().collect();
        keys.sort_unstable();

        let mut edges = Vec::with_capacity(keys.len());
        let mut cell_edges = vec![[usize::MAX; 3]; cells.len()];
        let mut boundary_vertex = vec![false; nv];
        for key in keys {
            let mut owners = edge_cells.remove(&key).expect("key present");
            if owners.len() > 2 {
                return Err(FenepError::Mesh(format!(
                    "edge {key:?} is shared by {} cells",
                    owners.len()
                )));
            }
            owners.sort_unstable();
            let e = edges.len();
            for &(k, i) in &owners {
                cell_edges[k][i] = e;
            }
            let (left, li) = owners[0];
            let right = owners.get(1).map(|&(k, _)| k);
            let (pa, pb) = (vertices[key.0], vertices[key.1]);
            let t = pb - pa;
            let length = t.norm();
            let mut normal = Vector2::new(t.y, -t.x) / length;
            // point away from the left cell's opposite vertex
            let opposite = vertices[cells[left][li]];
            if normal.dot(&(opposite - pa)) > 0.0 {
                normal = -normal;
            }
            if right.is_none() {
                boundary_vertex[key.0] = true;
                boundary_vertex[key.1] = true;
            }
            edges.push(Edge {
                vertices: [key.0, key.1],
                left,
                right,
                normal,
                length,
            });
        }

        let mut area = Vec::with_capacity(cells.len());
        let mut diameter = Vec::with_capacity(cells.len());
        let mut inradius = Vec::with_capacity(cells.len());
        for c in &cells {
            let a = signed_area(&vertices, *c);
            let l: [f64; 3] =
                std::array::from_fn(|i| (vertices[c[(i + 1) % 3]] - vertices[c[(i + 2) % 3]]).norm());
            area.push(a);
            diameter.push(l[0].max(l[1]).max(l[2]));
            inradius.push(2.0 * a / (l[0] + l[1] + l[2]));
        }

        let mesh = Self {
            vertices,
            cells,
            edges,
            cell_edges,
            boundary_vertex,
            area,
            diameter,
            inradius,
        };
        mesh.check_hanging_vertices()?;
        Ok(mesh)
    }

    /// Unit square split into `n × n` squares, each cut along the same
    /// diagonal into two right triangles.
    pub fn structured_unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FenepError::Argument("structured mesh needs n >= 1".into()));
        }
        let h = 1.0 / n as f64;
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Point::new(i as f64 * h, j as f64 * h));
            }
        }
        // exact unit boundary despite rounding in i*h
        for v in &mut vertices {
            v.x = (v.x * n as f64).round() / n as f64;
            v.y = (v.y * n as f64).round() / n as f64;
        }
        let mut cells = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                cells.push([a, b, c]);
                cells.push([a, c, d]);
            }
        }
        Self::new(vertices, cells)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn cell(&self, k: usize) -> [usize; 3] {
        self.cells[k]
    }

    pub fn cell_points(&self, k: usize) -> [Point; 3] {
        let c = self.cells[k];
        [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn internal_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_interior())
    }

    pub fn n_internal_edges(&self) -> usize {
        self.internal_edges().count()
    }

    pub fn cell_edges(&self, k: usize) -> [usize; 3] {
        self.cell_edges[k]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn area(&self, k: usize) -> f64 {
        self.area[k]
    }

    pub fn diameter(&self, k: usize) -> f64 {
        self.diameter[k]
    }

    pub fn inradius(&self, k: usize) -> f64 {
        self.inradius[k]
    }

    /// Mesh size `h = max_k h_k`.
    pub fn h(&self) -> f64 {
        self.diameter.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        self.area.iter().sum()
    }

    pub fn affine_map(&self, k: usize) -> AffineMap {
        let [p0, p1, p2] = self.cell_points(k);
        let b = Matrix2::from_columns(&[p1 - p0, p2 - p0]);
        let b_inv_t = b
            .try_inverse()
            .expect("cell areas are validated to be nonzero")
            .transpose();
        AffineMap {
            origin: p0,
            b,
            b_inv_t,
        }
    }

    /// Constant gradients of the three barycentric coordinates on cell `k`.
    pub fn barycentric_gradients(&self, k: usize) -> [Vector2<f64>; 3] {
        let m = self.affine_map(k);
        let g1 = m.b_inv_t.column(0).into_owned();
        let g2 = m.b_inv_t.column(1).into_owned();
        [-(g1 + g2), g1, g2]
    }

    /// Maps barycentric coordinates on cell `k` to a physical point.
    pub fn point_at(&self, k: usize, lambda: [f64; 3]) -> Point {
        let p = self.cell_points(k);
        p[0] * lambda[0] + p[1] * lambda[1] + p[2] * lambda[2]
    }

    pub fn audit(&self) -> Result<MeshAudit> {
        let mut non_obtuse = true;
        let mut max_ratio: f64 = 0.0;
        let mut min_area = f64::INFINITY;
        for k in 0..self.n_cells() {
            if self.area[k] <= 0.0 {
                return Err(FenepError::Mesh(format!(
                    "cell {k} has nonpositive area {}",
                    self.area[k]
                )));
            }
            let g = self.barycentric_gradients(k);
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let tol = 1e-14 * g[i].norm() * g[j].norm();
                    if g[i].dot(&g[j]) > tol {
                        non_obtuse = false;
                    }
                }
            }
            max_ratio = max_ratio.max(self.diameter[k] / self.inradius[k]);
            min_area = min_area.min(self.area[k]);
        }
        let hmax = self.h();
        let hmin = self.diameter.iter().copied().fold(f64::INFINITY, f64::min);
        let boundary_only_cells = self
            .cells
            .iter()
            .filter(|c| c.iter().all(|&v| self.boundary_vertex[v]))
            .count();
        Ok(MeshAudit {
            non_obtuse,
            max_regularity_ratio: max_ratio,
            quasi_uniform_ratio: hmax / hmin,
            min_area,
            boundary_only_cells,
        })
    }

    fn check_hanging_vertices(&self) -> Result<()> {
        for e in self.edges.iter().filter(|e| !e.is_interior()) {
            let (a, b) = (self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]);
            let t = b - a;
            let len2 = t.norm_squared();
            for (v, p) in self.vertices.iter().enumerate() {
                if v == e.vertices[0] || v == e.vertices[1] || !self.boundary_vertex[v] {
                    continue;
                }
                let s = (p - a).dot(&t) / len2;
                let dist = ((p - a) - t * s).norm();
                if s > 1e-12 && s < 1.0 - 1e-12 && dist <= 1e-12 * len2.sqrt() {
                    return Err(FenepError::Mesh(format!(
                        "vertex {v} lies inside edge {:?}: nonconforming mesh",
                        e.vertices
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("tri-mesh 2d v1\n");
        let _ = writeln!(s, "{} {}", self.n_vertices(), self.n_cells());
        for p in &self.vertices {
            let _ = writeln!(s, "{} {}", p.x, p.y);
        }
        for c in &self.cells {
            let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_err = |line: usize, msg: String| FenepError::Parse { line, msg };

        let (line, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty mesh file".into()))?;
        if header != "tri-mesh 2d v1" {
            return Err(parse_err(line, format!("unexpected header '{header}'")));
        }
        let (line, counts) = lines
            .next()
            .ok_or_else(|| parse_err(line + 1, "missing vertex/cell counts".into()))?;
        let counts: Vec<usize> = counts
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| parse_err(line, format!("bad count '{t}': {e}"))))
            .collect::<Result<_>>()?;
        let [nv, nc] = counts[..] else {
            return Err(parse_err(line, "expected '<n_vertices> <n_cells>'".into()));
        };

        let mut vertices = Vec::with_capacity(nv);
        let mut last = line;
        for _ in 0..nv {
            let (line, l) = lines
                .next()
                .ok_or_else(|| parse_err(last + 1, "unexpected end of vertex list".into()))?;
            last = line;
            let xy: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| parse_err(line, format!("bad coordinate '{t}': {e}"))))
                .collect::<Result<_>>()?;
            let [x, y] = xy[..] else {
                return Err(parse_err(line, "expected 'x y'".into()));
            };
            vertices.push(Point::new(x, y));
        }
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (line, l) = lines
                .next()
                .ok_or_else(|| parse_err(last + 1, "unexpected end of cell list".into()))?;
            last = line;
            let ijk: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| parse_err(line, format!("bad index '{t}': {e}"))))
                .collect::<Result<_>>()?;
            let [i, j, k] = ijk[..] else {
                return Err(parse_err(line, "expected 'i j k'".into()));
            };
            cells.push([i, j, k]);
        }
        if let Some((line, _)) = lines.next() {
            return Err(parse_err(line, "trailing content after cell list".into()));
        }
        Self::new(vertices, cells)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn signed_area(vertices: &[Point], c: [usize; 3]) -> f64 {
    let (a, b, d) = (vertices[c[0]], vertices[c[1]], vertices[c[2]]);
    0.5 * ((b.x - a.x) * (d.y - a.y) - (d.x - a.x) * (b.y - a.y))
}

fn check_duplicate_vertices(vertices: &[Point]) -> Result<()> {
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| {
        vertices[a]
            .x
            .total_cmp(&vertices[b].x)
            .then(vertices[a].y.total_cmp(&vertices[b].y))
    });
    for w in order.windows(2) {
        if vertices[w[0]] == vertices[w[1]] {
            return Err(FenepError::Mesh(format!(
                "vertices {} and {} coincide: nonconforming mesh",
                w[0].min(w[1]),
                w[0].max(w[1])
            )));
        }
    }
    Ok(())
}
