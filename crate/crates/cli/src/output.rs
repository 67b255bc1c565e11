//! energy.csv rows, legacy VTK field files and the JSON run summary.

use std::fmt::Write as _;
use std::path::Path;

use fenep_core::energy::EnergyStepReport;
use fenep_core::mesh::TriMesh;
use fenep_core::space::DofMap;
use fenep_core::tensor::SymTensor2;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// One line of energy.csv; field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub step: usize,
    pub t: f64,
    #[serde(rename = "F_total")]
    pub f_total: f64,
    pub kinetic: f64,
    pub entropy: f64,
    pub kinetic_jump: f64,
    pub viscous: f64,
    pub relaxation: f64,
    pub diffusion_sigma: f64,
    pub diffusion_rho: f64,
    pub forcing: f64,
    pub trace_balance: f64,
    pub min_eig_sigma: f64,
    pub max_trace_sigma: f64,
    pub picard_iters: usize,
    pub residual: f64,
    pub audit_pass: bool,
}

pub const ENERGY_COLUMNS: [&str; 17] = [
    "step",
    "t",
    "F_total",
    "kinetic",
    "entropy",
    "kinetic_jump",
    "viscous",
    "relaxation",
    "diffusion_sigma",
    "diffusion_rho",
    "forcing",
    "trace_balance",
    "min_eig_sigma",
    "max_trace_sigma",
    "picard_iters",
    "residual",
    "audit_pass",
];

impl EnergyRow {
    /// Row 0 describing the initial state.
    pub fn initial(kinetic: f64, entropy: f64, trace_balance: f64, sigma: &[SymTensor2]) -> Self {
        Self {
            step: 0,
            t: 0.0,
            f_total: kinetic + entropy,
            kinetic,
            entropy,
            kinetic_jump: 0.0,
            viscous: 0.0,
            relaxation: 0.0,
            diffusion_sigma: 0.0,
            diffusion_rho: 0.0,
            forcing: 0.0,
            trace_balance,
            min_eig_sigma: sigma.iter().map(|s| s.min_eig()).fold(f64::INFINITY, f64::min),
            max_trace_sigma: sigma.iter().map(|s| s.trace()).fold(f64::NEG_INFINITY, f64::max),
            picard_iters: 0,
            residual: 0.0,
            audit_pass: true,
        }
    }

    pub fn from_report(r: &EnergyStepReport) -> Self {
        Self {
            step: r.step,
            t: r.t,
            f_total: r.f_after,
            kinetic: r.kinetic,
            entropy: r.entropy,
            kinetic_jump: r.kinetic_jump,
            viscous: r.viscous,
            relaxation: r.relaxation,
            diffusion_sigma: r.diffusion_sigma,
            diffusion_rho: r.diffusion_rho,
            forcing: r.forcing,
            trace_balance: r.trace_balance,
            min_eig_sigma: r.min_eig_sigma,
            max_trace_sigma: r.max_trace_sigma,
            picard_iters: r.picard_iters,
            residual: r.residual,
            audit_pass: r.pass,
        }
    }
}

/// Values of a finite element field at the mesh vertices.
pub fn vertex_values(mesh: &TriMesh, map: &DofMap, coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_vertices()];
    for k in 0..mesh.n_cells() {
        for (a, &v) in mesh.cell(k).iter().enumerate() {
            let mut l = [0.0; 3];
            l[a] = 1.0;
            out[v] = map.local(k).iter().map(|d| d.shape.value(l) * coeffs[d.dof]).sum();
        }
    }
    out
}

pub fn vertex_vectors(mesh: &TriMesh, map: &DofMap, coeffs: &[f64]) -> Vec<Vector2<f64>> {
    let mut out = vec![Vector2::zeros(); mesh.n_vertices()];
    for k in 0..mesh.n_cells() {
        for (a, &v) in mesh.cell(k).iter().enumerate() {
            let mut l = [0.0; 3];
            l[a] = 1.0;
            out[v] = map.eval_vector(k, l, coeffs);
        }
    }
    out
}

/// Per-cell mean of a field (the value itself for piecewise constants).
pub fn cell_means(mesh: &TriMesh, map: &DofMap, coeffs: &[f64]) -> Vec<f64> {
    let third = [1.0 / 3.0; 3];
    (0..mesh.n_cells())
        .map(|k| map.local(k).iter().map(|d| d.shape.value(third) * coeffs[d.dof]).sum())
        .collect()
}

#[derive(Default)]
pub struct VtkFields<'a> {
    pub point_vectors: Vec<(&'a str, Vec<Vector2<f64>>)>,
    pub point_scalars: Vec<(&'a str, Vec<f64>)>,
    pub cell_scalars: Vec<(&'a str, Vec<f64>)>,
}

impl<'a> VtkFields<'a> {
    pub fn point_tensor(&mut self, sigma: &[SymTensor2]) {
        self.point_scalars.push(("sig_xx", sigma.iter().map(|s| s.xx).collect()));
        self.point_scalars.push(("sig_xy", sigma.iter().map(|s| s.xy).collect()));
        self.point_scalars.push(("sig_yy", sigma.iter().map(|s| s.yy).collect()));
    }

    pub fn cell_tensor(&mut self, sigma: &[SymTensor2]) {
        self.cell_scalars.push(("sig_xx", sigma.iter().map(|s| s.xx).collect()));
        self.cell_scalars.push(("sig_xy", sigma.iter().map(|s| s.xy).collect()));
        self.cell_scalars.push(("sig_yy", sigma.iter().map(|s| s.yy).collect()));
    }
}

/// Legacy ASCII VTK unstructured grid of triangles.
pub fn vtk_string(mesh: &TriMesh, title: &str, fields: &VtkFields<'_>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:e} {:e} 0", p.x, p.y);
    }
    let nc = mesh.n_cells();
    let _ = writeln!(s, "CELLS {nc} {}", 4 * nc);
    for c in mesh.cells() {
        let _ = writeln!(s, "3 {} {} {}", c[0], c[1], c[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nc}");
    for _ in 0..nc {
        s.push_str("5\n");
    }
    if !fields.point_vectors.is_empty() || !fields.point_scalars.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        for (name, v) in &fields.point_vectors {
            let _ = writeln!(s, "VECTORS {name} double");
            for x in v {
                let _ = writeln!(s, "{:e} {:e} 0", x.x, x.y);
            }
        }
        for (name, v) in &fields.point_scalars {
            scalars(&mut s, name, v);
        }
    }
    if !fields.cell_scalars.is_empty() {
        let _ = writeln!(s, "CELL_DATA {nc}");
        for (name, v) in &fields.cell_scalars {
            scalars(&mut s, name, v);
        }
    }
    s
}

fn scalars(s: &mut String, name: &str, v: &[f64]) {
    let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for x in v {
        let _ = writeln!(s, "{x:e}");
    }
}

pub fn write_vtk(path: &Path, mesh: &TriMesh, title: &str, fields: &VtkFields<'_>) -> CliResult<()> {
    std::fs::write(path, vtk_string(mesh, title, fields))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scheme: String,
    pub scenario: String,
    pub velocity: String,
    pub steps: usize,
    pub final_time: f64,
    pub final_free_energy: f64,
    pub max_residual: f64,
    pub audits_passed: usize,
    pub audits_failed: usize,
    pub diffusion_certified: Option<bool>,
    pub min_eig_sigma_min: f64,
    pub min_eig_sigma_max: f64,
    pub max_trace_sigma: f64,
    pub max_abs_trace_balance: f64,
    pub max_picard_iters: usize,
    pub completed: bool,
    pub error: Option<String>,
}

impl Summary {
    pub fn from_rows(rows: &[EnergyRow]) -> Self {
        let steps = rows.iter().filter(|r| r.step > 0);
        let mut s = Self {
            scheme: String::new(),
            scenario: String::new(),
            velocity: String::new(),
            steps: 0,
            final_time: rows.last().map_or(0.0, |r| r.t),
            final_free_energy: rows.last().map_or(f64::NAN, |r| r.f_total),
            max_residual: 0.0,
            audits_passed: 0,
            audits_failed: 0,
            diffusion_certified: None,
            min_eig_sigma_min: f64::INFINITY,
            min_eig_sigma_max: f64::NEG_INFINITY,
            max_trace_sigma: f64::NEG_INFINITY,
            max_abs_trace_balance: 0.0,
            max_picard_iters: 0,
            completed: false,
            error: None,
        };
        for r in rows {
            s.min_eig_sigma_min = s.min_eig_sigma_min.min(r.min_eig_sigma);
            s.min_eig_sigma_max = s.min_eig_sigma_max.max(r.min_eig_sigma);
            s.max_trace_sigma = s.max_trace_sigma.max(r.max_trace_sigma);
            s.max_abs_trace_balance = s.max_abs_trace_balance.max(r.trace_balance.abs());
        }
        for r in steps {
            s.steps += 1;
            s.max_residual = s.max_residual.max(r.residual);
            s.max_picard_iters = s.max_picard_iters.max(r.picard_iters);
            if r.audit_pass {
                s.audits_passed += 1;
            } else {
                s.audits_failed += 1;
            }
        }
        s
    }
}
