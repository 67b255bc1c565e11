//! Offline re-check of an energy.csv file.

use std::path::Path;

use fenep_core::energy::slack;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::EnergyRow;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowAudit {
    pub step: usize,
    pub margin: f64,
    pub slack: f64,
    pub pass: bool,
    /// The pass flag stored in the file disagrees with the recomputed one.
    pub flag_mismatch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub rows: Vec<RowAudit>,
    pub failed: usize,
    pub mismatched: usize,
    pub worst_margin: f64,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// `F_{n-1} + forcing + slack ≥ F_n + kinetic_jump + viscous + relaxation
/// + diffusion_sigma + diffusion_rho` for every step row. The diffusion
/// columns are dropped when `include_diffusion` is false.
pub fn audit_rows(rows: &[EnergyRow], tol: f64, include_diffusion: bool) -> CliResult<AuditReport> {
    let mut out = Vec::new();
    for pair in rows.windows(2) {
        let (prev, r) = (&pair[0], &pair[1]);
        if r.step != prev.step + 1 {
            return Err(CliError::Audit(format!("step {} follows step {}", r.step, prev.step)));
        }
        let s = slack(tol, prev.f_total, r.f_total);
        let diffusion = if include_diffusion { r.diffusion_sigma + r.diffusion_rho } else { 0.0 };
        let dissipation = r.kinetic_jump + r.viscous + r.relaxation + diffusion;
        let margin = prev.f_total + r.forcing + s - (r.f_total + dissipation);
        let pass = margin >= 0.0;
        out.push(RowAudit {
            step: r.step,
            margin,
            slack: s,
            pass,
            flag_mismatch: pass != r.audit_pass,
        });
    }
    Ok(AuditReport {
        failed: out.iter().filter(|r| !r.pass).count(),
        mismatched: out.iter().filter(|r| r.flag_mismatch).count(),
        worst_margin: out.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min),
        rows: out,
    })
}

pub fn read_rows(path: &Path) -> CliResult<Vec<EnergyRow>> {
    let mut rd = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| CliError::Config(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != crate::output::ENERGY_COLUMNS {
        return Err(CliError::Config(format!("unexpected energy.csv header: {}", header.join(","))));
    }
    rd.deserialize()
        .collect::<Result<Vec<EnergyRow>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn audit_file(path: &Path, tol: f64, include_diffusion: bool) -> CliResult<AuditReport> {
    let rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(CliError::Config(format!("{} has no rows", path.display())));
    }
    audit_rows(&rows, tol, include_diffusion)
}
