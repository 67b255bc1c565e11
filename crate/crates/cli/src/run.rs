//! Time-loop driver for both schemes.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fenep_core::energy::{entropy_integral, EnergyStepReport, FreeEnergyVariant, StressRef};
use fenep_core::mesh::{Point, TriMesh};
use fenep_core::scheme_p0::{SchemeP0, StateP0};
use fenep_core::scheme_p1diff::{InitialBounds, SchemeP1Diff, StateP1};
use fenep_core::space::{DofMap, SpaceKind};
use fenep_core::tensor::SymTensor2;
use log::{error, info, warn};
use nalgebra::Vector2;

use crate::config::{AuditMode, MeshSource, RunConfig, Scheme};
use crate::error::{CliError, CliResult};
use crate::output::{cell_means, vertex_values, vertex_vectors, write_vtk, EnergyRow, Summary, VtkFields};
use crate::scenario;

pub fn load_mesh(src: &MeshSource) -> CliResult<TriMesh> {
    let mesh = match src {
        MeshSource::Structured(n) => TriMesh::structured_unit_square(*n),
        MeshSource::File(path) => TriMesh::load(path),
    }
    .map_err(|e| match e {
        fenep_core::FenepError::Io(e) => CliError::Mesh(e.to_string()),
        other => CliError::setup(other),
    })?;
    mesh.audit().map_err(CliError::setup)?;
    Ok(mesh)
}

/// energy.csv, VTK files and the running row history of one run.
struct Recorder {
    dir: PathBuf,
    csv: csv::Writer<File>,
    rows: Vec<EnergyRow>,
    cadence: usize,
    n_steps: usize,
    audit: AuditMode,
}

impl Recorder {
    fn new(cfg: &RunConfig, n_steps: usize) -> CliResult<Self> {
        fs::create_dir_all(&cfg.out_dir)?;
        Ok(Self {
            dir: cfg.out_dir.clone(),
            csv: csv::Writer::from_path(cfg.out_dir.join("energy.csv"))?,
            rows: Vec::with_capacity(n_steps + 1),
            cadence: cfg.cadence,
            n_steps,
            audit: cfg.audit,
        })
    }

    fn push(&mut self, row: EnergyRow) -> CliResult<()> {
        if !row.audit_pass {
            let msg = format!("energy audit failed at step {} (t = {})", row.step, row.t);
            match self.audit {
                AuditMode::Strict => error!("{msg}"),
                AuditMode::Warn => warn!("{msg}"),
            }
        }
        self.csv.serialize(&row)?;
        self.csv.flush()?;
        self.rows.push(row);
        Ok(())
    }

    fn record(&mut self, r: &EnergyStepReport) -> CliResult<()> {
        info!(
            "step {} t={:.6} F={:.10e} iters={} residual={:.2e} pass={}",
            r.step, r.t, r.f_after, r.picard_iters, r.residual, r.pass
        );
        self.push(EnergyRow::from_report(r))
    }

    fn wants_fields(&self, step: usize) -> bool {
        step == 0 || step == self.n_steps || (self.cadence > 0 && step.is_multiple_of(self.cadence))
    }

    fn fields_path(&self, step: usize) -> PathBuf {
        self.dir.join(format!("fields_{step:06}.vtk"))
    }

    fn finish(self, cfg: &RunConfig, certified: Option<bool>, failure: Option<&CliError>) -> CliResult<Summary> {
        let mut s = Summary::from_rows(&self.rows);
        s.scheme = cfg.scheme.to_string();
        s.scenario = format!("{:?}", cfg.scenario).to_lowercase();
        s.velocity = cfg.velocity.to_string();
        s.diffusion_certified = certified;
        s.completed = failure.is_none() && s.steps == self.n_steps;
        s.error = failure.map(|e| e.to_string());
        let mut f = File::create(self.dir.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut f, &s)?;
        writeln!(f)?;
        Ok(s)
    }
}

fn pressure_fields<'a>(f: &mut VtkFields<'a>, mesh: &TriMesh, map: &DofMap, p: &[f64]) {
    if map.kind() == SpaceKind::PressureP1 {
        f.point_scalars.push(("pressure", vertex_values(mesh, map, p)));
    } else {
        f.cell_scalars.push(("pressure", cell_means(mesh, map, p)));
    }
}

fn write_p0_fields(path: &Path, s: &SchemeP0, st: &StateP0) -> CliResult<()> {
    let mut f = VtkFields::default();
    f.point_vectors.push(("velocity", vertex_vectors(s.mesh(), s.velocity(), &st.u)));
    pressure_fields(&mut f, s.mesh(), s.pressure(), &st.p);
    f.cell_tensor(&st.sigma);
    write_vtk(path, s.mesh(), &format!("fenep p0 t={}", st.t), &f)
}

fn write_p1_fields(path: &Path, s: &SchemeP1Diff, st: &StateP1) -> CliResult<()> {
    let mut f = VtkFields::default();
    f.point_vectors.push(("velocity", vertex_vectors(s.mesh(), s.velocity(), &st.u)));
    pressure_fields(&mut f, s.mesh(), s.pressure(), &st.p);
    f.point_tensor(&st.sigma);
    f.point_scalars.push(("rho", st.rho.clone()));
    write_vtk(path, s.mesh(), &format!("fenep p1diff t={}", st.t), &f)
}

/// Runs one configuration. Artifacts are written even when the run fails;
/// the error (if any) carries the exit code.
pub fn run(cfg: &RunConfig) -> CliResult<Summary> {
    cfg.validate()?;
    let params = cfg.model_params()?;
    let mesh = load_mesh(&cfg.mesh)?;
    let n_steps = params.schedule.len();
    let mut rec = Recorder::new(cfg, n_steps)?;
    let u0 = scenario::initial_velocity(cfg);
    let sigma0 = scenario::initial_stress(cfg);

    let (outcome, certified) = match cfg.scheme {
        Scheme::P0 => {
            let s = SchemeP0::new(mesh, cfg.velocity, params, cfg.picard).map_err(CliError::setup)?;
            (run_p0(&s, &mut rec, u0, sigma0), None)
        }
        Scheme::P1diff => {
            let s = SchemeP1Diff::new(mesh, cfg.velocity, params, cfg.picard).map_err(CliError::setup)?;
            let certified = s.diffusion_certified();
            if !certified {
                warn!("mesh is not acute or alpha is zero; stress diffusion terms are reported but not certified");
            }
            (run_p1(&s, &mut rec, cfg.dt, u0, sigma0), Some(certified))
        }
    };
    let summary = rec.finish(cfg, certified, outcome.as_ref().err())?;
    outcome?;
    if cfg.audit == AuditMode::Strict && summary.audits_failed > 0 {
        return Err(CliError::Audit(format!(
            "{} of {} steps failed the energy audit",
            summary.audits_failed, summary.steps
        )));
    }
    Ok(summary)
}

fn run_p0(
    s: &SchemeP0,
    rec: &mut Recorder,
    u0: impl Fn(Point) -> Vector2<f64>,
    sigma0: impl Fn(Point) -> SymTensor2,
) -> CliResult<()> {
    let p = s.params();
    let mut st = s.initial_state(u0, sigma0).map_err(CliError::setup)?;
    let entropy = entropy_integral(
        s.mesh(),
        StressRef::P0(&st.sigma),
        &p.reg,
        FreeEnergyVariant::Regularized,
    )
    .map_err(CliError::setup)?;
    rec.push(EnergyRow::initial(
        0.5 * p.re * s.kinetic_norm_sq(&st.u),
        0.5 * p.eps / p.wi * entropy,
        0.0,
        &st.sigma,
    ))?;
    write_p0_fields(&rec.fields_path(0), s, &st)?;
    for n in 0..rec.n_steps {
        let (next, report) = s.step(&st, n).map_err(CliError::solve)?;
        rec.record(&report)?;
        st = next;
        if rec.wants_fields(n + 1) {
            write_p0_fields(&rec.fields_path(n + 1), s, &st)?;
        }
    }
    Ok(())
}

fn run_p1(
    s: &SchemeP1Diff,
    rec: &mut Recorder,
    dt0: f64,
    u0: impl Fn(Point) -> Vector2<f64>,
    sigma0: impl Fn(Point) -> SymTensor2 + Copy,
) -> CliResult<()> {
    let p = s.params();
    let bounds = InitialBounds::sample(s.mesh(), sigma0);
    let mut st = s.project_initial(u0, sigma0, dt0, &bounds).map_err(CliError::setup)?;
    let entropy = entropy_integral(
        s.mesh(),
        StressRef::P1 {
            sigma: &st.sigma,
            rho: &st.rho,
        },
        &p.reg,
        FreeEnergyVariant::DiscreteLumped,
    )
    .map_err(CliError::setup)?;
    rec.push(EnergyRow::initial(
        0.5 * p.re * s.kinetic_norm_sq(&st.u),
        0.5 * p.eps / p.wi * entropy,
        s.trace_balance(&st),
        &st.sigma,
    ))?;
    write_p1_fields(&rec.fields_path(0), s, &st)?;
    for n in 0..rec.n_steps {
        let (next, report) = s.step(&st, n).map_err(CliError::solve)?;
        rec.record(&report)?;
        st = next;
        if rec.wants_fields(n + 1) {
            write_p1_fields(&rec.fields_path(n + 1), s, &st)?;
        }
    }
    Ok(())
}

/// Parses `delta=a,b,c`.
pub fn parse_sweep(spec: &str) -> CliResult<Vec<(String, f64)>> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("sweep '{spec}' must look like delta=a,b,c")))?;
    if key.trim() != "delta" {
        return Err(CliError::Config(format!("only delta sweeps are supported, got '{key}'")));
    }
    values
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .map(|x| (v.to_string(), x))
                .map_err(|_| CliError::Config(format!("sweep value '{v}' is not a number")))
        })
        .collect()
}

/// Repeats the run once per δ value in `out/delta_<v>/`. Every value is
/// attempted; the first error is returned.
pub fn run_sweep(cfg: &RunConfig, values: &[(String, f64)]) -> CliResult<Vec<Summary>> {
    let mut summaries = Vec::new();
    let mut first_err = None;
    for (label, delta) in values {
        let mut c = cfg.clone();
        c.delta = *delta;
        c.out_dir = cfg.out_dir.join(format!("delta_{label}"));
        info!("sweep: delta = {label} -> {}", c.out_dir.display());
        match run(&c) {
            Ok(s) => summaries.push(s),
            Err(e) => {
                error!("delta = {label}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(summaries),
    }
}
