//! Run configuration: `key = value` lines under `[model]`, `[mesh]`,
//! `[time]`, `[solver]` and `[output]`.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use fenep_core::nlsolve::PicardConfig;
use fenep_core::params::{ModelParams, TimeSchedule};
use fenep_core::space::SpaceKind;
use fenep_core::tensor::RegParams;
use ini::Ini;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    P0,
    P1diff,
}

impl FromStr for Scheme {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "p0" => Ok(Self::P0),
            "p1diff" => Ok(Self::P1diff),
            _ => Err(CliError::Config(format!("unknown scheme '{s}' (expected p0 or p1diff)"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::P0 => "p0",
            Self::P1diff => "p1diff",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Relax,
    Decay,
    ForcedCavity,
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "relax" => Ok(Self::Relax),
            "decay" => Ok(Self::Decay),
            "forced-cavity" => Ok(Self::ForcedCavity),
            _ => Err(CliError::Config(format!(
                "unknown scenario '{s}' (expected relax, decay or forced-cavity)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditMode {
    Strict,
    Warn,
}

impl FromStr for AuditMode {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "strict" => Ok(Self::Strict),
            "warn" => Ok(Self::Warn),
            _ => Err(CliError::Config(format!("unknown audit mode '{s}' (expected strict or warn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshSource {
    Structured(usize),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub velocity: SpaceKind,
    pub scenario: Scenario,
    pub re: f64,
    pub wi: f64,
    pub eps: f64,
    pub b: f64,
    pub delta: f64,
    pub alpha: f64,
    pub forcing_amplitude: f64,
    pub vortex_amplitude: f64,
    pub mesh: MeshSource,
    pub dt: f64,
    pub t_max: f64,
    pub picard: PicardConfig,
    pub audit: AuditMode,
    pub out_dir: PathBuf,
    /// VTK output every `cadence` steps; 0 writes only the first and last fields.
    pub cadence: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::P0,
            velocity: SpaceKind::VelocityP2,
            scenario: Scenario::Relax,
            re: 1.0,
            wi: 1.0,
            eps: 0.5,
            b: 5.0,
            delta: 0.1,
            alpha: 0.1,
            forcing_amplitude: 10.0,
            vortex_amplitude: 10.0,
            mesh: MeshSource::Structured(8),
            dt: 0.1,
            t_max: 1.0,
            picard: PicardConfig::default(),
            audit: AuditMode::Strict,
            out_dir: PathBuf::from("out"),
            cadence: 10,
        }
    }
}

fn number(key: &str, v: &str) -> CliResult<f64> {
    match v {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => v
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: expected a number, got '{v}'"))),
    }
}

fn count(key: &str, v: &str) -> CliResult<usize> {
    v.parse()
        .map_err(|_| CliError::Config(format!("{key}: expected a nonnegative integer, got '{v}'")))
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    return Err(CliError::Config(format!("key '{key}' appears before any section")));
                };
                let full = format!("{section}.{key}");
                if !seen.insert(full.clone()) {
                    return Err(CliError::Config(format!("duplicate key {full}")));
                }
                cfg.set(&full, value.trim())?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one `section.key`; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            "model.scheme" => self.scheme = v.parse()?,
            "model.velocity" => {
                self.velocity = v.parse().map_err(|e: fenep_core::FenepError| CliError::Config(e.to_string()))?
            }
            "model.scenario" => self.scenario = v.parse()?,
            "model.re" => self.re = number(key, v)?,
            "model.wi" => self.wi = number(key, v)?,
            "model.eps" => self.eps = number(key, v)?,
            "model.b" => self.b = number(key, v)?,
            "model.delta" => self.delta = number(key, v)?,
            "model.alpha" => self.alpha = number(key, v)?,
            "model.forcing_amplitude" => self.forcing_amplitude = number(key, v)?,
            "model.vortex_amplitude" => self.vortex_amplitude = number(key, v)?,
            "mesh.n" => self.mesh = MeshSource::Structured(count(key, v)?),
            "mesh.file" => self.mesh = MeshSource::File(PathBuf::from(v)),
            "time.dt" => self.dt = number(key, v)?,
            "time.t_max" => self.t_max = number(key, v)?,
            "solver.tol" => self.picard.tol = number(key, v)?,
            "solver.max_iters" => self.picard.max_iters = count(key, v)?,
            "solver.omega_floor" => self.picard.omega_floor = number(key, v)?,
            "solver.audit" => self.audit = v.parse()?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            "output.cadence" => self.cadence = count(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Checks every model and solver invariant.
    pub fn validate(&self) -> CliResult<()> {
        self.model_params()?;
        self.picard.validate().map_err(CliError::setup)?;
        if !self.velocity.is_velocity() || self.velocity == SpaceKind::VelocityP1 {
            return Err(CliError::Config(format!("unsupported velocity space {}", self.velocity)));
        }
        match self.scheme {
            Scheme::P0 if self.velocity == SpaceKind::VelocityMini => Err(CliError::Config(
                "the p0 scheme pairs with p2 or p2-reduced velocity".into(),
            )),
            Scheme::P1diff if self.velocity == SpaceKind::VelocityP2Reduced => Err(CliError::Config(
                "the p1diff scheme pairs with p2 or mini velocity".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn model_params(&self) -> CliResult<ModelParams> {
        let reg = RegParams::new(self.delta, self.b).map_err(CliError::setup)?;
        let schedule = TimeSchedule::up_to(self.dt, self.t_max).map_err(CliError::setup)?;
        let alpha = match self.scheme {
            Scheme::P0 => 0.0,
            Scheme::P1diff => self.alpha,
        };
        ModelParams::new(self.re, self.wi, self.eps, reg, schedule)
            .and_then(|p| p.with_alpha(alpha))
            .map(|p| p.with_forcing(crate::scenario::forcing(self)))
            .map_err(CliError::setup)
    }
}
