//! Physical and numerical parameters, body forcing and time-step schedules.

use std::fmt;
use std::sync::Arc;

use nalgebra::Vector2;

use crate::error::{FenepError, Result};
use crate::mesh::Point;
use crate::tensor::RegParams;

/// Largest admissible ratio `Δt_n / Δt_{n−1}` of a schedule.
pub const SCHEDULE_GROWTH: f64 = 2.0;

/// Spatial shape of a separable body force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpatialForce {
    Uniform(Vector2<f64>),
    /// Solid-body rotation about the centre of the unit square:
    /// `a · (−(y − ½), x − ½)`.
    Rotational { amplitude: f64 },
}

impl SpatialForce {
    pub fn eval(&self, x: Point) -> Vector2<f64> {
        match *self {
            Self::Uniform(v) => v,
            Self::Rotational { amplitude } => Vector2::new(-(x.y - 0.5), x.x - 0.5) * amplitude,
        }
    }
}

/// Time modulation of a separable body force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeProfile {
    Constant,
    Sine { omega: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::Sine { omega } => (omega * t).sin(),
        }
    }

    /// Exact mean over `(t0, t1)`.
    pub fn average(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::Sine { omega } if omega != 0.0 => {
                ((omega * t0).cos() - (omega * t1).cos()) / (omega * (t1 - t0))
            }
            Self::Sine { .. } => 0.0,
        }
    }
}

pub type ForceFn = Arc<dyn Fn(Point, f64) -> Vector2<f64> + Send + Sync>;

/// Body force `f(x, t)`. Closed-form forcings are averaged exactly over each
/// time step; sampled ones are evaluated at the step midpoint.
#[derive(Clone, Default)]
pub enum Forcing {
    #[default]
    Zero,
    Separable {
        spatial: SpatialForce,
        temporal: TimeProfile,
    },
    Sampled(ForceFn),
}

impl Forcing {
    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    pub fn eval(&self, x: Point, t: f64) -> Vector2<f64> {
        match self {
            Self::Zero => Vector2::zeros(),
            Self::Separable { spatial, temporal } => spatial.eval(x) * temporal.eval(t),
            Self::Sampled(f) => f(x, t),
        }
    }

    /// The step forcing `fⁿ` on `(t0, t1)`.
    pub fn step_value(&self, x: Point, t0: f64, t1: f64) -> Vector2<f64> {
        match self {
            Self::Zero => Vector2::zeros(),
            Self::Separable { spatial, temporal } => spatial.eval(x) * temporal.average(t0, t1),
            Self::Sampled(f) => f(x, 0.5 * (t0 + t1)),
        }
    }
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::Separable { spatial, temporal } => f
                .debug_struct("Separable")
                .field("spatial", spatial)
                .field("temporal", temporal)
                .finish(),
            Self::Sampled(_) => f.write_str("Sampled(..)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSchedule {
    steps: Vec<f64>,
}

impl TimeSchedule {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(FenepError::Argument("time schedule has no steps".into()));
        }
        if let Some((i, dt)) = steps.iter().enumerate().find(|(_, dt)| !(**dt > 0.0 && dt.is_finite())) {
            return Err(FenepError::Argument(format!("time step {i} is not positive: {dt}")));
        }
        let s = Self { steps };
        let growth = s.max_growth();
        if growth > SCHEDULE_GROWTH {
            return Err(FenepError::Argument(format!(
                "time steps grow by a factor {growth} > {SCHEDULE_GROWTH} between consecutive steps"
            )));
        }
        Ok(s)
    }

    pub fn uniform(dt: f64, n_steps: usize) -> Result<Self> {
        Self::new(vec![dt; n_steps])
    }

    /// Uniform steps of size `dt` up to `t_max` (the count is rounded).
    pub fn up_to(dt: f64, t_max: f64) -> Result<Self> {
        if !(dt > 0.0 && t_max > 0.0) {
            return Err(FenepError::Argument(format!(
                "need dt > 0 and t_max > 0, got dt = {dt}, t_max = {t_max}"
            )));
        }
        let n = ((t_max / dt).round() as usize).max(1);
        Self::uniform(dt, n)
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.steps[n]
    }

    /// Largest ratio `Δt_n / Δt_{n−1}` (1 for a single step).
    pub fn max_growth(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(1.0, f64::max)
    }

    pub fn final_time(&self) -> f64 {
        self.steps.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub re: f64,
    pub wi: f64,
    pub eps: f64,
    pub reg: RegParams,
    /// Stress diffusion coefficient (stress-diffusion scheme only).
    pub alpha: f64,
    pub forcing: Forcing,
    pub schedule: TimeSchedule,
    pub cfl_const: f64,
    pub zeta: f64,
}

impl ModelParams {
    pub fn new(re: f64, wi: f64, eps: f64, reg: RegParams, schedule: TimeSchedule) -> Result<Self> {
        let p = Self {
            re,
            wi,
            eps,
            reg,
            alpha: 0.0,
            forcing: Forcing::Zero,
            schedule,
            cfl_const: 1.0,
            zeta: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(FenepError::Argument(m));
        if !(self.re > 0.0 && self.re.is_finite()) {
            return arg(format!("Re must be positive, got {}", self.re));
        }
        if !(self.wi > 0.0 && self.wi.is_finite()) {
            return arg(format!("Wi must be positive, got {}", self.wi));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return arg(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return arg(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if !(self.cfl_const > 0.0 && self.zeta > 0.0) {
            return arg(format!(
                "cfl_const and zeta must be positive, got {} and {}",
                self.cfl_const, self.zeta
            ));
        }
        RegParams::new(self.reg.delta, self.reg.b)?;
        Ok(())
    }

    /// Time-step bound `C⋆ α^{1+ζ} h²` under which the convergence analysis
    /// of the stress-diffusion scheme applies.
    pub fn convergence_dt_bound(&self, h: f64) -> f64 {
        self.cfl_const * self.alpha.powf(1.0 + self.zeta) * h * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_growth_validated() {
        assert!(TimeSchedule::new(vec![0.1, 0.2, 0.3]).is_ok());
        assert!(TimeSchedule::new(vec![0.1, 0.25]).is_err());
        assert!(TimeSchedule::new(vec![0.1, -0.1]).is_err());
        assert!(TimeSchedule::new(vec![]).is_err());
        let s = TimeSchedule::up_to(0.1, 1.0).unwrap();
        assert_eq!(s.len(), 10);
        assert_relative_eq!(s.final_time(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sine_average_is_exact() {
        let p = TimeProfile::Sine { omega: 3.0 };
        // midpoint-rule reference with many panels
        let (t0, t1) = (0.2, 0.9);
        let n = 200_000;
        let h = (t1 - t0) / n as f64;
        let reference: f64 = (0..n).map(|i| p.eval(t0 + (i as f64 + 0.5) * h)).sum::<f64>() / n as f64;
        assert_relative_eq!(p.average(t0, t1), reference, epsilon = 1e-10);
        assert_eq!(TimeProfile::Constant.average(0.0, 5.0), 1.0);
    }

    #[test]
    fn sampled_forcing_uses_midpoint() {
        let f = Forcing::Sampled(Arc::new(|_, t| Vector2::new(t, 0.0)));
        assert_eq!(f.step_value(Point::zeros(), 1.0, 2.0).x, 1.5);
    }

    #[test]
    fn params_validated() {
        let reg = RegParams::new(0.1, 5.0).unwrap();
        let s = TimeSchedule::uniform(0.1, 3).unwrap();
        assert!(ModelParams::new(1.0, 1.0, 0.5, reg, s.clone()).is_ok());
        assert!(ModelParams::new(1.0, 1.0, 1.0, reg, s.clone()).is_err());
        assert!(ModelParams::new(0.0, 1.0, 0.5, reg, s.clone()).is_err());
        let p = ModelParams::new(1.0, 1.0, 0.5, reg, s).unwrap().with_alpha(0.1).unwrap();
        assert_relative_eq!(p.convergence_dt_bound(0.5), 0.01 * 0.25, epsilon = 1e-15);
    }
}
