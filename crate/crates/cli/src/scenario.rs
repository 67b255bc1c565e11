//! Scenario library. All scenarios use no-flow walls and body forcing only.

use fenep_core::mesh::Point;
use fenep_core::params::{Forcing, SpatialForce, TimeProfile};
use fenep_core::tensor::SymTensor2;
use fenep_core::verify::vortex;
use nalgebra::Vector2;

use crate::config::{RunConfig, Scenario};

pub fn forcing(cfg: &RunConfig) -> Forcing {
    match cfg.scenario {
        Scenario::ForcedCavity => Forcing::Separable {
            spatial: SpatialForce::Rotational {
                amplitude: cfg.forcing_amplitude,
            },
            temporal: TimeProfile::Constant,
        },
        Scenario::Relax | Scenario::Decay => Forcing::Zero,
    }
}

pub fn initial_velocity(cfg: &RunConfig) -> impl Fn(Point) -> Vector2<f64> + Copy {
    let amp = match cfg.scenario {
        Scenario::Decay => cfg.vortex_amplitude,
        Scenario::Relax | Scenario::ForcedCavity => 0.0,
    };
    vortex(amp)
}

pub fn initial_stress(cfg: &RunConfig) -> impl Fn(Point) -> SymTensor2 + Copy {
    let s = match cfg.scenario {
        Scenario::Relax => SymTensor2::scaled_identity(2.0),
        Scenario::Decay | Scenario::ForcedCavity => SymTensor2::identity(),
    };
    move |_| s
}

/// Equilibrium stress of the homogeneous relaxation, `b/(b+2) I`.
pub fn equilibrium(b: f64) -> SymTensor2 {
    if b.is_finite() {
        SymTensor2::scaled_identity(b / (b + 2.0))
    } else {
        SymTensor2::identity()
    }
}
