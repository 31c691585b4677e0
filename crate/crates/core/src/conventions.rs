//! Convention switches that change the dynamics and therefore must be echoed
//! in every run's metadata.

use serde::{Deserialize, Serialize};

/// Sign of the friction drift `b^μ = s · λ · P^{μν} w_ν`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrictionSign {
    /// `s = +1`: the Jüttner flux vanishes and the particle decelerates in
    /// the bath frame.
    #[default]
    FluxZero,
    /// `s = −1`: friction constant `r = β(ε − π_ε)` inserted into the
    /// generator drift `−r P^{μν} w_ν ∂_μ` exactly as printed.
    PaperEq56,
}

impl FrictionSign {
    pub fn sign(self) -> f64 {
        match self {
            FrictionSign::FluxZero => 1.0,
            FrictionSign::PaperEq56 => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrictionSign::FluxZero => "flux-zero",
            FrictionSign::PaperEq56 => "paper-eq56",
        }
    }
}

/// Spatial advection used for `x` along the evolution parameter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Advection {
    /// `dx = p / √(p·p) dς`.
    #[default]
    Velocity,
    /// `dx = p dς`.
    Momentum,
}

impl Advection {
    pub fn as_str(self) -> &'static str {
        match self {
            Advection::Velocity => "velocity",
            Advection::Momentum => "momentum",
        }
    }
}
