//! Relativistic diffusion of a massive particle in a thermal electromagnetic
//! bath: diffusion tensor, friction, spectral quadratures, random-field
//! dynamics, stochastic simulation and a Fokker–Planck solver.

pub mod conventions;
pub mod diffusion;
pub mod ensemble;
pub mod equilibrium;
pub mod error;
pub mod fokker_planck;
pub mod linalg;
pub mod minkowski;
pub mod quadrature;
pub mod randomfield;
pub mod scalar;
pub mod sde;
pub mod spectral;

pub use conventions::{Advection, FrictionSign};
pub use error::{Error, Result};
pub use minkowski::{Boost, Covector, FourVector, Tensor2};
pub use scalar::Real;
pub use spectral::{BathParams, SpectralDensity};

pub type FourVectorF64 = FourVector<f64>;
pub type FourVectorF32 = FourVector<f32>;
pub type Tensor2F64 = Tensor2<f64>;
pub type Tensor2F32 = Tensor2<f32>;
pub type BoostF64 = Boost<f64>;
pub type BoostF32 = Boost<f32>;
pub type BathF64 = BathParams<f64>;
pub type BathF32 = BathParams<f32>;
pub type DiffusionTensorF64 = diffusion::DiffusionTensor<f64>;
pub type DiffusionTensorF32 = diffusion::DiffusionTensor<f32>;
