//! Energy-consistent simulation of voltage- and current-driven piezoelectric
//! beams, actuators and composites.
//!
//! The pipeline is: physical parameters ([`model`]) → staggered-grid system
//! ([`assembly`]) → boundary feedback ([`control`]) → time integration
//! ([`integrate`]) → certificates ([`analysis`]) and field reconstruction
//! ([`reconstruct`]). [`config`] and [`output`] handle files.

pub mod analysis;
pub mod assembly;
pub mod config;
pub mod control;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod output;
pub mod pipeline;
pub mod reconstruct;
pub mod verify;

pub use assembly::{build_system, DiscreteSystem, Field, Grid, StateLabel, Variant};
pub use control::{close_loop, ClosedLoopSystem, Controller};
pub use error::{Error, Result};
pub use integrate::{Method, StepperConfig, Trajectory};
pub use model::{
    Actuation, CompositeCoefficients, CrossSection, ElectromagneticAssumption, LayerGeometry,
    MaterialParams, ModelKind, ModelSpec,
};

pub use nalgebra::{DMatrix, DVector};
