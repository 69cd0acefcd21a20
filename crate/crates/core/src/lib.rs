//! Underactuated mechanical control systems modelled with affine connections.
//!
//! The crate covers the geometric operators of the kinetic-energy
//! connection ([`geometry`]), forced simulation and input reconstruction
//! ([`dynamics`]), the series expansion for motion from rest ([`series`]),
//! decoupling vector fields and kinematic controllability ([`kinematic`]),
//! oscillatory control synthesis via averaging ([`oscillatory`]), built-in
//! models ([`models`]) and a config-driven experiment runner
//! ([`experiments`]).

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod kinematic;
pub mod models;
pub mod numeric;
pub mod oscillatory;
pub mod series;

pub use error::{Error, Result};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
