//! Velocity-jump random walks with finite turning delays.
//!
//! The crate covers three views of the same process in a rectangular arena
//! with a release pen and an absorbing target edge:
//!
//! * [`agents`]: a stochastic agent engine (point or hard-sphere, instant or
//!   finite-speed turning, optional signal-modulated turning frequency);
//! * [`transport`]: explicit finite-volume solvers for the forward transport
//!   equation and its resting-state extension;
//! * [`exit_time`]: backward solvers for the y-averaged mean exit time.
//!
//! [`stats`] compares their outputs. All numerics are generic over
//! [`Real`]; the aliases below fix the scalar to `f64`.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod error;
pub mod exit_time;
pub mod kinematics;
pub mod num;
pub mod params;
pub mod rng;
pub mod stats;
pub mod transport;
pub mod vec2;

pub use error::{Error, Result};
pub use kinematics::{
    angular_distance, delay_kernel, direction_from_uniform, mean_turn_time, reflect_velocity, sample_heading,
    sample_uniform_direction, AngleGrid,
};
pub use num::Real;
pub use params::{Interval, Omega, SignalGain, TargetEdge, Wall};

pub type Vec2 = vec2::Vec2<f64>;
pub type PhysicalParams = params::PhysicalParams<f64>;
pub type Arena = params::Arena<f64>;
pub type NumericalParams = params::NumericalParams<f64>;
pub type AgentState = agents::AgentState<f64>;
pub type RunRecord = agents::RunRecord<f64>;
pub type DensityGrid = transport::DensityGrid<f64>;
pub type RestingGrid = transport::RestingGrid<f64>;
pub type MassCurve = transport::MassCurve<f64>;
pub type ExitTimeGrid = exit_time::ExitTimeGrid<f64>;
pub type SignalField = exit_time::SignalField<f64>;
pub type Sample2D = stats::Sample2D<f64>;
