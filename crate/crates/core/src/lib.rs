//! Solver library for energy-efficient beamforming through a sub-array
//! double-faced active RIS.
//!
//! A base station serves single-antenna users on both sides of the surface.
//! Each surface element splits its incident signal into a reflected and a
//! refracted branch, amplifies both with a shared per-sub-array gain, and the
//! solver jointly tunes transmit beamformers, both phase faces, the power
//! splitting profile, the amplification, and which amplifier sub-arrays are
//! switched on, to maximize system energy efficiency under per-user rate and
//! per-node power constraints.
//!
//! Layering, bottom up: [`model`] holds the signal and power model, [`channel`]
//! generates scenario channels, [`fp`] the fractional-programming transforms,
//! [`mm`] the majorization bounds, [`solvers`] the per-block convex solvers,
//! [`pdd`] the penalty dual decomposition loop for the phase faces, [`ra`] the
//! amplifier on/off search, and [`ao`] the alternating-optimization drivers.

pub mod ao;
pub mod channel;
pub mod fp;
pub mod mm;
pub mod model;
pub mod pdd;
pub mod ra;
pub mod solvers;

pub use model::{C64, CMat, CVec, RVec};
