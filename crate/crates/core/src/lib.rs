//! Lie group variational collision integrator for a rigid body bouncing on a
//! fixed plane under gravity.
//!
//! The crate is organised bottom-up: [`geom`] holds SO(3)/SE(3) primitives,
//! [`body`] shapes and inertia, [`contact`] the signed distance to the plane and
//! its derivatives, [`lgvci`] the discrete flow and jump maps, [`driver`] the
//! time-stepping loop with impact detection, and [`scenario`] JSON input and
//! CSV/SVG output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body;
pub mod contact;
pub mod driver;
pub mod error;
pub mod geom;
pub mod lgvci;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};
