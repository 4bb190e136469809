//! Consensus certification for linear multi-agent systems with
//! heterogeneous time-varying communication delays.
//!
//! The crate builds the lifted error system of a diffusively coupled
//! network ([`model`]), assembles delay-dependent LMI stability criteria
//! built on Legendre-polynomial integral inequalities ([`legendre`],
//! [`lmi`]), decides their feasibility ([`sdp`]), searches for maximum
//! certified delay bounds ([`search`]) and cross-checks certificates by
//! simulating the delayed dynamics ([`sim`]).

pub mod error;
pub mod legendre;
pub mod lmi;
pub mod model;
pub mod quad;
pub mod sdp;
pub mod search;
pub mod sim;

pub use error::{Error, Result};
