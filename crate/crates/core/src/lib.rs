//! Simulation core for a PII-audience advertising platform.
//!
//! Models a platform's users, custom-audience matching, audience insights,
//! location targeting and campaign delivery under a configurable
//! [`model::PlatformPolicy`], together with automated attacks that try to
//! single out one person or one household. Everything here is `no_std` with
//! `alloc`; IO lives in the `adsim` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod attacks;
pub mod delivery;
pub mod geo;
pub mod insights;
pub mod matching;
pub mod model;
pub mod popgen;

pub use attacks::{AttackKind, AttackReport};
pub use geo::{Coordinate, LocationSpec};
pub use model::{builtin_policies, builtin_policy, PlatformPolicy, Population};
