//! Codimensional rod/shell simulation with filtered-barrier contact.
//!
//! Thin materials are represented by their midline (rods) or midsurface
//! (shells) plus a physical thickness `h`. Contact between primitives is
//! resolved with IPC-style barrier energies whose activation distance equals
//! `h`. When a mesh is refined below `h`, the barrier pushes stencil
//! neighbors apart and the material locks. This crate implements a
//! precomputed filter that substitutes a safe activation distance for the
//! intrinsically close pairs, eliminating the locking while keeping the
//! non-intersection guarantee, together with plain-barrier and culled
//! baselines for comparison.

pub mod collision;
pub mod contact;
pub mod elasticity;
mod error;
pub mod math;
pub mod mesh;
pub mod proximity;
pub mod scenario;
pub mod solver;

pub use error::SimError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SimError>;
