//! Conformal Gagliardo-Nirenberg-Sobolev constants of smooth metric measure
//! spaces on radial model geometries, with the tractor-calculus identities that
//! characterize their extremals.

pub mod error;
pub mod functional;
pub mod geometry;
pub mod grid;
pub mod identities;
pub mod solver;
pub mod tractor;

pub use error::{GnsError, Result};
pub use geometry::{Branch, GnsParams, Integral, Model, Smms, WarpedGeometry};
pub use grid::{make_grid, Domain, Parity, RadialField, RadialGrid, Window};
