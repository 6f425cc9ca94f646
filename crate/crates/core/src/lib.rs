//! Hamiltonian flows lifted through submersions with Ehresmann connections,
//! and normal sub-Riemannian geodesics of Riemannian manifolds rolling on
//! each other without twisting or slipping.

pub mod error;
pub mod geodesics;
pub mod geom;
pub mod ode;
pub mod rolling;
pub mod scenario;
pub mod shooting;
pub mod suites;
pub mod submersion;

pub use error::{GeomError, Result};
