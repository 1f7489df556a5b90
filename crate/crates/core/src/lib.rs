//! Numerical laboratory for generalized dichotomies of nonautonomous random
//! dynamical systems.
//!
//! The crate builds finite-dimensional discrete-time linear cocycles over
//! seeded invertible drivers, verifies mu-dichotomies with respect to random
//! norms, solves the associated admissibility equation by its explicit
//! series operator, reconstructs dichotomies from admissibility data, tests
//! robustness under small one-step perturbations, and realizes the
//! equivalence between strong (mu,nu)-dichotomies and mu-dichotomies through
//! adapted norms.

pub mod admissibility;
pub mod cocycle;
pub mod dichotomy;
pub mod driver;
pub mod error;
pub mod growth;
pub mod linalg;
pub mod munorm;
pub mod report;
pub mod robustness;
pub mod scenario;
pub mod tol;

pub use error::{LabError, Result};
