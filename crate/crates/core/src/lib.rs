//! Exact-arithmetic shadowing for piecewise-affine maps with hyperbolic
//! block structure, and the example of a Lipschitz-shadowing map that is
//! not structurally stable.

pub mod example;
pub mod hyperbolic;
pub mod pam;
pub mod scalar;
pub mod shadow;
pub mod oracle;
pub mod pseudo;
pub mod reproduce;
