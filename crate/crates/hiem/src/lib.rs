//! Generalized-homogeneous state-feedback synthesis through minimal
//! invariant/attractive ellipsoids.
//!
//! The crate covers the full design pipeline for perturbed linear plants
//! `x' = A x + B u + D w` with an ellipsoidal disturbance bound
//! `w^T Q w <= 1`:
//!
//! * solving the generator equations that make the closed loop homogeneous
//!   with respect to a linear dilation ([`synthesis`]),
//! * canonical homogeneous norms and their gradients ([`homnorm`]),
//! * trace-minimal invariant/attractive ellipsoid synthesis by semidefinite
//!   programming ([`ellipsoid`], [`sdp`]),
//! * evaluation of the resulting homogeneous feedback ([`controller`]),
//! * closed-loop simulation and metric reporting ([`simulate`]),
//! * a file-driven CLI front end ([`cli`]).

pub mod cli;
pub mod controller;
pub mod dilation;
pub mod ellipsoid;
pub mod homnorm;
pub mod numerics;
pub mod plant;
pub mod sdp;
pub mod simulate;
pub mod synthesis;

pub use controller::HomogeneousController;
pub use dilation::{certify_monotone, Dilation, MonotonicityCert};
pub use ellipsoid::{DisturbanceShape, EllipsoidCertificate};
pub use homnorm::HomNormContext;
pub use plant::LinearPlant;
pub use synthesis::GeneratorSolution;
