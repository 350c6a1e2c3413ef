//! hp-adaptive finite element solver for convex variational problems.
//!
//! The library minimises energies of the form
//!
//! ```text
//! E(u) = ∫_Ω  μ(∇u) + g(u) − f·u  dx
//! ```
//!
//! with convex μ and g over conforming hp finite element spaces on interval
//! (1D) and triangle (2D) meshes. Mesh adaptation is driven by a competitive
//! refinement strategy: for every element a small local reference problem is
//! solved on a refined patch, candidate refinements (one p-enrichment plus a
//! family of DoF-matched hp subdivisions) are solved against the reference
//! flux, and the candidate with the largest predicted energy reduction wins.
//! Elements whose best reduction is within a factor θ of the global best are
//! refined in each sweep.
//!
//! Modules follow the pipeline: [`mesh`] (red/green refinement, patches),
//! [`fespace`] (hierarchic bases, degree vectors, constraints), [`forms`]
//! (problem definitions and assembly), [`solve`] (damped Newton), [`estimator`]
//! (flux-corrected local energies), [`adapt`] (candidate enumeration, marking,
//! the adaptive loop).
//!
//! All numerics are generic over the scalar type via [`scalar::Real`];
//! concrete `f64` aliases are exported at the crate root.

pub mod adapt;
pub mod basis;
pub mod estimator;
pub mod fespace;
pub mod forms;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod scalar;
pub mod solve;
pub mod stats;

pub use scalar::Real;

/// Default scalar type for applications.
pub type Scalar = f64;

pub type Mesh64 = mesh::Mesh<f64>;
pub type Patch64 = mesh::Patch<f64>;
pub type FeFunction64 = fespace::FeFunction<f64>;
pub type Problem64 = forms::ProblemDef<f64>;
pub type SolverConfig64 = solve::SolverConfig<f64>;
pub type AdaptConfig64 = adapt::AdaptConfig<f64>;
pub type AdaptState64 = adapt::AdaptState<f64>;
