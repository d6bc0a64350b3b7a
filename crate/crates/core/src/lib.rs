//! Numerical laboratory for the thin obstacle problem with weight `|x_n|^a`,
//! `a = 1 − 2s`.
//!
//! The crate discretizes the ball `B_R ⊂ ℝ^n` (n = 2 or 3) on a tensor grid
//! whose middle layer is the thin plane `{x_n = 0}`, solves the obstacle
//! problem
//!
//! ```text
//!   minimize ∫_{B_1} |∇v|² |x_n|^a dx   over v = g on ∂B_1, v ≥ 0 on {x_n = 0}
//! ```
//!
//! by projected SOR, and measures the monotone quantities of the problem
//! (Almgren frequency, Weiss energy, `H_a`/`D_a`) together with the identities
//! they satisfy. Closed-form solutions `h_e` serve as oracles throughout.
//!
//! Module map:
//!
//! * [`grid`], [`integrals`], [`quadrature`]: lattice, fields, weighted quadrature
//! * [`exact`]: `h_e`, the cone `{λ h_e}`, tangent fields, the closed-form profiles `z_∞`
//! * [`solver`]: assembly, PSOR, KKT certificate, energy
//! * [`diagnostics`]: `H`, `D`, `N`, `W`, identity residuals, fits
//! * [`blowup`]: rescalings, free boundary, classification, uniqueness rate
//! * [`epi`]: homogeneous extensions and the empirical epiperimetric gap
//! * [`snapshot`]: text snapshots of fields

pub mod blowup;
pub mod diagnostics;
pub mod epi;
pub mod error;
pub mod exact;
pub mod grid;
pub mod integrals;
pub mod quadrature;
pub mod snapshot;
pub mod solver;

pub use error::{LabError, Result};
pub use exact::{ConeElement, ProjectionNorm};
pub use grid::{build_grid, Grid, ProblemParams, ScalarField, VectorField};
pub use solver::{solve_adapted, BoundaryData, DiscreteProblem, InitialGuess, KktReport, Solution, SolverOptions};
