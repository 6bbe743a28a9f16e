//! Numerical laboratory for the one-dimensional Born-Infeld equation
//!
//! ```text
//! u_tt (1 + u_x^2) - u_xx (1 - u_t^2) = 2 u_t u_x u_tx
//! ```
//!
//! around its explicit self-similar blow-up family
//!
//! ```text
//! u_k(t,x) = k ln((T-t+x)/(T-t-x)),   |x| < T-t,  k != 0.
//! ```
//!
//! The crate provides:
//!
//! * [`geometry`] — grids, the backward-light-cone domain, similarity
//!   coordinates and the cone-to-rectangle map;
//! * [`exact`] — closed-form jets of `u_k`, residual operators for the
//!   quasilinear and linear wave equations, singularity classification,
//!   the steady similarity ODE and the scaling orbit;
//! * [`evolve`] — method-of-lines integration of the full equation with
//!   CFL-adaptive RK4 stepping, blow-up-rate and mass observers, plus a
//!   similarity-frame variant for shrinking-cone experiments;
//! * [`linearize`] — the perturbation equation around `u_1`, its
//!   linearized coefficient fields, degeneracy curve and bound checks;
//! * [`mixed`] — a global space-time solve of the linearized equation on
//!   the cone rectangle with hyperbolic/elliptic regularization and
//!   weighted-multiplier energy monitors;
//! * [`sobolev`] — discrete Sobolev and C2s norms and the cosine-cutoff
//!   smoothing operators;
//! * [`nash`] — the Nash-Moser iteration for the perturbation problem
//!   with its quadratic-decay trace.

pub mod banded;
pub mod error;
pub mod evolve;
pub mod exact;
pub mod geometry;
pub mod linearize;
pub mod mixed;
pub mod nash;
pub mod sobolev;

pub use error::{Error, Result};
