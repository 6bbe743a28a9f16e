//! Grids, the shrinking cone domain and the similarity coordinate changes.
//!
//! Two coordinate systems are used throughout. The similarity pair
//! `(tau, rho) = (-log(T-t), x/(T-t))` turns self-similar profiles into
//! steady ones, and the cone-to-rectangle map `xi = x/(T-t)` flattens the
//! trapezoidal domain `B_t = {x in [0, delta*(T-t)], t in [0, t_bar]}`
//! onto the fixed rectangle `[0, t_bar] x [0, delta]`.

use crate::error::{Error, Result};

/// Uniform 1D grid with `n` cells and `n + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min < x_max) {
            return Err(Error::InvalidParameter(format!(
                "grid needs x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n < 8 {
            return Err(Error::Resolution { required: 8, available: n });
        }
        Ok(Self { x_min, x_max, n })
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.node(i)).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.n + 1
    }
}

/// The truncated cone `B_t`: slices `x in [0, delta*(T-t)]` for
/// `t in [0, t_bar]`, with `t_bar < T` so every singular factor
/// `1/(T-t)` stays finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeDomain {
    /// Blow-up (maximal existence) time.
    pub t_max: f64,
    /// Cone-opening fraction, in (0,1).
    pub delta: f64,
    /// Final experiment time, in (0, t_max).
    pub t_bar: f64,
}

impl ConeDomain {
    pub fn new(t_max: f64, delta: f64, t_bar: f64) -> Result<Self> {
        if !(t_max > 0.0) {
            return Err(Error::InvalidParameter(format!("t_max must be positive, got {t_max}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
        }
        if !(t_bar > 0.0 && t_bar < t_max) {
            return Err(Error::InvalidParameter(format!(
                "t_bar must lie in (0, t_max={t_max}), got {t_bar}"
            )));
        }
        Ok(Self { t_max, delta, t_bar })
    }

    /// Defaults used by the shipped experiments: T = 1, delta = 0.9,
    /// t_bar = 0.9 (so the margin T - t_bar is 0.1).
    pub fn default_experiment() -> Self {
        Self { t_max: 1.0, delta: 0.9, t_bar: 0.9 }
    }

    /// Remaining time to blow-up.
    pub fn s(&self, t: f64) -> f64 {
        self.t_max - t
    }

    /// Width margin that never vanishes on `[0, t_bar]`.
    pub fn delta_bar(&self) -> f64 {
        self.t_max - self.t_bar
    }

    pub fn contains(&self, t: f64, x: f64) -> bool {
        t >= 0.0 && t <= self.t_bar && x >= 0.0 && x <= self.delta * self.s(t)
    }

    /// Outer boundary position `delta*(T-t)` of the slice at time `t`.
    pub fn outer_x(&self, t: f64) -> f64 {
        self.delta * self.s(t)
    }
}

/// A point in similarity coordinates, restricted to the cone interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityPoint {
    /// `tau = -log(T-t)`
    pub tau: f64,
    /// `rho = x/(T-t)`, with `|rho| < 1`
    pub rho: f64,
}

/// Map `(t, x)` to similarity coordinates for blow-up time `t_max`.
pub fn to_similarity(t: f64, x: f64, t_max: f64) -> Result<SimilarityPoint> {
    let s = t_max - t;
    if !(t < t_max) || x.abs() >= s {
        return Err(Error::OutsideCone { t, x, t_max });
    }
    Ok(SimilarityPoint { tau: -s.ln(), rho: x / s })
}

/// Inverse of [`to_similarity`]: `t = T - e^{-tau}`, `x = rho e^{-tau}`.
pub fn from_similarity(p: SimilarityPoint, t_max: f64) -> Result<(f64, f64)> {
    if p.rho.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "similarity point needs |rho| < 1, got {}",
            p.rho
        )));
    }
    let s = (-p.tau).exp();
    Ok((t_max - s, p.rho * s))
}

/// Flatten the cone onto the rectangle: `(t, x) -> (t, xi = x/(T-t))`.
///
/// Derivative transform used when assembling operators on the rectangle:
/// `d/dx = (T-t)^{-1} d/dxi` and `d/dt|_x = d/dt|_xi + xi (T-t)^{-1} d/dxi`.
pub fn cone_to_rectangle(t: f64, x: f64, dom: &ConeDomain) -> Result<(f64, f64)> {
    if !dom.contains(t, x) {
        return Err(Error::OutsideDomain { t, x, t_bar: dom.t_bar });
    }
    Ok((t, x / dom.s(t)))
}

/// Inverse of [`cone_to_rectangle`] on the rectangle `[0,t_bar] x [0,delta]`.
pub fn rectangle_to_cone(t: f64, xi: f64, dom: &ConeDomain) -> Result<(f64, f64)> {
    if !(t >= 0.0 && t <= dom.t_bar && xi >= 0.0 && xi <= dom.delta) {
        return Err(Error::OutsideDomain { t, x: xi * dom.s(t), t_bar: dom.t_bar });
    }
    Ok((t, xi * dom.s(t)))
}
