//! Closed-form evaluation of the explicit self-similar family
//!
//! ```text
//! u_k(t,x) = k ln((T-t+x)/(T-t-x)),   |x| < T-t,
//! ```
//!
//! which solves both the quasilinear equation
//! `u_tt(1+u_x^2) - u_xx(1-u_t^2) = 2 u_t u_x u_tx` and the linear wave
//! equation, together with the residual operators, the timelike /
//! spacelike / lightlike classification, the steady similarity ODE and
//! the scaling orbit `u -> lambda^{-1} u(lambda t, lambda x)`.
//!
//! With `s = T-t` and `D = s^2 - x^2` the jet of `u_k` is
//!
//! ```text
//! u_t  = 2kx/D          u_x  = 2ks/D
//! u_tt = 4ksx/D^2       u_xx = 4ksx/D^2      u_tx = 2k(s^2+x^2)/D^2
//! ```
//!
//! (the second derivatives follow by differentiating the first two and
//! are validated against central differences in the tests).

use crate::error::{Error, Result};

/// Family parameters: `k` is the profile amplitude, `t_max` the blow-up time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfSimilarParams {
    pub k: f64,
    pub t_max: f64,
}

impl SelfSimilarParams {
    pub fn new(k: f64, t_max: f64) -> Result<Self> {
        if k == 0.0 || !k.is_finite() {
            return Err(Error::InvalidParameter(format!("family parameter k must be nonzero, got {k}")));
        }
        if !(t_max > 0.0) {
            return Err(Error::InvalidParameter(format!("blow-up time must be positive, got {t_max}")));
        }
        Ok(Self { k, t_max })
    }
}

/// Value and derivatives to second order at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub u: f64,
    pub u_t: f64,
    pub u_x: f64,
    pub u_tt: f64,
    pub u_tx: f64,
    pub u_xx: f64,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { u: 0.0, u_t: 0.0, u_x: 0.0, u_tt: 0.0, u_tx: 0.0, u_xx: 0.0 };

    pub fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.u_t.is_finite()
            && self.u_x.is_finite()
            && self.u_tt.is_finite()
            && self.u_tx.is_finite()
            && self.u_xx.is_finite()
    }

    pub fn add(&self, other: &Jet2) -> Jet2 {
        Jet2 {
            u: self.u + other.u,
            u_t: self.u_t + other.u_t,
            u_x: self.u_x + other.u_x,
            u_tt: self.u_tt + other.u_tt,
            u_tx: self.u_tx + other.u_tx,
            u_xx: self.u_xx + other.u_xx,
        }
    }

    pub fn scale(&self, c: f64) -> Jet2 {
        Jet2 {
            u: c * self.u,
            u_t: c * self.u_t,
            u_x: c * self.u_x,
            u_tt: c * self.u_tt,
            u_tx: c * self.u_tx,
            u_xx: c * self.u_xx,
        }
    }

    /// Largest absolute entry, used to scale residual tolerances.
    pub fn max_abs(&self) -> f64 {
        self.u
            .abs()
            .max(self.u_t.abs())
            .max(self.u_x.abs())
            .max(self.u_tt.abs())
            .max(self.u_tx.abs())
            .max(self.u_xx.abs())
    }
}

/// Evaluate the jet of `u_k` at an in-cone point.
pub fn eval_uk(p: SelfSimilarParams, t: f64, x: f64) -> Result<Jet2> {
    let s = p.t_max - t;
    if !(t < p.t_max) || x.abs() >= s {
        return Err(Error::OutsideCone { t, x, t_max: p.t_max });
    }
    let d = s * s - x * x;
    let k = p.k;
    Ok(Jet2 {
        u: k * ((s + x) / (s - x)).ln(),
        u_t: 2.0 * k * x / d,
        u_x: 2.0 * k * s / d,
        u_tt: 4.0 * k * s * x / (d * d),
        u_tx: 2.0 * k * (s * s + x * x) / (d * d),
        u_xx: 4.0 * k * s * x / (d * d),
    })
}

/// Residual of the quasilinear equation at a jet:
/// `u_tt(1+u_x^2) - u_xx(1-u_t^2) - 2 u_t u_x u_tx`.
pub fn bi_residual(j: &Jet2) -> f64 {
    j.u_tt * (1.0 + j.u_x * j.u_x) - j.u_xx * (1.0 - j.u_t * j.u_t) - 2.0 * j.u_t * j.u_x * j.u_tx
}

/// Residual of the linear wave equation: `u_tt - u_xx`.
pub fn wave_residual(j: &Jet2) -> f64 {
    j.u_tt - j.u_xx
}

/// Sign classes of `Q = 1 - u_t^2 + u_x^2` on a singular solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularityClass {
    Timelike,
    Spacelike,
    Lightlike,
}

/// Absolute tolerance on `Q` below which a jet counts as lightlike.
pub const LIGHTLIKE_TOL: f64 = 1e-10;

/// `Q = 1 - u_t^2 + u_x^2` at a jet.
pub fn timelike_indicator(j: &Jet2) -> f64 {
    1.0 - j.u_t * j.u_t + j.u_x * j.u_x
}

pub fn classify_singularity(j: &Jet2) -> SingularityClass {
    let q = timelike_indicator(j);
    if q > LIGHTLIKE_TOL {
        SingularityClass::Timelike
    } else if q < -LIGHTLIKE_TOL {
        SingularityClass::Spacelike
    } else {
        SingularityClass::Lightlike
    }
}

/// Residual of the steady similarity ODE `(rho^2-1) v'' + 2 rho v' = 0`
/// on the profile `v(rho) = k ln((1+rho)/(1-rho))`, using the closed
/// forms `v' = 2k/(1-rho^2)`, `v'' = 4 k rho/(1-rho^2)^2`.
pub fn steady_ode_residual(k: f64, rho: f64) -> Result<f64> {
    if rho.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!("steady profile needs |rho| < 1, got {rho}")));
    }
    let one_m = 1.0 - rho * rho;
    let v1 = 2.0 * k / one_m;
    let v2 = 4.0 * k * rho / (one_m * one_m);
    Ok((rho * rho - 1.0) * v2 + 2.0 * rho * v1)
}

/// The steady profile `v(rho) = k ln((1+rho)/(1-rho))` itself.
pub fn steady_profile(k: f64, rho: f64) -> Result<f64> {
    if rho.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!("steady profile needs |rho| < 1, got {rho}")));
    }
    Ok(k * ((1.0 + rho) / (1.0 - rho)).ln())
}

/// Jet of `u_lambda(t,x) = lambda^{-1} u(lambda t, lambda x)` at `(t,x)`,
/// given the jet of `u` at `(lambda t, lambda x)`: the value scales by
/// `lambda^{-1}`, first derivatives are unchanged, second derivatives
/// scale by `lambda`.
pub fn scaling_orbit(j: &Jet2, lambda: f64) -> Result<Jet2> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("scaling needs lambda > 0, got {lambda}")));
    }
    Ok(Jet2 {
        u: j.u / lambda,
        u_t: j.u_t,
        u_x: j.u_x,
        u_tt: lambda * j.u_tt,
        u_tx: lambda * j.u_tx,
        u_xx: lambda * j.u_xx,
    })
}
