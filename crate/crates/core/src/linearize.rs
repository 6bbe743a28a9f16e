//! The perturbation equation around `u_1` and its linearization.
//!
//! Writing `u = u_1 + w` (the family member with k = 1) and
//! `s = T-t`, `D = s^2 - x^2`, `P = D^2 + 4 s^2`, the perturbation of the
//! quasilinear operator, normalized so the `w_tt` coefficient at `w = 0`
//! is one, reads
//!
//! ```text
//! w_tt - B w_xx - C w_t + Dc w_x - E w_tx + j * H(w) = 0,
//! B = (D^2-4x^2)/P,  C = 8s/P,  Dc = 8x/P,  E = 8sx/P,  j = D^2/P,
//! ```
//!
//! where `H` collects the quadratic and cubic terms. This is exactly
//! `(D^2/P) * bi_residual(jet(u_1) + jet(w))`, and the tests pin that
//! identity. The linearized operator around a background `wb`,
//!
//! ```text
//! L h = a h_tt - b h_xx - c h_t + d h_x - e h_tx,
//! ```
//!
//! has coefficients given by the Fréchet derivative of the perturbation
//! operator; [`coefficients`] spells them out in the background jet.
//! The diffusion coefficient `b` changes sign across the degenerate
//! curve `x*(t) = -1 + sqrt(1 + (T-t)^2)`: positive (wave-like) between
//! the axis and the curve, negative (elliptic-like) outside it.

use crate::error::{Error, Result};
use crate::exact::{eval_uk, Jet2, SelfSimilarParams};
use crate::mixed::SpaceTimeGrid;

/// Background field supplying `wb` and its derivatives on the cone.
pub trait Background: Sync {
    fn jet(&self, t: f64, x: f64) -> Jet2;
}

/// The trivial background `wb = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroBackground;

impl Background for ZeroBackground {
    fn jet(&self, _t: f64, _x: f64) -> Jet2 {
        Jet2::ZERO
    }
}

/// Separable trigonometric background, smooth on the whole cone.
#[derive(Debug, Clone)]
pub struct AnalyticBackground {
    /// `(amp, omega, phase_t, kappa, phase_x)` per mode:
    /// `amp * sin(omega t + phase_t) * sin(kappa x + phase_x)`.
    pub modes: Vec<(f64, f64, f64, f64, f64)>,
}

impl Background for AnalyticBackground {
    fn jet(&self, t: f64, x: f64) -> Jet2 {
        let mut j = Jet2::ZERO;
        for &(a, om, pt, ka, px) in &self.modes {
            let (st, ct) = (om * t + pt).sin_cos();
            let (sx, cx) = (ka * x + px).sin_cos();
            j.u += a * st * sx;
            j.u_t += a * om * ct * sx;
            j.u_x += a * ka * st * cx;
            j.u_tt -= a * om * om * st * sx;
            j.u_tx += a * om * ka * ct * cx;
            j.u_xx -= a * ka * ka * st * sx;
        }
        j
    }
}

impl AnalyticBackground {
    /// Discrete `C^s_2` norm over the rectangle sampling of `B_t`
    /// (slice norms in the xi variable).
    pub fn ball_norm(&self, grid: &SpaceTimeGrid, s: usize) -> Result<f64> {
        background_ball_norm(self, grid, s)
    }

    /// Rescale the amplitudes so the sampled `C^s_2` norm is `target`.
    pub fn scale_to_ball(&mut self, grid: &SpaceTimeGrid, s: usize, target: f64) -> Result<()> {
        let current = self.ball_norm(grid, s)?;
        if current == 0.0 {
            return Err(Error::InvalidParameter("cannot scale the zero background".into()));
        }
        let f = target / current;
        for m in &mut self.modes {
            m.0 *= f;
        }
        Ok(())
    }
}

/// Sampled membership norm for any background.
pub fn background_ball_norm(bg: &dyn Background, grid: &SpaceTimeGrid, s: usize) -> Result<f64> {
    let nx = grid.nx;
    let mut sup: f64 = 0.0;
    for i in 0..=grid.nt {
        let t = grid.t(i);
        let mut v0 = Vec::with_capacity(nx + 1);
        let mut v1 = Vec::with_capacity(nx + 1);
        let mut v2 = Vec::with_capacity(nx + 1);
        for j in 0..=nx {
            let x = grid.xi(j) * grid.dom.s(t);
            let jet = bg.jet(t, x);
            v0.push(jet.u);
            v1.push(jet.u_t);
            v2.push(jet.u_tt);
        }
        let a = crate::sobolev::h_norm(&v0, grid.dxi(), s)?;
        let b = crate::sobolev::h_norm(&v1, grid.dxi(), s - 1)?;
        let c = crate::sobolev::h_norm(&v2, grid.dxi(), s - 2)?;
        sup = sup.max(a * a + b * b + c * c);
    }
    Ok(sup.sqrt())
}

fn cone_factors(t: f64, x: f64, t_max: f64) -> Result<(f64, f64, f64)> {
    let s = t_max - t;
    if !(t < t_max) || x < 0.0 || x >= s {
        return Err(Error::OutsideCone { t, x, t_max });
    }
    let d = s * s - x * x;
    let p = d * d + 4.0 * s * s;
    Ok((s, d, p))
}

/// The quadratic/cubic bracket `H(w)` of the perturbation equation:
/// multiplied by `j` it is the complete nonlinear part.
pub fn nonlinear_bracket(w: &Jet2, t: f64, x: f64, t_max: f64) -> Result<f64> {
    let (_, _, _) = cone_factors(t, x, t_max)?;
    let ub = eval_uk(SelfSimilarParams { k: 1.0, t_max }, t, x)?;
    Ok((ub.u_tt + w.u_tt) * w.u_x * w.u_x
        + (ub.u_xx + w.u_xx) * w.u_t * w.u_t
        - 2.0 * (ub.u_x * w.u_t + ub.u_t * w.u_x) * w.u_tx
        + 2.0 * (ub.u_x * w.u_tt - ub.u_tx * w.u_t) * w.u_x
        + 2.0 * (ub.u_t * w.u_xx - w.u_x * w.u_tx) * w.u_t)
}

/// Linear-part coefficients at the zero background.
pub fn base_coefficients(t: f64, x: f64, t_max: f64) -> Result<(f64, f64, f64, f64, f64)> {
    let (s, d, p) = cone_factors(t, x, t_max)?;
    let b = (d * d - 4.0 * x * x) / p;
    let c = 8.0 * s / p;
    let dc = 8.0 * x / p;
    let e = 8.0 * s * x / p;
    let j = d * d / p;
    Ok((b, c, dc, e, j))
}

/// Full residual of the perturbation equation at a jet of `w`.
pub fn perturbation_residual(w: &Jet2, t: f64, x: f64, t_max: f64) -> Result<f64> {
    let (b, c, dc, e, j) = base_coefficients(t, x, t_max)?;
    Ok(w.u_tt - b * w.u_xx - c * w.u_t + dc * w.u_x - e * w.u_tx + j * nonlinear_bracket(w, t, x, t_max)?)
}

/// The six linearized coefficients at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub j: f64,
}

/// Coefficients of the linearization around the background jet `wb`.
pub fn coefficients(wb: &Jet2, t: f64, x: f64, t_max: f64) -> Result<CoefficientSet> {
    let (s, d0, p) = cone_factors(t, x, t_max)?;
    let j = d0 * d0 / p;
    let (b0, c0, dc0, e0, _) = base_coefficients(t, x, t_max)?;
    let s2x2 = s * s + x * x;
    let a = 1.0 + j * (wb.u_x * wb.u_x + 4.0 * s * wb.u_x / d0);
    let b = b0 - j * (wb.u_t * wb.u_t + 4.0 * x * wb.u_t / d0);
    let c = c0
        - j * (8.0 * s * x * wb.u_t / (d0 * d0) + 2.0 * wb.u_t * wb.u_xx + 4.0 * x * wb.u_xx / d0
            - 4.0 * s * wb.u_tx / d0
            - 4.0 * s2x2 * wb.u_x / (d0 * d0)
            - 2.0 * wb.u_x * wb.u_tx);
    let d = dc0
        + j * (8.0 * s * x * wb.u_x / (d0 * d0) + 2.0 * wb.u_tt * (wb.u_x + 2.0 * s / d0)
            - 4.0 * x * wb.u_tx / d0
            - 4.0 * s2x2 * wb.u_t / (d0 * d0)
            - 2.0 * wb.u_tx * wb.u_t);
    let e = e0 + 2.0 * j * (2.0 * s * wb.u_t / d0 + 2.0 * x * wb.u_x / d0 + wb.u_t * wb.u_x);
    Ok(CoefficientSet { a, b, c, d, e, j })
}

/// Apply the linearized operator `a h_tt - b h_xx - c h_t + d h_x - e h_tx`.
pub fn linearized_apply(cs: &CoefficientSet, h: &Jet2) -> f64 {
    cs.a * h.u_tt - cs.b * h.u_xx - cs.c * h.u_t + cs.d * h.u_x - cs.e * h.u_tx
}

/// Location of the degenerate curve: positive root of `x^2 + 2x = (T-t)^2`.
pub fn degenerate_x(t: f64, t_max: f64) -> f64 {
    let s = t_max - t;
    // -1 + sqrt(1+s^2), written to avoid cancellation for small s.
    s * s / (1.0 + (1.0 + s * s).sqrt())
}

/// Degenerate curve in the rectangle variable `xi = x/(T-t)`.
pub fn degenerate_xi(t: f64, t_max: f64) -> f64 {
    degenerate_x(t, t_max) / (t_max - t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    Hyperbolic,
    Degenerate,
    Elliptic,
}

/// Tolerance on `b` for the degenerate classification.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Classify by the sign of the diffusion coefficient `b`.
pub fn classify_point(wb: &Jet2, t: f64, x: f64, t_max: f64) -> Result<PointClass> {
    let b = coefficients(wb, t, x, t_max)?.b;
    Ok(if b > DEGENERATE_TOL {
        PointClass::Hyperbolic
    } else if b < -DEGENERATE_TOL {
        PointClass::Elliptic
    } else {
        PointClass::Degenerate
    })
}

/// Coefficient fields sampled on the rectangle grid, level-major.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub grid: SpaceTimeGrid,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub j: Vec<f64>,
    /// Background jets at the sample nodes.
    pub bg: Vec<Jet2>,
}

impl CoefficientField {
    pub fn sample(bg: &dyn Background, grid: &SpaceTimeGrid) -> Result<Self> {
        let n = grid.num_nodes();
        let mut f = CoefficientField {
            grid: grid.clone(),
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
            d: vec![0.0; n],
            e: vec![0.0; n],
            j: vec![0.0; n],
            bg: vec![Jet2::ZERO; n],
        };
        for i in 0..=grid.nt {
            let t = grid.t(i);
            for jx in 0..=grid.nx {
                let x = grid.xi(jx) * grid.dom.s(t);
                let wb = bg.jet(t, x);
                let cs = coefficients(&wb, t, x, grid.dom.t_max)?;
                let idx = grid.idx(i, jx);
                f.a[idx] = cs.a;
                f.b[idx] = cs.b;
                f.c[idx] = cs.c;
                f.d[idx] = cs.d;
                f.e[idx] = cs.e;
                f.j[idx] = cs.j;
                f.bg[idx] = wb;
            }
        }
        Ok(f)
    }

    pub fn at(&self, i: usize, j: usize) -> CoefficientSet {
        let idx = self.grid.idx(i, j);
        CoefficientSet {
            a: self.a[idx],
            b: self.b[idx],
            c: self.c[idx],
            d: self.d[idx],
            e: self.e[idx],
            j: self.j[idx],
        }
    }

    /// Index of the last sign change of `b` in each time slice, or None
    /// when the slice has a single sign.
    pub fn b_sign_change_columns(&self) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.grid.nt + 1);
        for i in 0..=self.grid.nt {
            let mut found = None;
            for j in 0..self.grid.nx {
                let b0 = self.b[self.grid.idx(i, j)];
                let b1 = self.b[self.grid.idx(i, j + 1)];
                if b0 > 0.0 && b1 <= 0.0 {
                    found = Some(j);
                }
            }
            out.push(found);
        }
        out
    }
}

/// Fitted constants for the singular coefficient envelopes
/// `|a| <= C (1+1/s)(1+|wb_x|+|wb_x|^2)` and friends.
#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    pub c_a: f64,
    pub c_b: f64,
    pub c_c: f64,
    pub c_d: f64,
    pub c_e: f64,
    pub c_j: f64,
}

impl BoundReport {
    pub fn max(&self) -> f64 {
        self.c_a.max(self.c_b).max(self.c_c).max(self.c_d).max(self.c_e).max(self.c_j)
    }
}

/// Smallest admissible constant per coefficient over the sampled field.
pub fn coefficient_bound_report(cf: &CoefficientField) -> BoundReport {
    let g = &cf.grid;
    let mut r = BoundReport { c_a: 0.0, c_b: 0.0, c_c: 0.0, c_d: 0.0, c_e: 0.0, c_j: 0.0 };
    for i in 0..=g.nt {
        let s = g.dom.s(g.t(i));
        let inv = 1.0 / s;
        for jx in 0..=g.nx {
            let idx = g.idx(i, jx);
            let wb = &cf.bg[idx];
            let (wt, wx) = (wb.u_t.abs(), wb.u_x.abs());
            let (wtt, wtx, wxx) = (wb.u_tt.abs(), wb.u_tx.abs(), wb.u_xx.abs());
            let env_a = (1.0 + inv) * (1.0 + wx + wx * wx);
            let env_b = (1.0 + inv) * (1.0 + wt + wt * wt);
            let env_c = (1.0 + inv * inv) * (1.0 + wt + wx + wtx + wxx + wx * wx + wxx * wxx);
            let env_d = 1.0
                + inv.powi(3) * (1.0 + wx + wtt + wtx + wt * wt + wx * wx + wtt * wtt + wtx * wtx);
            let env_e = 1.0 + inv * (1.0 + wt + wx + wt * wt + wx * wx);
            r.c_a = r.c_a.max(cf.a[idx].abs() / env_a);
            r.c_b = r.c_b.max(cf.b[idx].abs() / env_b);
            r.c_c = r.c_c.max(cf.c[idx].abs() / env_c);
            r.c_d = r.c_d.max(cf.d[idx].abs() / env_d);
            r.c_e = r.c_e.max(cf.e[idx].abs() / env_e);
            r.c_j = r.c_j.max(cf.j[idx].abs());
        }
    }
    r
}
