//! Method-of-lines evolution of the quasilinear equation
//! `u_tt(1+u_x^2) = u_xx(1-u_t^2) + 2 u_t u_x u_tx`.
//!
//! The first-order system `(u, v = u_t)` is advanced with classical RK4
//! under a CFL-adaptive step based on the characteristic speeds
//! `c± = (u_t u_x ± sqrt(Q)) / (1 + u_x^2)`, `Q = 1 - u_t^2 + u_x^2`.
//! The radicand `Q` is the timelike indicator: once it goes negative the
//! equation leaves its hyperbolic regime and the run stops.
//!
//! Spatial derivatives are second-order central differences; `u_tx` is
//! taken as the spatial derivative of `v` (exact commutation at the
//! discrete level). The [`similarity`] submodule evolves the same
//! equation on the shrinking cone mapped to a fixed rectangle, which is
//! what the stability experiments need to reach times close to blow-up.

use crate::error::{Error, Result};
use crate::geometry::Grid1D;

/// Field and velocity on one time level.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub grid: Grid1D,
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FieldState {
    pub fn new(grid: Grid1D, t: f64, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != grid.num_nodes() || v.len() != grid.num_nodes() {
            return Err(Error::InvalidParameter(format!(
                "field arrays must have {} entries, got {} and {}",
                grid.num_nodes(),
                u.len(),
                v.len()
            )));
        }
        let s = Self { grid, t, u, v };
        if !s.is_finite() {
            return Err(Error::NonFinite("initial field state"));
        }
        Ok(s)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    /// One-sided second-order gradient at the leftmost node.
    pub fn grad_at_origin(&self) -> f64 {
        let h = self.grid.spacing();
        (-3.0 * self.u[0] + 4.0 * self.u[1] - self.u[2]) / (2.0 * h)
    }

    pub fn max_abs_ux(&self) -> f64 {
        let d = spatial_derivative(&self.u, self.grid.spacing(), false);
        d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Boundary data supplier for one run.
pub enum Boundary<'a> {
    /// Identify the last node with the first.
    Periodic,
    /// `(u, v)` traces at the left and right ends as functions of time.
    Dirichlet(&'a dyn Fn(f64) -> ((f64, f64), (f64, f64))),
    /// Dirichlet traces at both ends plus a sponge collar before the
    /// right end that relaxes `(u, v)` to the supplied reference
    /// solution. Needed when the degenerate curve
    /// `x*(t) = -1 + sqrt(1+(T-t)^2)` overtakes the right boundary:
    /// both characteristics then leave through it (`|u_t| > 1` on the
    /// family) and a bare Dirichlet clamp reflects the outgoing flow
    /// into a growing boundary layer.
    DirichletWithSponge {
        trace: &'a dyn Fn(f64) -> ((f64, f64), (f64, f64)),
        /// `(u, u_t)` of the reference solution at `(t, x)`.
        reference: &'a dyn Fn(f64, f64) -> (f64, f64),
        /// Fraction of the domain where the collar starts, e.g. 0.7.
        start_frac: f64,
        /// Relaxation rate in units of wave-crossings per cell.
        strength: f64,
    },
}

/// Time at which the degenerate curve reaches `x_r`, i.e. when an
/// exact-trace Dirichlet condition at the right boundary stops being
/// well-posed for a marching scheme.
pub fn outflow_switch_time(x_r: f64, t_max: f64) -> f64 {
    (t_max - (x_r * x_r + 2.0 * x_r).sqrt()).max(0.0)
}

/// Second-order first derivative; periodic wrap or one-sided ends.
fn spatial_derivative(f: &[f64], h: f64, periodic: bool) -> Vec<f64> {
    let n = f.len() - 1;
    let mut d = vec![0.0; n + 1];
    let h2 = 2.0 * h;
    if periodic {
        // Node n is the same physical point as node 0.
        for i in 0..=n {
            let ip = if i == n { 1 } else { i + 1 };
            let im = if i == 0 { n - 1 } else { i - 1 };
            d[i] = (f[ip] - f[im]) / h2;
        }
    } else {
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / h2;
        for i in 1..n {
            d[i] = (f[i + 1] - f[i - 1]) / h2;
        }
        d[n] = (3.0 * f[n] - 4.0 * f[n - 1] + f[n - 2]) / h2;
    }
    d
}

/// Second-order second derivative; periodic wrap or one-sided ends.
fn spatial_second(f: &[f64], h: f64, periodic: bool) -> Vec<f64> {
    let n = f.len() - 1;
    let mut d = vec![0.0; n + 1];
    let hh = h * h;
    if periodic {
        for i in 0..=n {
            let ip = if i == n { 1 } else { i + 1 };
            let im = if i == 0 { n - 1 } else { i - 1 };
            d[i] = (f[ip] - 2.0 * f[i] + f[im]) / hh;
        }
    } else {
        d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / hh;
        for i in 1..n {
            d[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / hh;
        }
        d[n] = (2.0 * f[n] - 5.0 * f[n - 1] + 4.0 * f[n - 2] - f[n - 3]) / hh;
    }
    d
}

/// Acceleration `u_tt = [u_xx(1-u_t^2) + 2 u_t u_x u_tx] / (1+u_x^2)`.
///
/// The denominator is at least one, so the division is always safe.
///
/// Where the state is supersonic (`|u_t| > 1`, both characteristics on
/// one side) the `u_tx` stencil is upwinded: a centered difference
/// annihilates the two-cell mode, which then sees only the
/// negative-coefficient `u_xx` term and grows at a rate ~ 1/h. The
/// one-sided second-order stencil keeps the mixed term active at the
/// grid scale, which is what makes the operator hyperbolic.
pub fn bi_rhs(state: &FieldState, bc: &Boundary) -> Vec<f64> {
    let periodic = matches!(bc, Boundary::Periodic);
    let h = state.grid.spacing();
    let ux = spatial_derivative(&state.u, h, periodic);
    let uxx = spatial_second(&state.u, h, periodic);
    let vx = spatial_derivative(&state.v, h, periodic);
    let n = state.u.len();
    let v = &state.v;
    let mut acc = vec![0.0; n];
    for i in 0..n {
        let (ut, uxi) = (state.v[i], ux[i]);
        let mut vxi = vx[i];
        if ut.abs() > 1.0 {
            // Coefficient of v_x in the v-equation; take the stencil
            // from the side the characteristics come from.
            let e_coef = 2.0 * ut * uxi;
            if e_coef > 0.0 && i + 2 < n {
                vxi = (-3.0 * v[i] + 4.0 * v[i + 1] - v[i + 2]) / (2.0 * h);
            } else if e_coef < 0.0 && i >= 2 {
                vxi = (3.0 * v[i] - 4.0 * v[i - 1] + v[i - 2]) / (2.0 * h);
            }
        }
        acc[i] = (uxx[i] * (1.0 - ut * ut) + 2.0 * ut * uxi * vxi) / (1.0 + uxi * uxi);
    }
    acc
}

/// Default CFL number for the adaptive step.
pub const DEFAULT_CFL: f64 = 0.4;

/// CFL-limited time step, or a `NonTimelike` error when the
/// characteristic radicand goes negative anywhere.
pub fn cfl_dt(state: &FieldState, periodic: bool, cfl_number: f64) -> Result<f64> {
    let h = state.grid.spacing();
    let ux = spatial_derivative(&state.u, h, periodic);
    let mut speed = 1.0f64;
    for i in 0..state.u.len() {
        let (ut, uxi) = (state.v[i], ux[i]);
        let q = 1.0 - ut * ut + uxi * uxi;
        if q < 0.0 {
            return Err(Error::NonTimelike { x: state.grid.node(i) });
        }
        let root = q.sqrt();
        let denom = 1.0 + uxi * uxi;
        let c1 = (ut * uxi + root) / denom;
        let c2 = (ut * uxi - root) / denom;
        speed = speed.max(c1.abs()).max(c2.abs());
    }
    Ok(cfl_number * h / speed)
}

fn apply_boundary(u: &mut [f64], v: &mut [f64], bc: &Boundary, t: f64) {
    let n = u.len();
    match bc {
        Boundary::Periodic => {
            u[n - 1] = u[0];
            v[n - 1] = v[0];
        }
        Boundary::Dirichlet(f) => {
            let ((ul, vl), (ur, vr)) = f(t);
            u[0] = ul;
            v[0] = vl;
            u[n - 1] = ur;
            v[n - 1] = vr;
        }
        Boundary::DirichletWithSponge { trace, .. } => {
            let ((ul, vl), (ur, vr)) = trace(t);
            u[0] = ul;
            v[0] = vl;
            u[n - 1] = ur;
            v[n - 1] = vr;
        }
    }
}

/// Fourth-difference (Kreiss-Oliger style) damping; an O(h^3) term that
/// suppresses grid-scale sawtooth modes without touching the
/// second-order interior accuracy. The outermost interior nodes, which
/// the five-point stencil cannot reach, are left to the boundary
/// treatment.
fn add_dissipation(rhs: &mut [f64], f: &[f64], sigma: f64, h: f64) {
    let n = f.len();
    let scale = sigma / (16.0 * h);
    for i in 2..n - 2 {
        let d4 = f[i - 2] - 4.0 * f[i - 1] + 6.0 * f[i] - 4.0 * f[i + 1] + f[i + 2];
        rhs[i] -= scale * d4;
    }
}

/// Advance one RK4 step of size `dt`; boundary values of `u` and `v` are
/// overwritten from the boundary data at `t + dt`.
pub fn step(state: &FieldState, bc: &Boundary, dt: f64, dissipation: f64) -> Result<FieldState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step needs dt > 0, got {dt}")));
    }
    let periodic = matches!(bc, Boundary::Periodic);
    let limit = cfl_dt(state, periodic, DEFAULT_CFL)?;
    // Allow the caller's own CFL number up to 1.0 x h / speed.
    if dt > limit / DEFAULT_CFL {
        return Err(Error::StepTooLarge { dt, limit: limit / DEFAULT_CFL });
    }
    let n = state.u.len();
    // Stage states carry the boundary trace at the stage time, so the
    // interior stencils next to the boundary see consistent data.
    let eval = |stage_t: f64, u: &[f64], v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut u = u.to_vec();
        let mut v = v.to_vec();
        apply_boundary(&mut u, &mut v, bc, stage_t);
        let s = FieldState { grid: state.grid.clone(), t: stage_t, u, v };
        let mut du = s.v.clone();
        let mut dv = bi_rhs(&s, bc);
        if dissipation > 0.0 {
            add_dissipation(&mut du, &s.u, dissipation, s.grid.spacing());
            add_dissipation(&mut dv, &s.v, dissipation, s.grid.spacing());
        }
        if let Boundary::DirichletWithSponge { reference, start_frac, strength, .. } = bc {
            // Relaxation rate: `strength` e-folds per collar crossing at
            // unit speed, ramped smoothly so the damping never changes
            // abruptly from cell to cell.
            let xs = s.grid.x_min + start_frac * (s.grid.x_max - s.grid.x_min);
            let width = s.grid.x_max - xs;
            for i in 0..n {
                let x = s.grid.node(i);
                if x > xs {
                    let q = (x - xs) / width;
                    let lam = strength * q * q / width;
                    let (ur, vr) = reference(stage_t, x);
                    du[i] -= lam * (s.u[i] - ur);
                    dv[i] -= lam * (s.v[i] - vr);
                }
            }
        }
        (du, dv)
    };
    let t = state.t;
    let (k1u, k1v) = eval(t, &state.u, &state.v);
    let half = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        a.iter().zip(k).map(|(x, d)| x + c * dt * d).collect()
    };
    let (k2u, k2v) = eval(t + 0.5 * dt, &half(&state.u, &k1u, 0.5), &half(&state.v, &k1v, 0.5));
    let (k3u, k3v) = eval(t + 0.5 * dt, &half(&state.u, &k2u, 0.5), &half(&state.v, &k2v, 0.5));
    let (k4u, k4v) = eval(t + dt, &half(&state.u, &k3u, 1.0), &half(&state.v, &k3v, 1.0));
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        u[i] = state.u[i] + dt / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
        v[i] = state.v[i] + dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
    }
    let t = state.t + dt;
    apply_boundary(&mut u, &mut v, bc, t);
    let next = FieldState { grid: state.grid.clone(), t, u, v };
    if !next.is_finite() {
        return Err(Error::NonFinite("time step output"));
    }
    Ok(next)
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ReachedTEnd,
    NonTimelike,
    NonFinite,
    /// `max |u_x|` crossed the blow-up threshold.
    GradientBlowup,
}

/// Per-step observer record of an evolution run.
#[derive(Debug, Clone)]
pub struct EvolutionReport {
    pub times: Vec<f64>,
    /// One-sided gradient at the left end (the blow-up-rate observer).
    pub grad_at_origin: Vec<f64>,
    /// Discrete conserved mass `integral u_t / sqrt(1 - u_t^2 + u_x^2)`.
    pub mass: Vec<f64>,
    pub cfl_dt_history: Vec<f64>,
    pub terminated: Termination,
    /// Final state at the last recorded time.
    pub final_state: FieldState,
}

/// Trapezoid mass with the timelike square-root density.
pub fn mass(state: &FieldState, periodic: bool) -> f64 {
    let h = state.grid.spacing();
    let ux = spatial_derivative(&state.u, h, periodic);
    let density: Vec<f64> = state
        .v
        .iter()
        .zip(&ux)
        .map(|(vt, vx)| {
            let q = 1.0 - vt * vt + vx * vx;
            if q > 0.0 {
                vt / q.sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    let n = density.len();
    let mut s = 0.5 * (density[0] + density[n - 1]);
    for v in &density[1..n - 1] {
        s += v;
    }
    s * h
}

/// Gradient threshold that counts as numerical blow-up.
pub const GRADIENT_BLOWUP: f64 = 1e6;

/// Evolution options: CFL number of the adaptive step and the strength
/// of the optional fourth-difference damping.
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub cfl_number: f64,
    pub dissipation: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { cfl_number: DEFAULT_CFL, dissipation: 0.0 }
    }
}

/// Repeated adaptive stepping with observers.
pub fn evolve(initial: FieldState, bc: &Boundary, t_end: f64, opts: EvolveOptions) -> Result<EvolutionReport> {
    if !(t_end > initial.t) {
        return Err(Error::InvalidParameter(format!(
            "t_end={t_end} must exceed the initial time {}",
            initial.t
        )));
    }
    let periodic = matches!(bc, Boundary::Periodic);
    let cfl_number = opts.cfl_number;
    let mut state = initial;
    let mut times = vec![state.t];
    let mut grads = vec![state.grad_at_origin()];
    let mut masses = vec![mass(&state, periodic)];
    let mut dts = Vec::new();
    let terminated;
    loop {
        match cfl_dt(&state, periodic, cfl_number) {
            Ok(mut dt) => {
                if state.t + dt >= t_end {
                    dt = t_end - state.t;
                }
                if dt <= f64::EPSILON * t_end.abs().max(1.0) {
                    terminated = Termination::ReachedTEnd;
                    break;
                }
                match step(&state, bc, dt, opts.dissipation) {
                    Ok(next) => {
                        state = next;
                        times.push(state.t);
                        grads.push(state.grad_at_origin());
                        masses.push(mass(&state, periodic));
                        dts.push(dt);
                        if state.max_abs_ux() > GRADIENT_BLOWUP {
                            terminated = Termination::GradientBlowup;
                            break;
                        }
                        if (t_end - state.t) <= f64::EPSILON * t_end.abs().max(1.0) {
                            terminated = Termination::ReachedTEnd;
                            break;
                        }
                    }
                    Err(Error::NonFinite(_)) => {
                        terminated = Termination::NonFinite;
                        break;
                    }
                    Err(Error::NonTimelike { .. }) => {
                        terminated = Termination::NonTimelike;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::NonTimelike { .. }) => {
                terminated = Termination::NonTimelike;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EvolutionReport {
        times,
        grad_at_origin: grads,
        mass: masses,
        cfl_dt_history: dts,
        terminated,
        final_state: state,
    })
}

pub mod similarity {
    //! The same quasilinear evolution written in the cone rectangle
    //! `(t, xi = x/(T-t))`, so a fixed xi-grid follows the shrinking
    //! slices `x in [0, delta (T-t)]` all the way to `t_bar`.
    //!
    //! With `V(t, xi) = u(t, xi (T-t))`, `W = V_t` and `sigma = 1/(T-t)`:
    //!
    //! ```text
    //! u_x  = sigma V_xi                     u_t  = W + xi sigma V_xi
    //! u_xx = sigma^2 V_xixi                 u_tx = sigma W_xi + sigma^2 V_xi + xi sigma^2 V_xixi
    //! u_tt = W_t + 2 xi sigma W_xi + 2 xi sigma^2 V_xi + xi^2 sigma^2 V_xixi
    //! ```
    //!
    //! and the equation is solved for `W_t`. The self-similar profile is
    //! steady in this frame, which keeps long perturbation runs clean.

    use super::Termination;
    use crate::error::{Error, Result};
    use crate::geometry::ConeDomain;

    #[derive(Debug, Clone)]
    pub struct SimilarityState {
        pub dom: ConeDomain,
        /// xi-cells on [0, delta].
        pub nx: usize,
        pub t: f64,
        /// Field values `V` on the xi-nodes.
        pub v: Vec<f64>,
        /// `W = V_t` on the xi-nodes.
        pub w: Vec<f64>,
    }

    impl SimilarityState {
        pub fn new(dom: ConeDomain, nx: usize, t: f64, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
            if nx < 16 {
                return Err(Error::Resolution { required: 16, available: nx });
            }
            if v.len() != nx + 1 || w.len() != nx + 1 {
                return Err(Error::InvalidParameter("similarity state arrays must match nx+1".into()));
            }
            Ok(Self { dom, nx, t, v, w })
        }

        pub fn dxi(&self) -> f64 {
            self.dom.delta / self.nx as f64
        }

        pub fn xi(&self, j: usize) -> f64 {
            j as f64 * self.dxi()
        }
    }

    fn d1(f: &[f64], h: f64) -> Vec<f64> {
        let n = f.len() - 1;
        let mut d = vec![0.0; n + 1];
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        for i in 1..n {
            d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
        }
        d[n] = (3.0 * f[n] - 4.0 * f[n - 1] + f[n - 2]) / (2.0 * h);
        d
    }

    fn d2(f: &[f64], h: f64) -> Vec<f64> {
        let n = f.len() - 1;
        let mut d = vec![0.0; n + 1];
        let hh = h * h;
        d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / hh;
        for i in 1..n {
            d[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / hh;
        }
        d[n] = (2.0 * f[n] - 5.0 * f[n - 1] + 4.0 * f[n - 2] - f[n - 3]) / hh;
        d
    }

    /// `(V_t, W_t)` of the transformed equation at the current state.
    fn rhs(state: &SimilarityState, t: f64, v: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = state.dxi();
        let sigma = 1.0 / state.dom.s(t);
        let vx = d1(v, h);
        let vxx = d2(v, h);
        let wx = d1(w, h);
        let n = v.len();
        let mut acc = vec![0.0; n];
        for i in 0..n {
            let xi = state.xi(i);
            let ux = sigma * vx[i];
            let ut = w[i] + xi * sigma * vx[i];
            let uxx = sigma * sigma * vxx[i];
            let q = 1.0 - ut * ut + ux * ux;
            if q < 0.0 {
                return Err(Error::NonTimelike { x: xi / sigma });
            }
            let mut wxi = wx[i];
            if ut.abs() > 1.0 {
                // Combined W_xi coefficient in the W equation: the
                // mixed-derivative part plus the frame transport. Biased
                // like the physical-frame u_tx stencil and to the same
                // effect.
                let e_coef = sigma * (2.0 * ut * ux / (1.0 + ux * ux) - 2.0 * xi);
                if e_coef > 0.0 && i + 2 < n {
                    wxi = (-3.0 * w[i] + 4.0 * w[i + 1] - w[i + 2]) / (2.0 * h);
                } else if e_coef < 0.0 && i >= 2 {
                    wxi = (3.0 * w[i] - 4.0 * w[i - 1] + w[i - 2]) / (2.0 * h);
                }
            }
            let utx = sigma * wxi + sigma * sigma * vx[i] + xi * sigma * sigma * vxx[i];
            let utt = (uxx * (1.0 - ut * ut) + 2.0 * ut * ux * utx) / (1.0 + ux * ux);
            acc[i] = utt
                - 2.0 * xi * sigma * wxi
                - 2.0 * xi * sigma * sigma * vx[i]
                - xi * xi * sigma * sigma * vxx[i];
        }
        Ok((w.to_vec(), acc))
    }

    /// CFL bound from the xi-frame characteristic speeds
    /// `sigma (c± + xi)`.
    pub fn cfl_dt(state: &SimilarityState, cfl_number: f64) -> Result<f64> {
        let h = state.dxi();
        let sigma = 1.0 / state.dom.s(state.t);
        let vx = d1(&state.v, h);
        let mut speed: f64 = 1e-12;
        for i in 0..state.v.len() {
            let xi = state.xi(i);
            let ux = sigma * vx[i];
            let ut = state.w[i] + xi * sigma * vx[i];
            let q = 1.0 - ut * ut + ux * ux;
            if q < 0.0 {
                return Err(Error::NonTimelike { x: xi / sigma });
            }
            let root = q.sqrt();
            let denom = 1.0 + ux * ux;
            for c in [(ut * ux + root) / denom, (ut * ux - root) / denom] {
                speed = speed.max((sigma * (c + xi)).abs());
            }
        }
        Ok(cfl_number * h / speed)
    }

    /// Dirichlet traces `(V, W)` at xi = 0 and xi = delta.
    pub type Traces<'a> = &'a dyn Fn(f64) -> ((f64, f64), (f64, f64));

    pub fn step(
        state: &SimilarityState,
        traces: Traces,
        dt: f64,
        dissipation: f64,
    ) -> Result<SimilarityState> {
        let n = state.v.len();
        let t = state.t;
        let h = state.dxi();
        let eval = |tt: f64, v: &[f64], w: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut v = v.to_vec();
            let mut w = w.to_vec();
            let ((vl, wl), (vr, wr)) = traces(tt);
            v[0] = vl;
            w[0] = wl;
            v[n - 1] = vr;
            w[n - 1] = wr;
            let (mut dv, mut dw) = rhs(state, tt, &v, &w)?;
            if dissipation > 0.0 {
                super::add_dissipation(&mut dv, &v, dissipation, h);
                super::add_dissipation(&mut dw, &w, dissipation, h);
            }
            Ok((dv, dw))
        };
        let (k1v, k1w) = eval(t, &state.v, &state.w)?;
        let comb = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> {
            a.iter().zip(k).map(|(x, d)| x + c * dt * d).collect()
        };
        let (k2v, k2w) = eval(t + 0.5 * dt, &comb(&state.v, &k1v, 0.5), &comb(&state.w, &k1w, 0.5))?;
        let (k3v, k3w) = eval(t + 0.5 * dt, &comb(&state.v, &k2v, 0.5), &comb(&state.w, &k2w, 0.5))?;
        let (k4v, k4w) = eval(t + dt, &comb(&state.v, &k3v, 1.0), &comb(&state.w, &k3w, 1.0))?;
        let mut v = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            v[i] = state.v[i] + dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            w[i] = state.w[i] + dt / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
        }
        let ((vl, wl), (vr, wr)) = traces(t + dt);
        v[0] = vl;
        w[0] = wl;
        v[n - 1] = vr;
        w[n - 1] = wr;
        if v.iter().chain(w.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("similarity step output"));
        }
        Ok(SimilarityState { dom: state.dom, nx: state.nx, t: t + dt, v, w })
    }

    /// Evolve to `t_end`, invoking `observer(t, V, W)` after every
    /// accepted step (and once on the initial state).
    pub fn evolve<F>(
        mut state: SimilarityState,
        traces: Traces,
        t_end: f64,
        opts: super::EvolveOptions,
        mut observer: F,
    ) -> Result<(SimilarityState, Termination)>
    where
        F: FnMut(f64, &[f64], &[f64]),
    {
        let cfl_number = opts.cfl_number;
        if t_end > state.dom.t_bar {
            return Err(Error::InvalidParameter(format!(
                "t_end={t_end} exceeds the domain's t_bar={}",
                state.dom.t_bar
            )));
        }
        observer(state.t, &state.v, &state.w);
        loop {
            let mut dt = match cfl_dt(&state, cfl_number) {
                Ok(dt) => dt,
                Err(Error::NonTimelike { .. }) => return Ok((state, Termination::NonTimelike)),
                Err(e) => return Err(e),
            };
            if state.t + dt >= t_end {
                dt = t_end - state.t;
            }
            if dt <= f64::EPSILON * t_end.max(1.0) {
                return Ok((state, Termination::ReachedTEnd));
            }
            match step(&state, traces, dt, opts.dissipation) {
                Ok(next) => {
                    state = next;
                    observer(state.t, &state.v, &state.w);
                    if (t_end - state.t) <= f64::EPSILON * t_end.max(1.0) {
                        return Ok((state, Termination::ReachedTEnd));
                    }
                }
                Err(Error::NonFinite(_)) => return Ok((state, Termination::NonFinite)),
                Err(Error::NonTimelike { .. }) => return Ok((state, Termination::NonTimelike)),
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{eval_uk, SelfSimilarParams};

    fn exact_state(p: SelfSimilarParams, grid: &Grid1D, t: f64) -> FieldState {
        let u: Vec<f64> = grid.nodes().iter().map(|&x| eval_uk(p, t, x).unwrap().u).collect();
        let v: Vec<f64> = grid.nodes().iter().map(|&x| eval_uk(p, t, x).unwrap().u_t).collect();
        FieldState::new(grid.clone(), t, u, v).unwrap()
    }

    fn exact_traces(p: SelfSimilarParams, grid: &Grid1D) -> impl Fn(f64) -> ((f64, f64), (f64, f64)) {
        let (xl, xr) = (grid.x_min, grid.x_max);
        move |t: f64| {
            let jl = eval_uk(p, t, xl).unwrap();
            let jr = eval_uk(p, t, xr).unwrap();
            ((jl.u, jl.u_t), (jr.u, jr.u_t))
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        let grid = Grid1D::new(0.0, 1.0, 32).unwrap();
        let state = FieldState::new(grid.clone(), 0.0, vec![0.0; 33], vec![0.0; 33]).unwrap();
        let zero_bc = |_t: f64| ((0.0, 0.0), (0.0, 0.0));
        let bc = Boundary::Dirichlet(&zero_bc);
        let rhs = bi_rhs(&state, &bc);
        assert!(rhs.iter().all(|&x| x == 0.0));
        let next = step(&state, &bc, 1e-3, 0.0).unwrap();
        assert!(next.u.iter().all(|&x| x == 0.0));
        assert!(next.v.iter().all(|&x| x == 0.0));
        let report = evolve(state, &bc, 0.1, EvolveOptions::default()).unwrap();
        assert_eq!(report.terminated, Termination::ReachedTEnd);
        assert!(report.grad_at_origin.iter().all(|&g| g == 0.0));
        assert!(report.mass.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn cfl_limits() {
        let grid = Grid1D::new(0.0, 1.0, 64).unwrap();
        let zero = FieldState::new(grid.clone(), 0.0, vec![0.0; 65], vec![0.0; 65]).unwrap();
        // Linear wave limit: speeds +-1, dt = cfl * h.
        let dt = cfl_dt(&zero, false, DEFAULT_CFL).unwrap();
        assert!((dt - DEFAULT_CFL * grid.spacing()).abs() < 1e-15);
        // u_t = 2, u_x = 0 has radicand -3: not timelike.
        let bad = FieldState::new(grid, 0.0, vec![0.0; 65], vec![2.0; 65]).unwrap();
        assert!(matches!(cfl_dt(&bad, false, DEFAULT_CFL), Err(Error::NonTimelike { .. })));
    }

    #[test]
    fn near_blowup_step_shrinks_with_cone() {
        // Along the family the characteristic scale follows T-t.
        let p = SelfSimilarParams::new(1.0, 1.0).unwrap();
        let grid = Grid1D::new(0.0, 0.04, 64).unwrap();
        let early = exact_state(p, &grid, 0.0);
        let late = exact_state(p, &grid, 0.95);
        let dt_early = cfl_dt(&early, false, DEFAULT_CFL).unwrap();
        let dt_late = cfl_dt(&late, false, DEFAULT_CFL).unwrap();
        assert!(dt_late <= dt_early);
    }

    #[test]
    fn step_rejects_oversized_dt() {
        let grid = Grid1D::new(0.0, 1.0, 32).unwrap();
        let state = FieldState::new(grid.clone(), 0.0, vec![0.0; 33], vec![0.0; 33]).unwrap();
        let zero_bc = |_t: f64| ((0.0, 0.0), (0.0, 0.0));
        let bc = Boundary::Dirichlet(&zero_bc);
        let too_big = 2.0 * grid.spacing();
        assert!(matches!(step(&state, &bc, too_big, 0.0), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn rhs_matches_closed_form_acceleration() {
        // Sampled family data: the discrete acceleration converges to
        // u_tt at second order.
        let p = SelfSimilarParams::new(1.0, 1.0).unwrap();
        let mut errs = Vec::new();
        for &n in &[256usize, 512] {
            let grid = Grid1D::new(0.0, 0.5, n).unwrap();
            let state = exact_state(p, &grid, 0.0);
            let tr = exact_traces(p, &grid);
            let bc = Boundary::Dirichlet(&tr);
            let rhs = bi_rhs(&state, &bc);
            let mut emax = 0.0f64;
            for (i, &x) in grid.nodes().iter().enumerate().skip(1).take(n - 1) {
                let want = eval_uk(p, 0.0, x).unwrap().u_tt;
                emax = emax.max((rhs[i] - want).abs());
            }
            errs.push(emax);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "rhs convergence ratio {ratio}");
    }

    #[test]
    fn rhs_matches_travelling_wave_oracle() {
        // State sampled from u = sin(t+x) - sin(t-x); the oracle is the
        // acceleration formula evaluated on the analytic derivatives.
        let grid = Grid1D::new(0.0, 1.0, 512).unwrap();
        let t = 0.3;
        let u: Vec<f64> = grid.nodes().iter().map(|&x| (t + x).sin() - (t - x).sin()).collect();
        let v: Vec<f64> = grid.nodes().iter().map(|&x| (t + x).cos() - (t - x).cos()).collect();
        let state = FieldState::new(grid.clone(), t, u, v).unwrap();
        let tr = |_t: f64| ((0.0, 0.0), (0.0, 0.0));
        let bc = Boundary::Dirichlet(&tr);
        let rhs = bi_rhs(&state, &bc);
        for (i, &x) in grid.nodes().iter().enumerate().skip(1).take(grid.n - 1) {
            let ut = (t + x).cos() - (t - x).cos();
            let ux = (t + x).cos() + (t - x).cos();
            let uxx = -(t + x).sin() + (t - x).sin();
            let utx = -(t + x).sin() - (t - x).sin();
            let want = (uxx * (1.0 - ut * ut) + 2.0 * ut * ux * utx) / (1.0 + ux * ux);
            assert!((rhs[i] - want).abs() < 5e-5, "node {i}: {} vs {want}", rhs[i]);
        }
    }

    #[test]
    fn evolve_tracks_exact_solution() {
        // Exact data and traces on an interval that stays on the two-way
        // side of the degenerate curve until t_end, so pure Dirichlet
        // traces are well-posed for the whole run.
        let p = SelfSimilarParams::new(1.0, 1.0).unwrap();
        let grid = Grid1D::new(0.0, 0.1, 256).unwrap();
        assert!(outflow_switch_time(grid.x_max, p.t_max) > 0.5);
        let initial = exact_state(p, &grid, 0.0);
        let tr = exact_traces(p, &grid);
        let bc = Boundary::Dirichlet(&tr);
        let report = evolve(initial, &bc, 0.5, EvolveOptions::default()).unwrap();
        assert_eq!(report.terminated, Termination::ReachedTEnd);
        let state = &report.final_state;
        let mut emax = 0.0f64;
        for (i, &x) in grid.nodes().iter().enumerate() {
            emax = emax.max((state.u[i] - eval_uk(p, state.t, x).unwrap().u).abs());
        }
        // Second-order error at n=256; the acceptance suite runs the
        // n=1024 refinement against the 1e-4 gate.
        assert!(emax < 2e-3, "exact-solution error {emax}");
    }

    #[test]
    fn evolve_tracks_blowup_rate_past_the_curve() {
        // The run crosses the degenerate curve; the sponge collar keeps
        // the one-way right end stable and the rescaled gradient at the
        // origin keeps following 2k.
        let p = SelfSimilarParams::new(1.0, 1.0).unwrap();
        let t_end = 0.8;
        let grid = Grid1D::new(0.0, 0.8 * (p.t_max - t_end), 512).unwrap();
        let initial = exact_state(p, &grid, 0.0);
        let tr = exact_traces(p, &grid);
        let rf = move |t: f64, x: f64| {
            let j = eval_uk(p, t, x).unwrap();
            (j.u, j.u_t)
        };
        let bc = Boundary::DirichletWithSponge {
            trace: &tr,
            reference: &rf,
            start_frac: 0.7,
            strength: 8.0,
        };
        let opts = EvolveOptions { cfl_number: DEFAULT_CFL, dissipation: 1.0 };
        let report = evolve(initial, &bc, t_end, opts).unwrap();
        assert_eq!(report.terminated, Termination::ReachedTEnd);
        for (t, g) in report.times.iter().zip(&report.grad_at_origin) {
            let rescaled = (p.t_max - t) * g / (2.0 * p.k);
            assert!((rescaled - 1.0).abs() <= 0.05, "rate {rescaled} at t={t}");
        }
    }

    #[test]
    fn periodic_bump_conserves_mass() {
        let grid = Grid1D::new(0.0, 1.0, 512).unwrap();
        let u = vec![0.0; 513];
        let v: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| 0.1 * (std::f64::consts::PI * 2.0 * x).sin())
            .collect();
        let initial = FieldState::new(grid, 0.0, u, v).unwrap();
        let report = evolve(initial, &Boundary::Periodic, 0.25, EvolveOptions::default()).unwrap();
        assert_eq!(report.terminated, Termination::ReachedTEnd);
        let m0 = report.mass[0];
        for m in &report.mass {
            assert!((m - m0).abs() <= 1e-6 * (1.0 + m0.abs()), "mass drift {}", (m - m0).abs());
        }
    }

    #[test]
    fn similarity_frame_keeps_profile_steady() {
        use super::similarity::*;
        use crate::geometry::ConeDomain;
        let dom = ConeDomain::default_experiment();
        let nx = 128;
        let k = 1.0;
        let profile = |xi: f64| crate::exact::steady_profile(k, xi).unwrap();
        let v: Vec<f64> = (0..=nx).map(|j| profile(dom.delta * j as f64 / nx as f64)).collect();
        let w = vec![0.0; nx + 1];
        let state = SimilarityState::new(dom, nx, 0.0, v, w).unwrap();
        let tr = move |_t: f64| ((0.0, 0.0), (profile(dom.delta), 0.0));
        let mut sup: f64 = 0.0;
        let opts = super::EvolveOptions { cfl_number: super::DEFAULT_CFL, dissipation: 0.5 };
        let (final_state, term) = evolve(state, &tr, 0.5, opts, |_t, v, _w| {
            for (j, val) in v.iter().enumerate() {
                let xi = dom.delta * j as f64 / nx as f64;
                sup = sup.max((val - profile(xi)).abs());
            }
        })
        .unwrap();
        assert_eq!(term, Termination::ReachedTEnd);
        assert!((final_state.t - 0.5).abs() < 1e-12);
        assert!(sup < 5e-4, "steady profile drifted by {sup}");
    }
}
