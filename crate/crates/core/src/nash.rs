//! Nash-Moser iteration for the perturbation problem.
//!
//! The unknown is shifted by the data extension `g = eps w0 + eps t w1`,
//! giving a reduced equation for `psi = w - g` with zero initial data
//! and a computable forcing `F`. Each step linearizes the reduced
//! operator at the current iterate, solves the linear mixed problem
//! with zero data through [`crate::mixed`], and adds the increment:
//!
//! ```text
//! E(m-1) = F_m(psi(m-1)),   L h(m) = -E(m-1),   psi(m) = psi(m-1) + h(m),
//! ```
//!
//! where `F_m` applies the frequency cutoff `Pi_{N_m}` (N_m = N0^m
//! retained cosine modes per slice) to the quadratic/cubic bracket. The
//! per-step record keeps the discrete `C^2_s` norms of `h` and of the
//! residual on the descending exponent ladder `s_m = s_bar +
//! (s-s_bar)/2^m`, whose quadratic decay is the convergence
//! certificate.

use crate::error::{Error, Result};
use crate::exact::Jet2;
use crate::linearize::{base_coefficients, nonlinear_bracket, Background, CoefficientField};
use crate::mixed::{physical_jets, regularized_b, solve, LinearProblem, SpaceTimeGrid};
use crate::sobolev::{c2s_norm, SmoothingOperator, TimeSlab};

/// Initial-data profiles and their first two derivatives in physical x:
/// each call returns `[value, d/dx, d2/dx2]`.
pub struct DataFns<'a> {
    pub w0: &'a dyn Fn(f64) -> [f64; 3],
    pub w1: &'a dyn Fn(f64) -> [f64; 3],
}

/// Iteration parameters. The smallness chain `0 < eps < N0^{-8} d^2 < R`
/// is the regime in which the quadratic-decay bookkeeping closes.
#[derive(Debug, Clone)]
pub struct IterationConfig {
    pub grid: SpaceTimeGrid,
    pub epsilon: f64,
    /// Ball radius R for the background membership guard.
    pub ball_radius: f64,
    /// Cutoff base; `N_m = n0^m`.
    pub n0: u32,
    pub s_bar: usize,
    pub s: usize,
    /// Decay gauge d of the certificate `||h(m)|| < d^{2^m}`.
    pub decay_gauge: f64,
    pub max_m: usize,
    /// Regularizations handed to the linear solves.
    pub kappa: f64,
    pub theta: f64,
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 < 2 {
            return Err(Error::InvalidParameter("cutoff base n0 must be >= 2".into()));
        }
        if self.s_bar < 2 || self.s <= self.s_bar {
            return Err(Error::InvalidParameter("exponents need 2 <= s_bar < s".into()));
        }
        if self.max_m < 3 {
            return Err(Error::InvalidParameter("max_m must be at least 3".into()));
        }
        let gate = (self.n0 as f64).powi(-8) * self.decay_gauge * self.decay_gauge;
        if !(self.epsilon > 0.0 && self.epsilon < gate && gate < self.ball_radius && self.ball_radius < 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "smallness chain violated: need 0 < eps < N0^-8 d^2 < R < 1, got eps={}, N0^-8 d^2={:.3e}, R={}",
                self.epsilon, gate, self.ball_radius
            )));
        }
        Ok(())
    }

    /// Residual floor: quadratic decay below the discretization error is
    /// unobservable, so the iteration stops at 1e-2 x spacing^2.
    pub fn floor(&self) -> f64 {
        1e-2 * self.grid.spacing() * self.grid.spacing()
    }
}

/// One recorded step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub m: usize,
    pub n_m: f64,
    /// Ladder exponent (real) and the integer order actually measured.
    pub s_m: f64,
    pub s_eval: usize,
    pub h_norm: f64,
    pub e_norm: f64,
    /// `log ||E(m)|| / log ||E(m-1)||`, when both sides are usable.
    pub ratio: Option<f64>,
    pub psi_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationStatus {
    MaxSteps,
    FloorReached,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub steps: Vec<StepRecord>,
    pub floor: f64,
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub trace: IterationTrace,
    pub psi: Vec<f64>,
    pub status: IterationStatus,
}

/// The reduced zero-data problem: forcing, residual evaluation and the
/// linearization background.
pub struct ReducedEquation<'a> {
    pub grid: &'a SpaceTimeGrid,
    pub epsilon: f64,
    data: &'a DataFns<'a>,
    /// Forcing `F` at every node.
    pub forcing: Vec<f64>,
    /// Columns pinned by the degenerate-curve rows, per level.
    curve: Vec<usize>,
}

impl<'a> ReducedEquation<'a> {
    /// Shift the unknown by the data extension and assemble `F`.
    pub fn new(grid: &'a SpaceTimeGrid, data: &'a DataFns<'a>, epsilon: f64) -> Result<Self> {
        let mut eq =
            ReducedEquation { grid, epsilon, data, forcing: vec![0.0; grid.num_nodes()], curve: Vec::new() };
        eq.curve = (0..=grid.nt).map(|i| grid.curve_column(i)).collect::<Result<_>>()?;
        let t_max = grid.dom.t_max;
        for i in 0..=grid.nt {
            let t = grid.t(i);
            for j in 0..=grid.nx {
                let x = grid.xi(j) * grid.dom.s(t);
                let g = eq.g_jet(t, x);
                let (b, c, dc, e, jw) = base_coefficients(t, x, t_max)?;
                // F = -(linear part applied to g) - j H(g); g_tt = 0.
                let lin = -b * g.u_xx - c * g.u_t + dc * g.u_x - e * g.u_tx;
                eq.forcing[grid.idx(i, j)] = -lin - jw * nonlinear_bracket(&g, t, x, t_max)?;
            }
        }
        Ok(eq)
    }

    /// Jet of the data extension `g = eps (w0 + t w1)`.
    pub fn g_jet(&self, t: f64, x: f64) -> Jet2 {
        let w0 = (self.data.w0)(x);
        let w1 = (self.data.w1)(x);
        let e = self.epsilon;
        Jet2 {
            u: e * (w0[0] + t * w1[0]),
            u_t: e * w1[0],
            u_x: e * (w0[1] + t * w1[1]),
            u_tt: 0.0,
            u_tx: e * w1[1],
            u_xx: e * (w0[2] + t * w1[2]),
        }
    }

    /// Nodes at which the discrete system imposes the equation.
    pub fn is_equation_node(&self, i: usize, j: usize) -> bool {
        i >= 1 && i <= self.grid.nt - 1 && j >= 1 && j <= self.grid.nx - 1 && j != self.curve[i + 1]
    }

    /// Combined background jets `psi + g` at the grid nodes.
    pub fn background_jets(&self, psi: &[f64]) -> Vec<Jet2> {
        let mut jets = physical_jets(psi, self.grid);
        for i in 0..=self.grid.nt {
            let t = self.grid.t(i);
            for j in 0..=self.grid.nx {
                let x = self.grid.xi(j) * self.grid.dom.s(t);
                let id = self.grid.idx(i, j);
                jets[id] = jets[id].add(&self.g_jet(t, x));
            }
        }
        jets
    }

    /// Residual of the reduced equation at `psi`, with the bracket
    /// passed through the `modes`-term cosine cutoff per time slice
    /// (`None` = unsmoothed). Zero on constraint rows, so this is the
    /// residual of the discrete system the iteration drives to zero.
    pub fn residual_field(
        &self,
        psi: &[f64],
        modes: Option<usize>,
        kappa: f64,
        theta: f64,
    ) -> Result<Vec<f64>> {
        let g = self.grid;
        let t_max = g.dom.t_max;
        let psi_jets = physical_jets(psi, g);
        // Nonlinear bracket H(psi+g) - H(g) on the whole grid.
        let mut bracket = vec![0.0; g.num_nodes()];
        for i in 0..=g.nt {
            let t = g.t(i);
            for j in 0..=g.nx {
                let x = g.xi(j) * g.dom.s(t);
                let id = g.idx(i, j);
                let gj = self.g_jet(t, x);
                bracket[id] = nonlinear_bracket(&psi_jets[id].add(&gj), t, x, t_max)?
                    - nonlinear_bracket(&gj, t, x, t_max)?;
            }
        }
        if let Some(m) = modes {
            // N_m counts retained modes above the constant one.
            let theta_cut = (m as f64 + 0.5) * std::f64::consts::PI / g.dom.delta;
            let op = SmoothingOperator::new(theta_cut.max(1.0), g.dom.delta)?;
            for i in 0..=g.nt {
                let row = &bracket[g.idx(i, 0)..=g.idx(i, g.nx)];
                let smoothed = op.apply(row);
                bracket[g.idx(i, 0)..=g.idx(i, g.nx)].copy_from_slice(&smoothed);
            }
        }
        let mut res = vec![0.0; g.num_nodes()];
        for i in 0..=g.nt {
            let t = g.t(i);
            for j in 0..=g.nx {
                if !self.is_equation_node(i, j) {
                    continue;
                }
                let x = g.xi(j) * g.dom.s(t);
                let id = g.idx(i, j);
                let (b, c, dc, e, jw) = base_coefficients(t, x, t_max)?;
                let b_eff = regularized_b(b, kappa, theta);
                let p = &psi_jets[id];
                res[id] = p.u_tt - b_eff * p.u_xx - c * p.u_t + dc * p.u_x - e * p.u_tx
                    + jw * bracket[id]
                    - self.forcing[id];
            }
        }
        Ok(res)
    }

    /// Residual of the original perturbation equation for `w = psi + g`,
    /// evaluated with the same discrete jets (interior nodes only).
    pub fn perturbation_residual_field(&self, psi: &[f64]) -> Result<Vec<f64>> {
        let g = self.grid;
        let jets = self.background_jets(psi);
        let mut res = vec![0.0; g.num_nodes()];
        for i in 1..g.nt {
            let t = g.t(i);
            for j in 1..g.nx {
                let x = g.xi(j) * g.dom.s(t);
                let id = g.idx(i, j);
                res[id] = crate::linearize::perturbation_residual(&jets[id], t, x, g.dom.t_max)?;
            }
        }
        Ok(res)
    }
}

/// Background wrapper serving precomputed nodal jets.
struct NodalBackground<'a> {
    grid: &'a SpaceTimeGrid,
    jets: Vec<Jet2>,
}

impl Background for NodalBackground<'_> {
    fn jet(&self, t: f64, x: f64) -> Jet2 {
        let i = (t / self.grid.dt()).round() as usize;
        let s = self.grid.dom.s(self.grid.t(i.min(self.grid.nt)));
        let j = (x / s / self.grid.dxi()).round() as usize;
        self.jets[self.grid.idx(i.min(self.grid.nt), j.min(self.grid.nx))]
    }
}

/// `C^2_s` norm of a grid field over the rectangle slices.
pub fn field_c2s_norm(field: &[f64], grid: &SpaceTimeGrid, s: usize) -> Result<f64> {
    let w = grid.nx + 1;
    let values: Vec<Vec<f64>> = (0..=grid.nt).map(|i| field[i * w..(i + 1) * w].to_vec()).collect();
    c2s_norm(&TimeSlab::new(grid.dxi(), grid.dt(), values)?, s)
}

/// Run the iteration from the zero initial guess.
pub fn iterate(config: &IterationConfig, data: &DataFns) -> Result<IterationOutcome> {
    config.validate()?;
    let grid = &config.grid;
    let eq = ReducedEquation::new(grid, data, config.epsilon)?;
    let floor = config.floor();
    let mut psi = vec![0.0; grid.num_nodes()];
    let mut steps = Vec::new();

    let ladder = |m: usize| -> (f64, usize) {
        let s_m = config.s_bar as f64 + (config.s - config.s_bar) as f64 / (1u64 << m) as f64;
        (s_m, s_m.floor() as usize)
    };

    // m = 0 row: residual of the zero guess (the forcing itself).
    let (s0, s0_eval) = ladder(0);
    let e0_field = eq.residual_field(&psi, Some(config.n0 as usize), config.kappa, config.theta)?;
    let mut e_prev = field_c2s_norm(&e0_field, grid, s0_eval)?;
    steps.push(StepRecord {
        m: 0,
        n_m: 1.0,
        s_m: s0,
        s_eval: s0_eval,
        h_norm: 0.0,
        e_norm: e_prev,
        ratio: None,
        psi_norm: 0.0,
    });
    if e_prev < floor {
        return Ok(IterationOutcome {
            trace: IterationTrace { steps, floor },
            psi,
            status: IterationStatus::FloorReached,
        });
    }

    let mut status = IterationStatus::MaxSteps;
    for m in 1..=config.max_m {
        let n_m = (config.n0 as f64).powi(m as i32);
        let (s_m, s_eval) = ladder(m);
        // Linearize at psi + g and solve for the increment with zero data.
        let bg = NodalBackground { grid, jets: eq.background_jets(&psi) };
        let cf = CoefficientField::sample(&bg, grid)?;
        let e_field = eq.residual_field(&psi, Some(n_m as usize), config.kappa, config.theta)?;
        let rhs: Vec<f64> = e_field.iter().map(|v| -v).collect();
        let problem = LinearProblem::homogeneous(cf, rhs, config.kappa, config.theta)?;
        let sol = solve(&problem)?;
        for (p, h) in psi.iter_mut().zip(&sol.h) {
            *p += h;
        }
        let new_e_field = eq.residual_field(&psi, Some(n_m as usize), config.kappa, config.theta)?;
        let h_norm = field_c2s_norm(&sol.h, grid, s_eval)?;
        let e_norm = field_c2s_norm(&new_e_field, grid, s_eval)?;
        // Ball membership is checked in the target space C^2_{s_bar}.
        let psi_norm = field_c2s_norm(&psi, grid, config.s_bar)?;
        let ratio = if e_norm > 0.0 && e_prev > 0.0 && e_norm < 1.0 && e_prev < 1.0 {
            Some(e_norm.ln() / e_prev.ln())
        } else {
            None
        };
        steps.push(StepRecord { m, n_m, s_m, s_eval, h_norm, e_norm, ratio, psi_norm });
        if psi_norm > config.ball_radius {
            status = IterationStatus::Diverged;
            break;
        }
        if e_norm < floor {
            status = IterationStatus::FloorReached;
            break;
        }
        e_prev = e_norm;
    }
    if status == IterationStatus::Diverged {
        let trace = IterationTrace { steps, floor };
        return Ok(IterationOutcome { trace, psi, status });
    }
    Ok(IterationOutcome { trace: IterationTrace { steps, floor }, psi, status })
}

/// C4 compact bump `(x (c-x))^5`, scaled by `amp`, supported on `[0, c]`.
/// Smooth enough that its discrete `H^4` norms stay bounded under grid
/// refinement.
pub fn compact_bump(c: f64, amp: f64) -> impl Fn(f64) -> [f64; 3] + Sync {
    let scale = amp / (c * c / 4.0).powi(5);
    move |x: f64| {
        if x <= 0.0 || x >= c {
            return [0.0, 0.0, 0.0];
        }
        let p = x * (c - x);
        let dp = c - 2.0 * x;
        [
            scale * p.powi(5),
            scale * 5.0 * p.powi(4) * dp,
            scale * (20.0 * p.powi(3) * dp * dp - 10.0 * p.powi(4)),
        ]
    }
}

/// Amplitude that gives `compact_bump(c, amp)` a unit discrete H^2 norm
/// (measured on a fine reference grid over `[0, c]`).
pub fn unit_h2_amplitude(c: f64) -> f64 {
    let n = 2048;
    let h = c / n as f64;
    let raw = compact_bump(c, 1.0);
    let vals: Vec<f64> = (0..=n).map(|i| raw(i as f64 * h)[0]).collect();
    let norm = crate::sobolev::h_norm(&vals, h, 2).expect("reference grid resolves the bump");
    1.0 / norm
}
