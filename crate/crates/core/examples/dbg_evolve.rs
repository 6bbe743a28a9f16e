use bicone::evolve::*;
use bicone::exact::{eval_uk, SelfSimilarParams};
use bicone::geometry::Grid1D;
use std::time::Instant;

fn run(n: usize, t_end: f64) -> (f64, f64) {
    let p = SelfSimilarParams::new(1.0, 1.0).unwrap();
    let grid = Grid1D::new(0.0, 0.8 * (p.t_max - t_end), n).unwrap();
    let u: Vec<f64> = grid.nodes().iter().map(|&x| eval_uk(p, 0.0, x).unwrap().u).collect();
    let v: Vec<f64> = grid.nodes().iter().map(|&x| eval_uk(p, 0.0, x).unwrap().u_t).collect();
    let state = FieldState::new(grid.clone(), 0.0, u, v).unwrap();
    let (xl, xr) = (grid.x_min, grid.x_max);
    let tr = move |t: f64| {
        let jl = eval_uk(p, t, xl).unwrap();
        let jr = eval_uk(p, t, xr).unwrap();
        ((jl.u, jl.u_t), (jr.u, jr.u_t))
    };
    let rf = move |t: f64, x: f64| { let j = eval_uk(p, t, x).unwrap(); (j.u, j.u_t) };
    let bc = Boundary::DirichletWithSponge { trace: &tr, reference: &rf, start_frac: 0.7, strength: 8.0 };
    let start = Instant::now();
    let opts = EvolveOptions { cfl_number: DEFAULT_CFL, dissipation: 1.0 };
    let report = evolve(state, &bc, t_end, opts).unwrap();
    let el = start.elapsed().as_secs_f64();
    let mut worst_rate: f64 = 0.0;
    for (t, g) in report.times.iter().zip(&report.grad_at_origin) {
        worst_rate = worst_rate.max(((p.t_max - t) * g / (2.0 * p.k) - 1.0).abs());
    }
    // final-state error in u (interior, away from sponge)
    let st = &report.final_state;
    let mut err: f64 = 0.0;
    for (i, &x) in grid.nodes().iter().enumerate() {
        if x <= 0.7 * xr {
            err = err.max((st.u[i] - eval_uk(p, st.t, x).unwrap().u).abs());
        }
    }
    println!("n={n}: term={:?} at t={:.4}, worst rate dev={:.3e}, final u-err={:.3e}, {:.1}s, steps={}", report.terminated, report.times.last().unwrap(), worst_rate, err, el, report.times.len());
    (worst_rate, err)
}

fn main() {
    let mut errs = vec![];
    for n in [512usize, 1024, 2048] {
        let (_, e) = run(n, 0.95);
        errs.push(e);
    }
    println!("error ratios: {:.2} {:.2}", errs[0]/errs[1], errs[1]/errs[2]);
    let slope = ((errs[0]/errs[2]).ln() / (4.0f64).ln());
    println!("convergence slope: {:.2}", slope);
}
