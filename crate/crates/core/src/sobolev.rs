//! Discrete Sobolev norms and cosine-cutoff smoothing operators.
//!
//! `h_norm` realizes the H^s norm on a uniform grid as
//! `sqrt(sum_{i=0..s} ||D^i f||_{L^2}^2)` with repeated second-order
//! difference derivatives and trapezoid quadrature. `c2s_norm` is the
//! solution-space norm `sup_t sum_{i=0..2} ||d_t^i u||_{H^{s-i}}^2`.
//!
//! The smoothing family `{Pi_theta}` truncates the cosine series of the
//! even extension: mode `k` (frequency `k pi / L`) is kept iff
//! `k <= theta L / pi`. That cutoff rule is the single source of truth
//! relating `theta` to frequency. Sharp truncation makes every
//! `Pi_theta` an exact projection and gives the operator-norm bounds
//! `||Pi_theta u||_{H^{s1}} <= C theta^{(s1-s2)+} ||u||_{H^{s2}}` and
//! friends with grid-independent constants.

use crate::error::{Error, Result};

/// First derivative with second-order stencils (central inside,
/// one-sided at the ends).
pub fn derivative(f: &[f64], spacing: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 3, "derivative needs at least 3 nodes");
    let mut d = vec![0.0; n];
    let h2 = 2.0 * spacing;
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / h2;
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - f[i - 1]) / h2;
    }
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / h2;
    d
}

/// Trapezoid rule for `integral f^2`.
pub fn l2_norm_sq(f: &[f64], spacing: f64) -> f64 {
    let n = f.len();
    let mut s = 0.5 * (f[0] * f[0] + f[n - 1] * f[n - 1]);
    for v in &f[1..n - 1] {
        s += v * v;
    }
    s * spacing
}

fn check_resolution(len: usize, s: usize) -> Result<()> {
    // Each derivative level consumes accuracy; cap s at a quarter of the
    // cell count.
    let n = len.saturating_sub(1);
    if s > n / 4 {
        return Err(Error::Resolution { required: 4 * s + 1, available: len });
    }
    Ok(())
}

/// Discrete `H^s` norm of grid values `f` with uniform `spacing`.
pub fn h_norm(f: &[f64], spacing: f64, s: usize) -> Result<f64> {
    check_resolution(f.len(), s)?;
    let mut total = l2_norm_sq(f, spacing);
    let mut level = f.to_vec();
    for _ in 0..s {
        level = derivative(&level, spacing);
        total += l2_norm_sq(&level, spacing);
    }
    Ok(total.sqrt())
}

/// Grid functions stored per time slice, for time-derivative norms.
#[derive(Debug, Clone)]
pub struct TimeSlab {
    pub spacing: f64,
    pub dt: f64,
    /// `values[i]` is the slice at time `t_0 + i dt`.
    pub values: Vec<Vec<f64>>,
}

impl TimeSlab {
    pub fn new(spacing: f64, dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Resolution { required: 3, available: values.len() });
        }
        let w = values[0].len();
        if values.iter().any(|v| v.len() != w) {
            return Err(Error::InvalidParameter("ragged time slab".into()));
        }
        Ok(Self { spacing, dt, values })
    }

    /// Time derivative of each slice (second-order stencils).
    pub fn time_derivative(&self) -> TimeSlab {
        let m = self.values.len();
        let w = self.values[0].len();
        let mut out = vec![vec![0.0; w]; m];
        let h2 = 2.0 * self.dt;
        for j in 0..w {
            out[0][j] = (-3.0 * self.values[0][j] + 4.0 * self.values[1][j] - self.values[2][j]) / h2;
            for i in 1..m - 1 {
                out[i][j] = (self.values[i + 1][j] - self.values[i - 1][j]) / h2;
            }
            out[m - 1][j] =
                (3.0 * self.values[m - 1][j] - 4.0 * self.values[m - 2][j] + self.values[m - 3][j]) / h2;
        }
        TimeSlab { spacing: self.spacing, dt: self.dt, values: out }
    }
}

/// Discrete `C^s_2` norm: `sqrt(sup_t sum_{i=0..2} ||d_t^i u||^2_{H^{s-i}})`.
pub fn c2s_norm(u: &TimeSlab, s: usize) -> Result<f64> {
    if s < 2 {
        return Err(Error::InvalidParameter(format!("c2s norm needs s >= 2, got {s}")));
    }
    check_resolution(u.values[0].len(), s)?;
    let du = u.time_derivative();
    let ddu = du.time_derivative();
    let mut sup = 0.0f64;
    for i in 0..u.values.len() {
        let a = h_norm(&u.values[i], u.spacing, s)?;
        let b = h_norm(&du.values[i], u.spacing, s - 1)?;
        let c = h_norm(&ddu.values[i], u.spacing, s - 2)?;
        sup = sup.max(a * a + b * b + c * c);
    }
    Ok(sup.sqrt())
}

/// Type-I discrete cosine transform on `n+1` nodes (even extension of
/// period `2n`). `inverse(forward(f)) == f` exactly in exact arithmetic.
pub fn dct1_forward(f: &[f64]) -> Vec<f64> {
    let n = f.len() - 1;
    let mut c = vec![0.0; n + 1];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut s = 0.5 * (f[0] + if k % 2 == 0 { f[n] } else { -f[n] });
        for (j, fj) in f.iter().enumerate().take(n).skip(1) {
            s += fj * (std::f64::consts::PI * (k * j) as f64 / n as f64).cos();
        }
        *ck = 2.0 * s / n as f64;
    }
    c
}

pub fn dct1_inverse(c: &[f64]) -> Vec<f64> {
    let n = c.len() - 1;
    let mut f = vec![0.0; n + 1];
    for (j, fj) in f.iter_mut().enumerate() {
        let mut s = 0.5 * (c[0] + if j % 2 == 0 { c[n] } else { -c[n] });
        for (k, ck) in c.iter().enumerate().take(n).skip(1) {
            s += ck * (std::f64::consts::PI * (k * j) as f64 / n as f64).cos();
        }
        *fj = s;
    }
    f
}

/// Frequency-cutoff smoothing operator on `[0, length]`.
#[derive(Debug, Clone, Copy)]
pub struct SmoothingOperator {
    pub theta: f64,
    pub length: f64,
}

impl SmoothingOperator {
    pub fn new(theta: f64, length: f64) -> Result<Self> {
        if !(theta >= 1.0) {
            return Err(Error::InvalidParameter(format!("smoothing needs theta >= 1, got {theta}")));
        }
        if !(length > 0.0) {
            return Err(Error::InvalidParameter(format!("domain length must be positive, got {length}")));
        }
        Ok(Self { theta, length })
    }

    /// Highest cosine mode index kept: `k <= theta L / pi`.
    pub fn cutoff_mode(&self) -> usize {
        (self.theta * self.length / std::f64::consts::PI).floor() as usize
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len() - 1;
        let kmax = self.cutoff_mode();
        if kmax >= n {
            return f.to_vec();
        }
        let mut c = dct1_forward(f);
        for ck in c.iter_mut().skip(kmax + 1) {
            *ck = 0.0;
        }
        dct1_inverse(&c)
    }
}

/// Convenience wrapper: apply the cutoff projection at level `theta`.
pub fn smooth(f: &[f64], length: f64, theta: f64) -> Result<Vec<f64>> {
    Ok(SmoothingOperator::new(theta, length)?.apply(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sin_profile(n: usize) -> Vec<f64> {
        (0..=n).map(|i| (PI * i as f64 / n as f64).sin()).collect()
    }

    #[test]
    fn h_norm_zero_and_analytic_values() {
        let n = 512;
        let h = 1.0 / n as f64;
        for s in 0..4 {
            assert_eq!(h_norm(&vec![0.0; n + 1], h, s).unwrap(), 0.0);
        }
        let f = sin_profile(n);
        // ||sin(pi x)||_{L^2([0,1])} = sqrt(1/2)
        let h0 = h_norm(&f, h, 0).unwrap();
        assert!((h0 - 0.5f64.sqrt()).abs() < 1e-4);
        // ||sin(pi x)||_{H^1}^2 = 1/2 + pi^2/2
        let h1 = h_norm(&f, h, 1).unwrap();
        assert!((h1 - (0.5 + PI * PI / 2.0).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn h_norm_resolution_guard() {
        assert!(h_norm(&vec![0.0; 9], 0.1, 3).is_err());
        assert!(h_norm(&vec![0.0; 13], 0.1, 3).is_ok());
    }

    #[test]
    fn c2s_norm_analytic_value() {
        // u(t,x) = t sin(pi x): u_t = sin(pi x), u_tt = 0, so
        // c2s^2 = sup_t [t^2 A_s + A_{s-1}] with A_s = ||sin||^2_{H^s}.
        let n = 512;
        let nt = 32;
        let h = 1.0 / n as f64;
        let dt = 1.0 / nt as f64;
        let base = sin_profile(n);
        let values: Vec<Vec<f64>> =
            (0..=nt).map(|i| base.iter().map(|v| v * (i as f64 * dt)).collect()).collect();
        let slab = TimeSlab::new(h, dt, values).unwrap();
        let s = 2;
        let a = |sig: i32| -> f64 { (0..=sig).map(|i| PI.powi(2 * i) / 2.0).sum() };
        let expect = (1.0 * a(s) + a(s - 1)).sqrt();
        let got = c2s_norm(&slab, s as usize).unwrap();
        assert!((got - expect).abs() < 1e-3 * expect, "got {got}, expected {expect}");

        let zeros = TimeSlab::new(h, dt, vec![vec![0.0; n + 1]; nt + 1]).unwrap();
        assert_eq!(c2s_norm(&zeros, 2).unwrap(), 0.0);
    }

    #[test]
    fn dct_round_trips() {
        let n = 64;
        let f: Vec<f64> = (0..=n).map(|i| ((i * i) as f64 * 0.013).sin()).collect();
        let back = dct1_inverse(&dct1_forward(&f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_keeps_identity_when_all_modes_pass() {
        // All n modes survive once theta >= pi n / L.
        let n = 128;
        let f: Vec<f64> = (0..=n).map(|i| (0.37 * i as f64).sin()).collect();
        let theta = PI * n as f64 + 1.0;
        let out = smooth(&f, 1.0, theta).unwrap();
        for (a, b) in f.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_removes_high_mode() {
        // f = cos(pi x) + cos(20 pi x); theta between the frequencies
        // pi and 20 pi keeps only the low mode.
        let n = 256;
        let f: Vec<f64> = (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                (PI * x).cos() + (20.0 * PI * x).cos()
            })
            .collect();
        let out = smooth(&f, 1.0, 10.0).unwrap();
        for (i, v) in out.iter().enumerate() {
            let x = i as f64 / n as f64;
            assert!((v - (PI * x).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn nested_cutoffs_compose_to_the_smaller() {
        let n = 128;
        let f: Vec<f64> = (0..=n).map(|i| (0.21 * i as f64).cos() + (1.7 * i as f64).sin()).collect();
        let a = SmoothingOperator::new(8.0, 1.0).unwrap();
        let b = SmoothingOperator::new(25.0, 1.0).unwrap();
        let ab = a.apply(&b.apply(&f));
        let ba = b.apply(&a.apply(&f));
        let min = a.apply(&f);
        for i in 0..=n {
            assert!((ab[i] - min[i]).abs() < 1e-11);
            assert!((ba[i] - min[i]).abs() < 1e-11);
        }
    }

    proptest! {
        #[test]
        fn norm_monotone_in_s(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 64;
            let f: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1.0 / n as f64;
            let mut last = 0.0;
            for s in 0..4 {
                let v = h_norm(&f, h, s).unwrap();
                prop_assert!(v >= last);
                last = v;
            }
        }

        #[test]
        fn smoothing_is_a_projection(seed in 0u64..1000, theta in 2.0f64..50.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 96;
            let f: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let once = smooth(&f, 1.0, theta).unwrap();
            let twice = smooth(&once, 1.0, theta).unwrap();
            let scale: f64 = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + scale));
            }
        }

        #[test]
        fn c2s_scales_linearly(lambda in 0.1f64..10.0) {
            let n = 64;
            let nt = 8;
            let values: Vec<Vec<f64>> = (0..=nt)
                .map(|i| (0..=n).map(|j| ((i + 2 * j) as f64 * 0.05).sin()).collect())
                .collect();
            let slab = TimeSlab::new(1.0 / n as f64, 0.1, values.clone()).unwrap();
            let scaled = TimeSlab::new(
                1.0 / n as f64,
                0.1,
                values.iter().map(|v| v.iter().map(|x| lambda * x).collect()).collect(),
            )
            .unwrap();
            let a = c2s_norm(&slab, 2).unwrap();
            let b = c2s_norm(&scaled, 2).unwrap();
            prop_assert!((b - lambda * a).abs() <= 1e-12 * (1.0 + b));
        }
    }
}
