//! Banded LU factorization with partial pivoting.
//!
//! The space-time systems assembled in [`crate::mixed`] couple each
//! grid node to at most two time levels back and one forward, so with
//! level-major ordering the matrix is banded. Storage follows the
//! classic band scheme: entry `(i, j)` with `j - kl <= i <= j + ku`
//! lives at `ab[ku + kl + i - j][j]` of a `(2*kl + ku + 1) x n` array,
//! leaving `kl` extra super-diagonal rows for pivoting fill-in.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    pub n: usize,
    /// Sub-diagonal half-bandwidth.
    pub kl: usize,
    /// Super-diagonal half-bandwidth.
    pub ku: usize,
    /// Row-major band storage, `(2*kl + ku + 1)` rows of length `n`.
    ab: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, ab: vec![0.0; width * n] }
    }

    // Storage covers j in [i - kl, i + ku + kl]; the extra kl
    // super-diagonals hold pivoting fill-in.
    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        (self.ku + self.kl + i - j) * self.n + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.ab[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band kl={}, ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band kl={}, ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.kl);
            let j1 = (i + self.ku).min(self.n - 1);
            let mut s = 0.0;
            for j in j0..=j1 {
                s += self.ab[(self.ku + self.kl + i - j) * self.n + j] * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// Factor in place (partial pivoting). Returns the factorization.
    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut pivots = vec![0usize; n];
        for col in 0..n {
            // Pivot search within the sub-diagonal band.
            let last = (col + kl).min(n - 1);
            let mut p = col;
            let mut pmax = self.get(col, col).abs();
            for r in col + 1..=last {
                let v = self.get(r, col).abs();
                if v > pmax {
                    pmax = v;
                    p = r;
                }
            }
            if pmax < f64::MIN_POSITIVE.max(1e-300) || !pmax.is_finite() {
                return Err(Error::SingularSystem { row: col, pivot: self.get(p, col) });
            }
            pivots[col] = p;
            if p != col {
                // Swap rows col and p across their shared band width.
                let jend = (col + kl + ku).min(n - 1);
                for j in col..=jend {
                    let a = self.get(col, j);
                    let b = self.get(p, j);
                    let sc = self.slot(col, j);
                    self.ab[sc] = b;
                    let sp = self.slot(p, j);
                    self.ab[sp] = a;
                }
            }
            let diag = self.get(col, col);
            for r in col + 1..=last {
                let m = self.get(r, col) / diag;
                if m != 0.0 {
                    let sr = self.slot(r, col);
                    self.ab[sr] = m; // store multiplier
                    let jend = (col + kl + ku).min(n - 1);
                    for j in col + 1..=jend {
                        let v = self.get(col, j);
                        if v != 0.0 {
                            let s = self.slot(r, j);
                            self.ab[s] -= m * v;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { mat: self, pivots })
    }
}

/// LU factors of a banded matrix plus the pivot sequence.
#[derive(Debug, Clone)]
pub struct BandedLu {
    mat: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.mat.n;
        let kl = self.mat.kl;
        let ku = self.mat.ku;
        let mut x = b.to_vec();
        // Forward: apply pivots and multipliers.
        for col in 0..n {
            let p = self.pivots[col];
            if p != col {
                x.swap(col, p);
            }
            let last = (col + kl).min(n - 1);
            for r in col + 1..=last {
                let m = self.mat.get(r, col);
                if m != 0.0 {
                    x[r] -= m * x[col];
                }
            }
        }
        // Back substitution.
        for col in (0..n).rev() {
            let jend = (col + kl + ku).min(n - 1);
            let mut s = x[col];
            for j in col + 1..=jend {
                s -= self.mat.get(col, j) * x[j];
            }
            x[col] = s / self.mat.get(col, col);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination oracle.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
            m.swap(c, p);
            x.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for j in c..n {
                    m[r][j] -= f * m[c][j];
                }
                x[r] -= f * x[c];
            }
        }
        for c in (0..n).rev() {
            let mut s = x[c];
            for j in c + 1..n {
                s -= m[c][j] * x[j];
            }
            x[c] = s / m[c][c];
        }
        x
    }

    #[test]
    fn matches_dense_oracle_on_random_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..20 {
            let n = 40 + trial;
            let kl = 5;
            let ku = 3;
            let mut band = BandedMatrix::zeros(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    // Make diagonally dominant-ish so the oracle is stable too.
                    let v = if i == j { v + 4.0 } else { v };
                    band.set(i, j, v);
                    dense[i][j] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lu = band.clone().factor().unwrap();
            let x = lu.solve(&b);
            let want = dense_solve(&dense, &b);
            for (a, w) in x.iter().zip(&want) {
                assert!((a - w).abs() < 1e-10, "banded vs dense mismatch");
            }
            // Residual check through matvec.
            let ax = band.matvec(&x);
            for (av, bv) in ax.iter().zip(&b) {
                assert!((av - bv).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]] requires a row swap.
        let mut m = BandedMatrix::zeros(2, 1, 1);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        let lu = m.factor().unwrap();
        let x = lu.solve(&[2.0, 3.0]);
        assert!((x[0] - 3.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn reports_singular_row() {
        let mut m = BandedMatrix::zeros(3, 1, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 0.0);
        m.set(2, 2, 1.0);
        match m.factor() {
            Err(Error::SingularSystem { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected singular-system error, got {other:?}"),
        }
    }
}
