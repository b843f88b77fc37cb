//! Cholesky factorization of symmetric positive definite banded matrices.

use crate::error::{LabError, Result};

/// Lower triangle of a symmetric matrix with half-bandwidth `b`, stored by rows.
///
/// Row `i` holds columns `i − b ..= i` at offsets `0 ..= b`; slots left of column 0 are unused.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    pub n: usize,
    pub b: usize,
    pub data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, b: usize) -> Self {
        Self {
            n,
            b,
            data: vec![0.0; n * (b + 1)],
        }
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b);
        i * (self.b + 1) + self.b + j - i
    }

    /// Entry `(i, j)` with `j ≤ i`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i - j > self.b {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.b, "entry ({i}, {j}) outside the band");
        let k = self.slot(i, j);
        self.data[k] += v;
    }
}

/// `A = L Lᵀ` with `L` lower banded.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    l: BandMatrix,
}

impl BandedCholesky {
    pub fn factor(mut a: BandMatrix) -> Result<Self> {
        let (n, b) = (a.n, a.b);
        let w = b + 1;
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(b));
                // Σ_{k ∈ [klo, j)} L_ik L_jk
                let ri = i * w + b + klo - i;
                let rj = j * w + b + klo - j;
                let len = j - klo;
                let s: f64 = a.data[ri..ri + len]
                    .iter()
                    .zip(&a.data[rj..rj + len])
                    .map(|(x, y)| x * y)
                    .sum();
                let idx = i * w + b + j - i;
                let v = a.data[idx] - s;
                if i == j {
                    if v <= 0.0 || !v.is_finite() {
                        return Err(LabError::NotPositiveDefinite(i));
                    }
                    a.data[idx] = v.sqrt();
                } else {
                    a.data[idx] = v / a.data[j * w + b];
                }
            }
        }
        Ok(Self { l: a })
    }

    pub fn dim(&self) -> usize {
        self.l.n
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b) = (self.l.n, self.l.b);
        let w = b + 1;
        let d = &self.l.data;
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let row = &d[i * w + b + lo - i..i * w + b];
            let s: f64 = row.iter().zip(&x[lo..i]).map(|(l, y)| l * y).sum();
            x[i] = (x[i] - s) / d[i * w + b];
        }
        for i in (0..n).rev() {
            x[i] /= d[i * w + b];
            let xi = x[i];
            let lo = i.saturating_sub(b);
            for (k, l) in (lo..i).zip(&d[i * w + b + lo - i..i * w + b]) {
                x[k] -= l * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn tridiagonal(n: usize) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn solves_the_discrete_laplacian() {
        let n = 50;
        let ch = BandedCholesky::factor(tridiagonal(n)).unwrap();
        let mut x = vec![1.0; n];
        ch.solve_in_place(&mut x);
        // exact solution of −x'' = 1 on the grid: x_i = (i+1)(n−i)/2
        for (i, v) in x.iter().enumerate() {
            let e = ((i + 1) * (n - i)) as f64 / 2.0;
            assert!((v - e).abs() < 1e-10 * e);
        }
    }

    #[test]
    fn rejects_indefinite_matrices() {
        let mut a = tridiagonal(4);
        a.add(2, 2, -5.0);
        assert!(matches!(
            BandedCholesky::factor(a),
            Err(LabError::NotPositiveDefinite(2))
        ));
    }

    proptest! {
        #[test]
        fn matches_dense_solve(n in 3usize..30, b in 1usize..5, seed in 0u64..1000) {
            let b = b.min(n - 1);
            let mut a = BandMatrix::zeros(n, b);
            let mut dense = DMatrix::<f64>::zeros(n, n);
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            };
            for i in 0..n {
                for j in i.saturating_sub(b)..i {
                    let v = next();
                    a.add(i, j, v);
                    dense[(i, j)] = v;
                    dense[(j, i)] = v;
                }
                let d = 2.0 * b as f64 + 1.0;
                a.add(i, i, d);
                dense[(i, i)] = d;
            }
            let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let mut x = rhs.clone();
            BandedCholesky::factor(a).unwrap().solve_in_place(&mut x);
            let r = &dense * DVector::from_vec(x) - DVector::from_vec(rhs);
            prop_assert!(r.norm() < 1e-12);
        }
    }
}
