//! Dense complex linear algebra used across the crate.
//!
//! Two regimes: tiny n-by-n systems (phase-space dimension, n <= 10) solved by
//! partial-pivot LU, and the large graded-block matrices of the validation
//! step. The latter are block lower triangular in the graded ordering, which
//! the inversion and multiplication routines exploit.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C = Complex64;

/// Dense row-major complex matrix.
#[derive(Clone, Debug)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::new(1.0, 0.0);
        }
        m
    }

    pub fn row(&self, r: usize) -> &[C] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [C] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> CMat {
        let mut t = CMat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// Entrywise moduli.
    pub fn abs(&self) -> RMat {
        RMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }

    /// Entrywise moduli rounded upward.
    pub fn abs_up(&self) -> RMat {
        RMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| crate::interval::abs_up(*z)).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C;
    fn index(&self, (r, c): (usize, usize)) -> &C {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C {
        &mut self.data[r * self.cols + c]
    }
}

/// Dense row-major real matrix.
#[derive(Clone, Debug)]
pub struct RMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> RMat {
        let mut t = RMat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * t.cols + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
}

/// LU factorization with partial pivoting of a small square matrix.
pub struct Lu {
    n: usize,
    lu: Vec<C>,
    piv: Vec<usize>,
    swaps: usize,
}

impl Lu {
    pub fn factor(a: &CMat) -> Result<Lu> {
        debug_assert_eq!(a.rows, a.cols);
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let mut swaps = 0usize;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].norm_sqr();
            for r in (k + 1)..n {
                let v = lu[r * n + k].norm_sqr();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularBlock);
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                piv.swap(k, p);
                swaps += 1;
            }
            let pivot = lu[k * n + k];
            for r in (k + 1)..n {
                let f = lu[r * n + k] / pivot;
                lu[r * n + k] = f;
                for c in (k + 1)..n {
                    let v = lu[k * n + c];
                    lu[r * n + c] -= f * v;
                }
            }
        }
        Ok(Lu { n, lu, piv, swaps })
    }

    pub fn det(&self) -> C {
        let mut d = if self.swaps.is_multiple_of(2) { C::new(1.0, 0.0) } else { C::new(-1.0, 0.0) };
        for k in 0..self.n {
            d *= self.lu[k * self.n + k];
        }
        d
    }

    /// Smallest pivot modulus; a cheap singularity indicator.
    pub fn min_pivot(&self) -> f64 {
        (0..self.n).map(|k| self.lu[k * self.n + k].norm()).fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, b: &[C]) -> Vec<C> {
        let n = self.n;
        let mut x: Vec<C> = self.piv.iter().map(|&p| b[p]).collect();
        for k in 0..n {
            for r in (k + 1)..n {
                let f = self.lu[r * n + k];
                let v = x[k];
                x[r] -= f * v;
            }
        }
        for k in (0..n).rev() {
            for r in (k + 1)..n {
                let f = self.lu[k * n + r];
                let v = x[r];
                x[k] -= f * v;
            }
            x[k] /= self.lu[k * n + k];
        }
        x
    }

    pub fn inverse(&self) -> CMat {
        let n = self.n;
        let mut inv = CMat::zeros(n, n);
        let mut e = vec![C::new(0.0, 0.0); n];
        for c in 0..n {
            e.iter_mut().for_each(|z| *z = C::new(0.0, 0.0));
            e[c] = C::new(1.0, 0.0);
            let col = self.solve(&e);
            for r in 0..n {
                inv[(r, c)] = col[r];
            }
        }
        inv
    }
}

/// Solve a real n-by-n system via the complex LU (n is tiny here).
pub fn solve_real(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut m = CMat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] = C::new(a[r][c], 0.0);
        }
    }
    let lu = Lu::factor(&m)?;
    let bc: Vec<C> = b.iter().map(|&x| C::new(x, 0.0)).collect();
    Ok(lu.solve(&bc).into_iter().map(|z| z.re).collect())
}

/// Inverse of a block lower triangular matrix with `nb` diagonal blocks of
/// size `bs`. Columns are independent and computed in parallel.
pub fn invert_block_lower_triangular(a: &CMat, bs: usize) -> Result<CMat> {
    let n = a.rows;
    debug_assert_eq!(n % bs, 0);
    let nb = n / bs;
    // Invert the diagonal blocks once.
    let mut diag_inv = Vec::with_capacity(nb);
    for d in 0..nb {
        let mut blk = CMat::zeros(bs, bs);
        for i in 0..bs {
            for j in 0..bs {
                blk[(i, j)] = a[(d * bs + i, d * bs + j)];
            }
        }
        let lu = Lu::factor(&blk).map_err(|_| Error::SingularBlock)?;
        diag_inv.push(lu.inverse());
    }

    let col_blocks: Vec<Vec<C>> = (0..nb)
        .into_par_iter()
        .map(|cb| {
            // Forward substitution for the block column `cb`; x has nb*bs rows,
            // bs columns, stored row-major.
            let mut x = vec![C::new(0.0, 0.0); n * bs];
            let mut rhs = vec![C::new(0.0, 0.0); bs * bs];
            for j in 0..bs {
                x[(cb * bs + j) * bs + j] = C::new(1.0, 0.0);
            }
            for rb in cb..nb {
                // rhs_block = I delta - sum_{cb <= k < rb} A[rb,k] X[k]
                rhs.copy_from_slice(&x[(rb * bs) * bs..(rb * bs) * bs + bs * bs]);
                for kb in cb..rb {
                    for i in 0..bs {
                        let arow = &a.row(rb * bs + i)[kb * bs..kb * bs + bs];
                        for j in 0..bs {
                            let mut acc = C::new(0.0, 0.0);
                            for (t, &aval) in arow.iter().enumerate() {
                                acc += aval * x[(kb * bs + t) * bs + j];
                            }
                            rhs[i * bs + j] -= acc;
                        }
                    }
                }
                // X[rb] = diag_inv[rb] * rhs
                for i in 0..bs {
                    for j in 0..bs {
                        let mut acc = C::new(0.0, 0.0);
                        for t in 0..bs {
                            acc += diag_inv[rb][(i, t)] * rhs[t * bs + j];
                        }
                        x[(rb * bs + i) * bs + j] = acc;
                    }
                }
            }
            x
        })
        .collect();

    let mut inv = CMat::zeros(n, n);
    for (cb, x) in col_blocks.iter().enumerate() {
        for r in cb * bs..n {
            for j in 0..bs {
                inv[(r, cb * bs + j)] = x[r * bs + j];
            }
        }
    }
    Ok(inv)
}

/// `a * b` for block lower triangular operands (`bs` = block size). Only the
/// lower block triangle is accumulated; the product is again block lower
/// triangular.
pub fn matmul_block_lower(a: &CMat, b: &CMat, bs: usize) -> CMat {
    let n = a.rows;
    let bt = b.transpose();
    let mut out = CMat::zeros(n, n);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(r, orow)| {
            let rb = r / bs;
            let arow = a.row(r);
            for c in 0..(rb + 1) * bs {
                let cb = c / bs;
                // entries of a in row r live in columns [cb*bs, (rb+1)*bs)
                let lo = cb * bs;
                let hi = (rb + 1) * bs;
                let mut acc = C::new(0.0, 0.0);
                let brow = &bt.row(c)[lo..hi];
                for (x, y) in arow[lo..hi].iter().zip(brow) {
                    acc += x * y;
                }
                orow[c] = acc;
            }
        });
    out
}

/// `|a| * w` for block lower triangular operands, accumulating real entries.
pub fn matmul_abs_lower(a_abs: &RMat, w: &RMat, bs: usize) -> RMat {
    let n = a_abs.rows;
    let wt = w.transpose();
    let mut out = RMat::zeros(n, n);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(r, orow)| {
            let rb = r / bs;
            let arow = a_abs.row(r);
            for c in 0..(rb + 1) * bs {
                let cb = c / bs;
                let lo = cb * bs;
                let hi = (rb + 1) * bs;
                let mut acc = 0.0;
                for (x, y) in arow[lo..hi].iter().zip(&wt.row(c)[lo..hi]) {
                    acc += x * y;
                }
                orow[c] = acc;
            }
        });
    out
}

/// Matrix-vector product.
pub fn matvec(a: &CMat, x: &[C]) -> Vec<C> {
    a.data
        .par_chunks(a.cols)
        .map(|row| {
            let mut acc = C::new(0.0, 0.0);
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn lu_solves_small_complex_system() {
        let mut a = CMat::zeros(3, 3);
        a[(0, 0)] = c(2.0, 1.0);
        a[(0, 1)] = c(0.5, 0.0);
        a[(0, 2)] = c(0.0, -1.0);
        a[(1, 0)] = c(1.0, 0.0);
        a[(1, 1)] = c(-3.0, 0.5);
        a[(1, 2)] = c(2.0, 2.0);
        a[(2, 0)] = c(0.0, 0.25);
        a[(2, 1)] = c(1.0, -1.0);
        a[(2, 2)] = c(4.0, 0.0);
        let xs = [c(1.0, -2.0), c(0.5, 0.5), c(-3.0, 1.0)];
        let b: Vec<C> = (0..3)
            .map(|r| (0..3).map(|k| a[(r, k)] * xs[k]).sum())
            .collect();
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve(&b);
        for (got, want) in x.iter().zip(xs.iter()) {
            assert!((got - want).norm() < 1e-12);
        }
        let inv = lu.inverse();
        // A * A^{-1} = I
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = c(0.0, 0.0);
                for k in 0..3 {
                    acc += a[(i, k)] * inv[(k, j)];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc - c(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = CMat::zeros(2, 2);
        assert!(Lu::factor(&a).is_err());
    }

    #[test]
    fn block_triangular_inverse_and_product() {
        // Random block lower triangular with 2x2 blocks, 4 block rows.
        let bs = 2;
        let nb = 4;
        let n = bs * nb;
        let mut a = CMat::zeros(n, n);
        let mut state = 5u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for rb in 0..nb {
            for cb in 0..=rb {
                for i in 0..bs {
                    for j in 0..bs {
                        a[(rb * bs + i, cb * bs + j)] = c(rnd(), rnd());
                    }
                }
            }
            // Make diagonal blocks well conditioned.
            for i in 0..bs {
                a[(rb * bs + i, rb * bs + i)] += c(4.0, 1.0);
            }
        }
        let inv = invert_block_lower_triangular(&a, bs).unwrap();
        let prod = matmul_block_lower(&inv, &a, bs);
        for r in 0..n {
            for cc in 0..n {
                let want = if r == cc { 1.0 } else { 0.0 };
                assert!(
                    (prod[(r, cc)] - c(want, 0.0)).norm() < 1e-12,
                    "residual at ({r},{cc})"
                );
            }
        }
    }
}
