//! Dense and banded linear algebra for the small systems arising in 1D.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Float;

/// Tridiagonal matrix stored by diagonals. `lower[i]` couples row `i + 1` to
/// column `i`, `upper[i]` couples row `i` to column `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// Thomas algorithm. Intended for diagonally dominant or SPD matrices.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(Error::MeshMismatch);
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        let scale = self.diag.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if piv.abs() <= 1e-300 + 1e-15 * scale {
            return Err(Error::Singular("zero pivot in tridiagonal solve".into()));
        }
        if n > 1 {
            c[0] = self.upper[0] / piv;
        }
        d[0] = rhs[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.lower[i - 1] * c[i - 1];
            if piv.abs() <= 1e-300 + 1e-15 * scale {
                return Err(Error::Singular("zero pivot in tridiagonal solve".into()));
            }
            if i + 1 < n {
                c[i] = self.upper[i] / piv;
            }
            d[i] = (rhs[i] - self.lower[i - 1] * d[i - 1]) / piv;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Banded matrix with LU factorisation and partial pivoting.
///
/// Row `i` keeps columns `i - kl ..= i + kl + ku`; the extra `kl` upper
/// diagonals hold fill-in created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
            factored: false,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return 0.0;
        }
        self.data[self.idx(i, j)]
    }

    /// Adds `v` to entry `(i, j)`, which must lie within the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band"
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set_row_zero(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored);
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                *yi += self.get(i, j) * xj;
            }
        }
        y
    }

    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        self.pivots = vec![0; n];
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 + 1e-16 * scale {
                return Err(Error::Singular("zero pivot in banded LU".into()));
            }
            self.pivots[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let akk = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / akk;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=jmax {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "factor() must be called first");
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                b[i] -= self.data[self.idx(i, k)] * b[k];
            }
        }
        for i in (0..n).rev() {
            let jmax = (i + kl + ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=jmax {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

/// Solves the dense `n x n` system `a x = b` in place (row-major `a`).
pub fn solve_dense(a: &mut [f64], n: usize, b: &mut [f64]) -> Result<()> {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        if a[p * n + k].abs() <= 1e-300 + 1e-15 * scale {
            return Err(Error::Singular("dense system".into()));
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let akk = a[k * n + k];
        for i in k + 1..n {
            let l = a[i * n + k] / akk;
            if l == 0.0 {
                continue;
            }
            for j in k..n {
                a[i * n + j] -= l * a[k * n + j];
            }
            b[i] -= l * b[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * b[j];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

/// Inverse of a dense row-major matrix.
pub fn invert_dense(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        let mut m = a.to_vec();
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        solve_dense(&mut m, n, &mut e)?;
        for row in 0..n {
            inv[row * n + col] = e[row];
        }
    }
    Ok(inv)
}

pub fn mat_vec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense() {
        let t = Tridiagonal {
            lower: vec![-1.0, -1.0, -1.0],
            diag: vec![2.0, 2.0, 2.0, 2.0],
            upper: vec![-1.0, -1.0, -1.0],
        };
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = t.mul_vec(&x);
        let y = t.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn banded_lu_needs_pivoting() {
        // zero on the diagonal forces a row swap
        let n = 6;
        let mut m = BandMatrix::zeros(n, 2, 2);
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 2).min(n - 1) {
                let v = if i == j {
                    if i % 2 == 0 {
                        0.0
                    } else {
                        3.0
                    }
                } else {
                    1.0 + (i * 7 + j * 3) as f64 * 0.1
                };
                m.add(i, j, v);
                dense[i * n + j] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let mut b = m.mul_vec(&x);
        let mut bd = b.clone();
        m.factor().unwrap();
        m.solve_in_place(&mut b);
        solve_dense(&mut dense, n, &mut bd).unwrap();
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-12, "{} vs {}", b[i], x[i]);
            assert!((bd[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let inv = invert_dense(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-14);
            }
        }
    }
}
