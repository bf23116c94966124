//! Direct banded factorization and a preconditioned Krylov fallback.
//!
//! Row-major band storage; LU without pivoting. The assembled operators are
//! diagonally dominant enough at the frequencies and grids we target that
//! pivot growth is not an issue; a vanishing pivot is reported as a
//! singular-system error.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar kinds the solvers operate on.
pub trait Scalar:
    Copy
    + Default
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::Neg<Output = Self>
{
    fn modulus(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn conjugate(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.abs()
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn conjugate(self) -> Self {
        self
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.norm()
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    #[inline]
    fn conjugate(self) -> Self {
        self.conj()
    }
}

/// Square band matrix with half-bandwidth `bw`: entries with |i - j| > bw
/// are structurally zero. Row i is stored contiguously.
pub struct BandedMatrix<T> {
    n: usize,
    bw: usize,
    w: usize,
    data: Vec<T>,
    factored: bool,
}

impl<T: Scalar> BandedMatrix<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let w = 2 * bw + 1;
        BandedMatrix {
            n,
            bw,
            w,
            data: vec![T::default(); n * w],
            factored: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Approximate heap footprint in bytes.
    pub fn storage_bytes(n: usize, bw: usize) -> usize {
        n * (2 * bw + 1) * std::mem::size_of::<T>()
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.bw >= i && j <= i + self.bw);
        i * self.w + (j + self.bw - i)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[self.offset(i, j)]
    }

    /// In-place LU factorization without pivoting. L has unit diagonal and
    /// is stored below the diagonal; U on and above.
    pub fn factor(&mut self) -> Result<()> {
        assert!(!self.factored);
        let (n, bw, w) = (self.n, self.bw, self.w);
        let mut scale: f64 = 0.0;
        for k in 0..n {
            scale = scale.max(self.data[k * w + bw].modulus());
        }
        let tiny = 1e-300_f64.max(scale * 1e-16 * 1e-4);
        for k in 0..n {
            let pivot = self.data[k * w + bw];
            if pivot.modulus() <= tiny {
                return Err(Error::EigenvalueCollision);
            }
            let m = (k + bw).min(n - 1) - k; // active columns strictly right of k
            let krow = k * w + bw; // diagonal of row k
            for i in k + 1..=(k + bw).min(n - 1) {
                let li = i * w + (k + bw - i);
                let l = self.data[li] / pivot;
                self.data[li] = l;
                if l == T::default() {
                    continue;
                }
                // row_i[k+1 ..= k+m] -= l * row_k[k+1 ..= k+m]
                let (dst0, src0) = (li + 1, krow + 1);
                // split_at_mut dance: src rows precede dst rows
                let (head, tail) = self.data.split_at_mut(i * w);
                let src = &head[src0..src0 + m];
                let dst = &mut tail[dst0 - i * w..dst0 - i * w + m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= l * *s;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve A x = b using a prior [`factor`](Self::factor); b is overwritten
    /// with the solution.
    pub fn solve_in_place(&self, b: &mut [T]) {
        assert!(self.factored, "factor() must be called first");
        assert_eq!(b.len(), self.n);
        let (n, bw, w) = (self.n, self.bw, self.w);
        // forward: L y = b
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut acc = b[i];
            let row = i * w;
            for j in j0..i {
                acc -= self.data[row + (j + bw - i)] * b[j];
            }
            b[i] = acc;
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let j1 = (i + bw).min(n - 1);
            let mut acc = b[i];
            let row = i * w;
            for j in i + 1..=j1 {
                acc -= self.data[row + (j + bw - i)] * b[j];
            }
            b[i] = acc / self.data[row + bw];
        }
    }
}

/// Matrix-free operator interface for the Krylov path.
pub trait LinOp<T: Scalar> {
    fn apply(&self, x: &[T], y: &mut [T]);
    fn diagonal(&self) -> Vec<T>;
    fn n(&self) -> usize;
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::default();
    for (x, y) in a.iter().zip(b) {
        acc += x.conjugate() * *y;
    }
    acc
}

fn norm2<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|v| v.modulus() * v.modulus()).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned BiCGStab. Returns the iteration count.
pub fn bicgstab<T: Scalar>(
    op: &dyn LinOp<T>,
    b: &[T],
    x: &mut [T],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = op.n();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let diag = op.diagonal();
    let inv_diag: Vec<T> = diag
        .iter()
        .map(|&d| {
            if d.modulus() > 0.0 {
                T::from_f64(1.0) / d
            } else {
                T::from_f64(1.0)
            }
        })
        .collect();
    let bnorm = norm2(b).max(1e-300);
    let mut r = vec![T::default(); n];
    op.apply(x, &mut r);
    for k in 0..n {
        r[k] = b[k] - r[k];
    }
    let r0 = r.clone();
    let mut rho = T::from_f64(1.0);
    let mut alpha = T::from_f64(1.0);
    let mut omega = T::from_f64(1.0);
    let mut v = vec![T::default(); n];
    let mut p = vec![T::default(); n];
    let mut s = vec![T::default(); n];
    let mut t = vec![T::default(); n];
    let mut phat = vec![T::default(); n];
    let mut shat = vec![T::default(); n];
    let mut res = norm2(&r) / bnorm;
    if res <= rel_tol {
        return Ok(0);
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.modulus() < 1e-290 {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
                tol: rel_tol,
            });
        }
        if it == 1 {
            p.copy_from_slice(&r);
        } else {
            let beta = (rho_new / rho) * (alpha / omega);
            for k in 0..n {
                p[k] = r[k] + beta * (p[k] - omega * v[k]);
            }
        }
        rho = rho_new;
        for k in 0..n {
            phat[k] = inv_diag[k] * p[k];
        }
        op.apply(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if norm2(&s) / bnorm <= rel_tol {
            for k in 0..n {
                x[k] += alpha * phat[k];
            }
            return Ok(it);
        }
        for k in 0..n {
            shat[k] = inv_diag[k] * s[k];
        }
        op.apply(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt.modulus() < 1e-290 {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
                tol: rel_tol,
            });
        }
        omega = dot(&t, &s) / tt;
        for k in 0..n {
            x[k] += alpha * phat[k] + omega * shat[k];
            r[k] = s[k] - omega * t[k];
        }
        res = norm2(&r) / bnorm;
        if res <= rel_tol {
            return Ok(it);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
        tol: rel_tol,
    })
}
