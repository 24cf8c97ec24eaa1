//! Small shared linear-algebra helpers, generic over an exact rational or a
//! floating-point scalar.

use num::{BigRational, ToPrimitive, Zero};

/// Scalar abstraction for the two numeric backends: exact [`BigRational`]
/// (oracle-grade) and `f64` (large grids, continuum evaluations).
pub trait Scalar:
    Clone
    + PartialEq
    + num::Zero
    + num::One
    + std::ops::Sub<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    fn from_i64(v: i64) -> Self;
    fn from_rational(r: &BigRational) -> Self;
    /// Score used for pivot selection: any positive value works for exact
    /// scalars, magnitude for floats.
    fn pivot_score(&self) -> f64;
}

impl Scalar for f64 {
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn from_rational(r: &BigRational) -> Self {
        r.to_f64().expect("rational out of f64 range")
    }
    fn pivot_score(&self) -> f64 {
        self.abs()
    }
}

impl Scalar for BigRational {
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(v.into())
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn pivot_score(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            1.0
        }
    }
}

/// Determinant by Gaussian elimination with partial pivoting (exact for
/// rational scalars since division is exact there).
pub fn determinant<T: Scalar>(mut m: Vec<Vec<T>>) -> T {
    let n = m.len();
    debug_assert!(m.iter().all(|row| row.len() == n));
    if n == 0 {
        return T::one();
    }
    let mut det = T::one();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a, &b| {
                m[a][col]
                    .pivot_score()
                    .partial_cmp(&m[b][col].pivot_score())
                    .unwrap()
            })
            .unwrap();
        if m[pivot_row][col].is_zero() {
            return T::zero();
        }
        if pivot_row != col {
            m.swap(pivot_row, col);
            det = -det;
        }
        let pivot = m[col][col].clone();
        det = det * pivot.clone();
        for row in col + 1..n {
            if m[row][col].is_zero() {
                continue;
            }
            let factor = m[row][col].clone() / pivot.clone();
            for k in col..n {
                let sub = factor.clone() * m[col][k].clone();
                m[row][k] = m[row][k].clone() - sub;
            }
        }
    }
    det
}

/// Dense exact solve of `A x = b` by Gauss–Jordan elimination; returns `None`
/// if the matrix is singular. Intended for small systems (≤ ~40 unknowns).
pub fn solve_dense<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = a.len();
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&x, &y| {
                a[x][col]
                    .pivot_score()
                    .partial_cmp(&a[y][col].pivot_score())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row][col].is_zero() {
            return None;
        }
        a.swap(pivot_row, col);
        b.swap(pivot_row, col);
        let pivot = a[col][col].clone();
        for k in col..n {
            a[col][k] = a[col][k].clone() / pivot.clone();
        }
        b[col] = b[col].clone() / pivot;
        for row in 0..n {
            if row == col || a[row][col].is_zero() {
                continue;
            }
            let factor = a[row][col].clone();
            for k in col..n {
                let sub = factor.clone() * a[col][k].clone();
                a[row][k] = a[row][k].clone() - sub;
            }
            let sub = factor * b[col].clone();
            b[row] = b[row].clone() - sub;
        }
    }
    Some(b)
}

/// Sparse symmetric positive-definite system in compressed form: for each row,
/// the (column, value) pairs of the off-diagonal entries plus a diagonal.
pub struct SparseSpd {
    pub diag: Vec<f64>,
    pub off: Vec<Vec<(usize, f64)>>,
}

impl SparseSpd {
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let mut acc = self.diag[i] * x[i];
            for &(j, v) in &self.off[i] {
                acc += v * x[j];
            }
            out[i] = acc;
        }
    }

    /// Conjugate gradient with Jacobi preconditioning; relative residual
    /// tolerance `tol`.
    pub fn solve_cg(&self, b: &[f64], tol: f64) -> Vec<f64> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return x;
        }
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(ri, d)| ri / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        for _ in 0..20 * n + 100 {
            self.mul(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol * bnorm {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        x
    }
}
