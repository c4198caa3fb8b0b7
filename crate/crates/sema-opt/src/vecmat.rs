//! Dense vector and matrix helpers sized for desk-scale experiments
//! (dimensions up to a few dozen). Row-major storage, `f64` throughout.
//!
//! The only factorization provided is a cyclic-Jacobi symmetric
//! eigendecomposition, which is all the spectral projections and
//! pseudoinverse computations in this crate need.

use crate::{Error, Result};

/// Dense real vector.
pub type Vector = Vec<f64>;

/// Squared Euclidean norm.
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

/// Infinity norm.
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a − b` as a new vector.
pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + b` as a new vector.
pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `c·v` as a new vector.
pub fn scale(v: &[f64], c: f64) -> Vector {
    v.iter().map(|x| c * x).collect()
}

/// Squared distance `‖a − b‖²`.
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// True when every coordinate is finite.
pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    /// Zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Diagonal matrix from entries.
    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    /// Build from a row-major slice.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(rows * cols, data.len(), "shape/data mismatch");
        Mat { rows, cols, data: data.to_vec() }
    }

    /// Transpose.
    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Vector {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| dot(&self.data[i * self.cols..(i + 1) * self.cols], v))
            .collect()
    }

    /// Transposed matrix-vector product `Aᵀv`.
    pub fn tr_matvec(&self, v: &[f64]) -> Vector {
        assert_eq!(self.rows, v.len(), "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &r) in out.iter_mut().zip(row) {
                *o += v[i] * r;
            }
        }
        out
    }

    /// Matrix product.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Elementwise sum.
    pub fn mat_add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// Elementwise scale.
    pub fn mat_scale(&self, c: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| c * a).collect() }
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// Maximum absolute asymmetry `max |A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    /// Spectral norm (largest singular value), via the symmetric
    /// eigendecomposition of `AᵀA`.
    pub fn spectral_norm(&self) -> f64 {
        let gram = self.transpose().matmul(self);
        let (vals, _) = sym_eigen(&gram).expect("gram matrix is symmetric");
        vals.iter().fold(0.0f64, |m, &v| m.max(v.max(0.0))).sqrt()
    }
}

/// Clip the singular values of a general square matrix to `ceiling`,
/// returning `U·min(Σ, c)·Vᵀ`. Computed without forming `U`: with
/// `AᵀA = V·Σ²·Vᵀ`, the result is `A·V·diag(min(1, c/σ_i))·Vᵀ`.
pub fn spectral_clip(a: &Mat, ceiling: f64) -> Result<Mat> {
    if a.rows != a.cols {
        return Err(Error::config("spectral_clip: matrix must be square"));
    }
    if !(ceiling > 0.0) {
        return Err(Error::config("spectral_clip: ceiling must be positive"));
    }
    if a.spectral_norm() <= ceiling {
        return Ok(a.clone());
    }
    let mut gram = a.transpose().matmul(a);
    // Symmetrize away floating-point asymmetry before the eigen solve.
    for i in 0..gram.rows {
        for j in (i + 1)..gram.cols {
            let s = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            gram[(i, j)] = s;
            gram[(j, i)] = s;
        }
    }
    let (vals, v) = sym_eigen(&gram)?;
    let ratios: Vector = vals
        .iter()
        .map(|&l| {
            let s = l.max(0.0).sqrt();
            if s <= ceiling {
                1.0
            } else {
                ceiling / s
            }
        })
        .collect();
    // A·V·diag(r)·Vᵀ.
    let av = a.matmul(&v);
    let mut scaled = av;
    for i in 0..scaled.rows {
        for j in 0..scaled.cols {
            scaled[(i, j)] *= ratios[j];
        }
    }
    Ok(scaled.matmul(&v.transpose()))
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Off-diagonal convergence tolerance for the Jacobi sweep.
const JACOBI_TOL: f64 = 1e-10;
/// Dimension cap for the cyclic Jacobi routine.
const JACOBI_MAX_DIM: usize = 64;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, V)` with `M = V · diag(vals) · Vᵀ`; columns of `V`
/// are the eigenvectors. Intended for small matrices (`n ≤ 64`); errors on
/// larger inputs or on inputs whose asymmetry exceeds `1e-8`.
pub fn sym_eigen(m: &Mat) -> Result<(Vector, Mat)> {
    if m.rows != m.cols {
        return Err(Error::config("sym_eigen: matrix not square"));
    }
    if m.rows > JACOBI_MAX_DIM {
        return Err(Error::config(format!(
            "sym_eigen: dimension {} exceeds the cap {JACOBI_MAX_DIM}",
            m.rows
        )));
    }
    if m.asymmetry() > 1e-8 {
        return Err(Error::config(format!(
            "sym_eigen: input asymmetric beyond 1e-8 (deviation {:.3e})",
            m.asymmetry()
        )));
    }
    let n = m.rows;
    let mut a = m.clone();
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Mat::identity(n);
    for _sweep in 0..100 {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[(i, j)].abs());
            }
        }
        if off <= JACOBI_TOL {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= JACOBI_TOL * 1e-3 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals: Vector = (0..n).map(|i| a[(i, i)]).collect();
    Ok((vals, v))
}

/// Apply `f` to each eigenvalue of a symmetric matrix and reassemble.
pub fn sym_map_eigen(m: &Mat, f: impl Fn(f64) -> f64) -> Result<Mat> {
    let (vals, v) = sym_eigen(m)?;
    let mapped: Vector = vals.iter().map(|&x| f(x)).collect();
    Ok(v.matmul(&Mat::from_diag(&mapped)).matmul(&v.transpose()))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn sym_inverse(m: &Mat) -> Result<Mat> {
    let (vals, _) = sym_eigen(m)?;
    if vals.iter().any(|&x| x <= 0.0) {
        return Err(Error::config("sym_inverse: matrix not positive definite"));
    }
    sym_map_eigen(m, |x| 1.0 / x)
}

/// Moore–Penrose pseudoinverse of a symmetric matrix; eigenvalues with
/// magnitude at most `tol` are treated as zero.
pub fn sym_pseudoinverse(m: &Mat, tol: f64) -> Result<Mat> {
    sym_map_eigen(m, |x| if x.abs() <= tol { 0.0 } else { 1.0 / x })
}

/// Pseudoinverse of a general matrix, via `A⁺ = (AᵀA)⁺ Aᵀ`.
pub fn pseudoinverse(a: &Mat, tol: f64) -> Result<Mat> {
    let gram = a.transpose().matmul(a);
    Ok(sym_pseudoinverse(&gram, tol)?.matmul(&a.transpose()))
}
