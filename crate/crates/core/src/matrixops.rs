//! Dense symmetric matrices: the Wigner map, Gram matrices and their
//! symmetrised embedding, a symmetric eigensolver, empirical spectral
//! distributions and empirical Stieltjes transforms.

use num_complex::Complex64;
use thiserror::Error;

use crate::ensemble::DataMatrix;

/// Largest matrix order accepted by the eigensolver.
pub const MAX_ORDER: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("matrix orders differ: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },
    #[error("matrix shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("eigenvalue {index} did not converge within {iterations} iterations")]
    NonConvergence { index: usize, iterations: usize },
    #[error("Stieltjes transform needs Im z > 0, got {0}")]
    Domain(Complex64),
    #[error("matrix order {order} exceeds the limit {cap}")]
    TooLarge { order: usize, cap: usize },
    #[error("matrix order must be at least 1")]
    Empty,
    #[error("matrix has non-finite entries")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, MatrixError>;

/// Real symmetric matrix in full row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds the matrix from `entry(i, j)` for `j <= i`; the upper
    /// triangle mirrors the lower one.
    pub fn from_lower_fn(n: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = entry(i, j);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }

    /// Lower triangle of a full row-major matrix; the upper triangle of
    /// `data` is ignored.
    pub fn from_row_major_lower(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(MatrixError::LengthMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self::from_lower_fn(n, |i, j| data[i * n + j]))
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.n != other.n {
            return Err(MatrixError::OrderMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(SymMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }
}

/// `A(x)` with `(A(x))_{ij} = x_{ij}/√n` for `i >= j`, mirrored above the
/// diagonal. `x` lists the lower triangle row by row:
/// `x_{11}, x_{21}, x_{22}, x_{31}, ...`.
pub fn symmetric_from_lower(x: &[f64], n: usize) -> Result<SymMatrix> {
    let expected = n * (n + 1) / 2;
    if x.len() != expected {
        return Err(MatrixError::LengthMismatch { expected, got: x.len() });
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(SymMatrix::from_lower_fn(n, |i, j| x[i * (i + 1) / 2 + j] * scale))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `B_N = (1/N) 𝒳ᵀ𝒳`, of order p, with N = `x.rows()`.
pub fn gram(x: &DataMatrix) -> SymMatrix {
    let (n_rows, p) = (x.rows(), x.cols());
    let cols = x.transposed();
    let inv = 1.0 / n_rows as f64;
    SymMatrix::from_lower_fn(p, |j, l| {
        dot(&cols[j * n_rows..(j + 1) * n_rows], &cols[l * n_rows..(l + 1) * n_rows]) * inv
    })
}

/// `(1/N) 𝒳𝒳ᵀ`, of order N.
pub fn gram_dual(x: &DataMatrix) -> SymMatrix {
    let inv = 1.0 / x.rows() as f64;
    SymMatrix::from_lower_fn(x.rows(), |i, k| dot(x.row(i), x.row(k)) * inv)
}

/// `𝕏_n = N^{-1/2} [[0_{p,p}, 𝒳ᵀ], [𝒳, 0_{N,N}]]` of order n = N + p.
pub fn symmetrize_gram(x: &DataMatrix) -> SymMatrix {
    let (n_rows, p) = (x.rows(), x.cols());
    let scale = 1.0 / (n_rows as f64).sqrt();
    SymMatrix::from_lower_fn(
        n_rows + p,
        |i, j| {
            if i >= p && j < p {
                x.get(i - p, j) * scale
            } else {
                0.0
            }
        },
    )
}

/// Nondecreasing eigenvalue list with its step-CDF view.
#[derive(Debug, Clone, PartialEq)]
pub struct Esd {
    eigs: Vec<f64>,
}

impl Esd {
    /// Sorts the given eigenvalues.
    pub fn new(mut eigs: Vec<f64>) -> Self {
        eigs.sort_by(f64::total_cmp);
        Self { eigs }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigs
    }

    pub fn len(&self) -> usize {
        self.eigs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigs.is_empty()
    }

    /// `F(x) = #{λ_k ≤ x}/n`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.eigs.is_empty() {
            return 0.0;
        }
        self.eigs.partition_point(|&v| v <= x) as f64 / self.eigs.len() as f64
    }

    /// `S(z) = (1/n) Σ 1/(λ_k − z)`.
    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        if !(z.im > 0.0) {
            return Err(MatrixError::Domain(z));
        }
        let sum: Complex64 = self.eigs.iter().map(|&l| 1.0 / (l - z)).sum();
        Ok(sum / self.eigs.len() as f64)
    }

    /// One eigenvalue per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.eigs.len() * 24);
        for v in &self.eigs {
            s.push_str(&format!("{v:.17e}\n"));
        }
        s
    }

    /// `index,lambda` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,lambda\n");
        for (i, v) in self.eigs.iter().enumerate() {
            s.push_str(&format!("{i},{v:.17e}\n"));
        }
        s
    }
}

/// A point of the upper half-plane together with a transform value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexPoint {
    pub z: Complex64,
    pub value: Complex64,
}

/// `Re z, Im z, Re S, Im S` rows with a header.
pub fn stieltjes_curve_csv(points: &[ComplexPoint]) -> String {
    let mut s = String::from("re_z,im_z,re_s,im_s\n");
    for p in points {
        s.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e}\n",
            p.z.re, p.z.im, p.value.re, p.value.im
        ));
    }
    s
}

pub fn esd_cdf(e: &Esd, x: f64) -> f64 {
    e.cdf(x)
}

pub fn stieltjes_empirical(e: &Esd, z: Complex64) -> Result<Complex64> {
    e.stieltjes(z)
}

/// Eigenvalues and (optionally) orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Ascending.
    pub values: Vec<f64>,
    /// Row `i` is the unit eigenvector of `values[i]`; empty when vectors
    /// were not requested.
    pub vectors: Vec<f64>,
}

/// Householder reduction of `a` (full storage, overwritten) to symmetric
/// tridiagonal form. Returns (diagonal, subdiagonal with e[n-1] = 0). The
/// reflector of step k is left in row k, columns k+1.., with its β in
/// `betas[k]`.
fn tridiagonalize(a: &mut [f64], n: usize, betas: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let (head, tail) = a.split_at_mut((k + 1) * n);
        let v = &mut head[k * n + k + 1..k * n + n];
        let alpha_sq: f64 = v.iter().map(|x| x * x).sum();
        let x0 = v[0];
        let norm = alpha_sq.sqrt();
        if norm == 0.0 || (alpha_sq - x0 * x0) <= f64::MIN_POSITIVE {
            e[k] = x0;
            betas[k] = 0.0;
            continue;
        }
        let alpha = if x0 > 0.0 { -norm } else { norm };
        v[0] = x0 - alpha;
        let vnorm_sq = alpha_sq - x0 * x0 + v[0] * v[0];
        let beta = 2.0 / vnorm_sq;
        e[k] = alpha;
        betas[k] = beta;
        // trailing block rows k+1..n live in `tail`, columns k+1..n
        let off = k + 1;
        let pv = &mut p[..m];
        for i in 0..m {
            let row = &tail[i * n + off..i * n + n];
            pv[i] = beta * dot(row, v);
        }
        let kcoef = 0.5 * beta * dot(pv, v);
        for i in 0..m {
            pv[i] -= kcoef * v[i];
        }
        for i in 0..m {
            let (vi, wi) = (v[i], pv[i]);
            let row = &mut tail[i * n + off..i * n + n];
            for j in 0..m {
                row[j] -= vi * pv[j] + wi * v[j];
            }
        }
    }
    for k in 0..n {
        d[k] = a[k * n + k];
    }
    if n >= 2 {
        e[n - 2] = a[(n - 2) * n + n - 1];
    }
    e[n - 1] = 0.0;
    (d, e)
}

/// Implicit-shift QL on the tridiagonal (d, e). When `zt` is given, its rows
/// are rotated along (eigenvectors as rows).
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], mut zt: Option<&mut [f64]>) -> Result<()> {
    let n = d.len();
    let max_iter = 30 * n.max(1);
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let mut total = 0usize;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                total += 1;
                if total > max_iter {
                    return Err(MatrixError::NonConvergence {
                        index: l,
                        iterations: total,
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = zt.as_deref_mut() {
                        let (lo, hi) = z.split_at_mut((i + 1) * n);
                        let zi = &mut lo[i * n..(i + 1) * n];
                        let zi1 = &mut hi[..n];
                        for k in 0..n {
                            let t = zi1[k];
                            zi1[k] = s * zi[k] + c * t;
                            zi[k] = c * zi[k] - s * t;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

fn decompose(a: &SymMatrix, vectors: bool) -> Result<EigenDecomposition> {
    let n = a.order();
    if n == 0 {
        return Err(MatrixError::Empty);
    }
    if n > MAX_ORDER {
        return Err(MatrixError::TooLarge {
            order: n,
            cap: MAX_ORDER,
        });
    }
    if !a.is_finite() {
        return Err(MatrixError::NonFinite);
    }
    let mut work = a.data.clone();
    let mut betas = vec![0.0; n];
    let (mut d, mut e) = tridiagonalize(&mut work, n, &mut betas);
    let mut zt = if vectors {
        // Q = H_0 H_1 ... H_{n-3}; rows of Qᵀ are accumulated.
        let mut q = SymMatrix::identity(n).data;
        for k in (0..n.saturating_sub(2)).rev() {
            let beta = betas[k];
            if beta == 0.0 {
                continue;
            }
            let v = &work[k * n + k + 1..k * n + n];
            // Q[k+1.., :] -= β v (vᵀ Q[k+1.., :])
            let mut w = vec![0.0; n];
            for (i, vi) in v.iter().enumerate() {
                let row = &q[(k + 1 + i) * n..(k + 2 + i) * n];
                for j in 0..n {
                    w[j] += vi * row[j];
                }
            }
            for (i, vi) in v.iter().enumerate() {
                let row = &mut q[(k + 1 + i) * n..(k + 2 + i) * n];
                let s = beta * vi;
                for j in 0..n {
                    row[j] -= s * w[j];
                }
            }
        }
        // Rows of zt must be columns of Q.
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = q[i * n + j];
            }
        }
        Some(t)
    } else {
        None
    };
    tridiagonal_ql(&mut d, &mut e, zt.as_deref_mut())?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = match zt {
        Some(z) => {
            let mut out = Vec::with_capacity(n * n);
            for &i in &order {
                out.extend_from_slice(&z[i * n..(i + 1) * n]);
            }
            out
        }
        None => Vec::new(),
    };
    Ok(EigenDecomposition { values, vectors })
}

/// All eigenvalues, ascending.
pub fn symmetric_eigenvalues(a: &SymMatrix) -> Result<Esd> {
    Ok(Esd {
        eigs: decompose(a, false)?.values,
    })
}

/// Eigenvalues with orthonormal eigenvectors.
pub fn symmetric_eigen(a: &SymMatrix) -> Result<EigenDecomposition> {
    decompose(a, true)
}

impl EigenDecomposition {
    pub fn order(&self) -> usize {
        self.values.len()
    }

    /// `Q diag(φ(λ)) Qᵀ`.
    pub fn reconstruct(&self, phi: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.order();
        let mut out = SymMatrix::zeros(n);
        for (k, &l) in self.values.iter().enumerate() {
            let w = phi(l);
            if w == 0.0 {
                continue;
            }
            let q = &self.vectors[k * n..(k + 1) * n];
            for i in 0..n {
                let s = w * q[i];
                let row = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    row[j] += s * q[j];
                }
            }
        }
        out
    }
}

/// Both sides of `S_{B_N}(z) = z^{-1/2}(n/2p) S_{𝕏_n}(z^{1/2}) + (N−p)/(2pz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramIdentity {
    pub lhs: Complex64,
    pub rhs: Complex64,
}

impl GramIdentity {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).norm()
    }
}

/// Evaluates the Gram/symmetrisation Stieltjes identity through two
/// independent eigendecompositions. `√z` is the principal root, which has
/// positive imaginary part on the upper half-plane.
pub fn gram_stieltjes_identity(x: &DataMatrix, z: Complex64) -> Result<GramIdentity> {
    if !(z.im > 0.0) {
        return Err(MatrixError::Domain(z));
    }
    let (nr, p) = (x.rows() as f64, x.cols() as f64);
    let n = nr + p;
    let lhs = symmetric_eigenvalues(&gram(x))?.stieltjes(z)?;
    let root = z.sqrt();
    let s_big = symmetric_eigenvalues(&symmetrize_gram(x))?.stieltjes(root)?;
    let rhs = s_big / root * (n / (2.0 * p)) + (nr - p) / (2.0 * p * z);
    Ok(GramIdentity { lhs, rhs })
}
