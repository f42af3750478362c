//! Dense real linear algebra: matrices and vectors, Householder QR with
//! column pivoting, row/null space bases and orthogonal projectors.

use std::fmt;

use crate::error::{NusaError, Result};

/// Relative tolerance on QR diagonal magnitudes used to decide rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(NusaError::invalid(format!(
            "{what} has a non-finite entry at position {i}"
        ))),
        None => Ok(()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        check_finite(&entries, "vector")?;
        Ok(DenseVector(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector(vec![0.0; dim])
    }

    /// Caller guarantees finiteness.
    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        debug_assert!(entries.iter().all(|v| v.is_finite()));
        DenseVector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(NusaError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0))
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

/// Row-major dense matrix with at least one row and one column.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(NusaError::invalid(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(NusaError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        check_finite(&data, "matrix")?;
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(NusaError::DimensionMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        DenseMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be at least 1x1");
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(NusaError::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.dim() != self.cols {
            return Err(NusaError::DimensionMismatch {
                expected: self.cols,
                actual: x.dim(),
            });
        }
        Ok(DenseVector(self.matvec_slice(x.as_slice())))
    }

    pub(crate) fn matvec_slice(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ y`.
    pub(crate) fn matvec_transposed_slice(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += yi * w;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// `self · selfᵀ`.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.rows;
        let mut g = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                g.data[i * n + j] = v;
                g.data[j * n + i] = v;
            }
        }
        g
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Orthonormal set of vectors spanning a subspace of `R^ambient_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    ambient_dim: usize,
    vectors: Vec<DenseVector>,
}

impl OrthonormalBasis {
    /// Checks orthonormality to 1e-10.
    pub fn new(ambient_dim: usize, vectors: Vec<DenseVector>) -> Result<Self> {
        if vectors.len() > ambient_dim {
            return Err(NusaError::invalid(format!(
                "{} basis vectors exceed ambient dimension {ambient_dim}",
                vectors.len()
            )));
        }
        for (i, a) in vectors.iter().enumerate() {
            if a.dim() != ambient_dim {
                return Err(NusaError::DimensionMismatch {
                    expected: ambient_dim,
                    actual: a.dim(),
                });
            }
            for (j, b) in vectors.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = dot(a.as_slice(), b.as_slice());
                if (d - target).abs() > 1e-10 {
                    return Err(NusaError::invalid(format!(
                        "basis vectors {i} and {j} have dot product {d}"
                    )));
                }
            }
        }
        Ok(OrthonormalBasis {
            ambient_dim,
            vectors,
        })
    }

    pub fn empty(ambient_dim: usize) -> Self {
        OrthonormalBasis {
            ambient_dim,
            vectors: Vec::new(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[DenseVector] {
        &self.vectors
    }

    /// Coordinates of `x` in the basis, `Bᵀx`.
    pub(crate) fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|b| dot(b.as_slice(), x)).collect()
    }

    /// Orthogonal projection of `x` onto the span without forming the
    /// projector matrix.
    pub(crate) fn project_slice(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient_dim];
        for (b, c) in self.vectors.iter().zip(self.coordinates(x)) {
            for (o, bi) in out.iter_mut().zip(b.as_slice()) {
                *o += c * bi;
            }
        }
        out
    }

    pub fn project(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.dim() != self.ambient_dim {
            return Err(NusaError::DimensionMismatch {
                expected: self.ambient_dim,
                actual: x.dim(),
            });
        }
        Ok(DenseVector(self.project_slice(x.as_slice())))
    }
}

/// Symmetric idempotent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    matrix: DenseMatrix,
}

impl Projector {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

/// Result of `A Π = Q R` with column pivoting.
struct PivotedQr {
    /// Full `m x m` orthogonal factor, row-major.
    q: DenseMatrix,
    /// `|R_kk|` for each completed step, non-increasing.
    diag: Vec<f64>,
}

impl PivotedQr {
    fn rank(&self, rank_tol: f64) -> usize {
        let largest = self.diag.first().copied().unwrap_or(0.0);
        if largest == 0.0 {
            return 0;
        }
        self.diag
            .iter()
            .take_while(|&&d| d > rank_tol * largest)
            .count()
    }

    fn column(&self, j: usize) -> DenseVector {
        let m = self.q.rows();
        DenseVector((0..m).map(|i| self.q.get(i, j)).collect())
    }
}

/// Householder QR with Businger-Golub column pivoting. The pivot at each
/// step is the remaining column of largest norm, so `|R_kk|` is
/// non-increasing and its decay reveals the numerical rank.
fn householder_qr_pivoted(a: &DenseMatrix) -> PivotedQr {
    let m = a.rows();
    let n = a.cols();
    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.get(i, j)).collect())
        .collect();
    let mut reflectors: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut diag = Vec::new();

    for k in 0..m.min(n) {
        let (pivot, pivot_norm) =
            (k..n)
                .map(|j| (j, norm(&cols[j][k..])))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot_norm == 0.0 {
            break;
        }
        cols.swap(k, pivot);

        let x = &cols[k][k..];
        let alpha = if x[0] >= 0.0 { -pivot_norm } else { pivot_norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = norm(&v);
        if vnorm > 0.0 {
            v.iter_mut().for_each(|e| *e /= vnorm);
            for col in cols.iter_mut().skip(k) {
                let tail = &mut col[k..];
                let s = 2.0 * dot(&v, tail);
                tail.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
            }
            reflectors.push((k, v));
        }
        diag.push(pivot_norm);
    }

    // Q = H_0 H_1 ... H_{k-1}, accumulated by applying the reflectors to I
    // from the innermost outwards.
    let mut q = DenseMatrix::identity(m);
    for (k, v) in reflectors.iter().rev() {
        for j in 0..m {
            let s = 2.0 * (0..v.len()).map(|t| v[t] * q.get(k + t, j)).sum::<f64>();
            for (t, vt) in v.iter().enumerate() {
                q.data[(k + t) * m + j] -= s * vt;
            }
        }
    }
    PivotedQr { q, diag }
}

fn check_rank_tol(rank_tol: f64) -> Result<()> {
    if !(rank_tol > 0.0 && rank_tol.is_finite()) {
        return Err(NusaError::invalid(format!(
            "rank tolerance must be positive, got {rank_tol}"
        )));
    }
    Ok(())
}

/// Row space and null space bases of `w` from one pivoted QR of `wᵀ`.
pub fn row_and_null_space(
    w: &DenseMatrix,
    rank_tol: f64,
) -> Result<(OrthonormalBasis, OrthonormalBasis)> {
    check_rank_tol(rank_tol)?;
    let qr = householder_qr_pivoted(&w.transpose());
    let rank = qr.rank(rank_tol);
    let n = w.cols();
    let row = (0..rank).map(|j| qr.column(j)).collect();
    let null = (rank..n).map(|j| qr.column(j)).collect();
    Ok((
        OrthonormalBasis {
            ambient_dim: n,
            vectors: row,
        },
        OrthonormalBasis {
            ambient_dim: n,
            vectors: null,
        },
    ))
}

/// Orthonormal basis of the span of the rows of `w` (the column space of
/// `wᵀ`). The rank counts pivoted QR diagonal magnitudes above
/// `rank_tol` times the largest one.
pub fn qr_row_space_basis(w: &DenseMatrix, rank_tol: f64) -> Result<OrthonormalBasis> {
    row_and_null_space(w, rank_tol).map(|(row, _)| row)
}

/// Orthonormal basis of `{z : w z = 0}`.
pub fn null_space_basis(w: &DenseMatrix, rank_tol: f64) -> Result<OrthonormalBasis> {
    row_and_null_space(w, rank_tol).map(|(_, null)| null)
}

/// `P = Σ b bᵀ` over the basis vectors.
pub fn projector_from_basis(basis: &OrthonormalBasis) -> Projector {
    let n = basis.ambient_dim;
    let mut data = vec![0.0; n * n];
    for b in &basis.vectors {
        let b = b.as_slice();
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] += b[i] * b[j];
            }
        }
    }
    // ambient_dim 0 would violate the matrix invariant; bases always come
    // from a matrix with at least one column.
    Projector {
        matrix: DenseMatrix {
            rows: n,
            cols: n,
            data,
        },
    }
}

pub fn apply_projector(p: &Projector, x: &DenseVector) -> Result<DenseVector> {
    p.matrix.matvec(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(NusaError::DimensionMismatch {
                expected: n,
                actual: a.cols(),
            });
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = a.get(i, j) - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    if s <= 0.0 {
                        return Err(NusaError::Numeric("matrix is not positive definite".into()));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, lower: l })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let l = &self.lower;
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b[i] - dot(&l[i * n..i * n + i], &y[..i])) / l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| l[k * n + i] * x[k]).sum();
            x[i] = (y[i] - s) / l[i * n + i];
        }
        x
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order with matching unit
/// eigenvectors.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, Vec<DenseVector>)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NusaError::DimensionMismatch {
            expected: n,
            actual: a.cols(),
        });
    }
    let mut m = a.data.clone();
    let mut v = DenseMatrix::identity(n).data;
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&j| DenseVector((0..n).map(|i| v[i * n + j]).collect()))
        .collect();
    Ok((values, vectors))
}
