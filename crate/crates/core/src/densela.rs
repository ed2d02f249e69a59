//! Dense linear-algebra kernels: a column-major matrix type, Gram–Schmidt QR
//! with incremental column append, Cholesky solves, Householder least squares
//! and extreme eigenvalues of symmetric matrices.

use crate::error::{invalid, mismatch, Error, Result};

/// Relative threshold below which an appended column counts as dependent.
pub const DEPENDENCE_TOL: f64 = 1e-10;

/// Cholesky pivots at or below this fraction of the largest diagonal entry are
/// treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Dimension at and below which cyclic Jacobi is used for eigen-extremes.
const JACOBI_MAX_DIM: usize = 64;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Dense real matrix stored in column-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return mismatch(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix entries must be finite");
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices; convenient for small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return mismatch("ragged rows");
        }
        Self::from_col_major(r, c, Self::col_major_from(r, c, |i, j| rows[i][j]))
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let c = columns.len();
        let r = columns.first().map_or(0, |col| col.len());
        if columns.iter().any(|col| col.len() != r) {
            return mismatch("columns of unequal length");
        }
        Self::from_col_major(r, c, columns.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        Self {
            rows,
            cols,
            data: Self::col_major_from(rows, cols, f),
        }
    }

    fn col_major_from(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        data
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        norm_inf(&self.data)
    }

    /// `A v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec length mismatch");
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                axpy(vj, self.col(j), &mut out);
            }
        }
        out
    }

    /// `Aᵀ v`
    pub fn tmatvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tmatvec length mismatch");
        (0..self.cols).map(|j| dot(self.col(j), v)).collect()
    }

    /// `scale · AᵀA`, exactly symmetric.
    pub fn gram(&self, scale: f64) -> DenseMatrix {
        let p = self.cols;
        let mut g = DenseMatrix::zeros(p, p);
        for j in 0..p {
            for k in j..p {
                let v = scale * dot(self.col(j), self.col(k));
                g.set(j, k, v);
                g.set(k, j, v);
            }
        }
        g
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return mismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let col = self.matvec(other.col(j));
            out.col_mut(j).copy_from_slice(&col);
        }
        Ok(out)
    }

    pub fn select_columns(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        DenseMatrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(idx.len(), self.cols, |i, j| self.get(idx[i], j))
    }

    /// Sub-block with the given row and column index sets.
    pub fn submatrix(&self, row_idx: &[usize], col_idx: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(row_idx.len(), col_idx.len(), |i, j| {
            self.get(row_idx[i], col_idx[j])
        })
    }

    /// Checks `|a_ij - a_ji| <= tol · max(1, max|a|)`.
    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        if self.rows != self.cols {
            return invalid(format!("{}x{} matrix is not square", self.rows, self.cols));
        }
        let scale = self.max_abs().max(1.0);
        for j in 0..self.cols {
            for i in (j + 1)..self.rows {
                if (self.get(i, j) - self.get(j, i)).abs() > tol * scale {
                    return invalid(format!("matrix is not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(())
    }
}

/// Orthonormal basis grown one column at a time by Gram–Schmidt with one
/// reorthogonalization pass. Keeps the triangular factor of the accepted
/// columns so least-squares problems on them can be solved directly.
#[derive(Clone, Debug)]
pub struct IncrementalQr {
    n: usize,
    q: Vec<f64>,
    // r_cols[k] holds the first k+1 entries of column k of R.
    r_cols: Vec<Vec<f64>>,
    accepted: Vec<usize>,
    appended: usize,
}

impl IncrementalQr {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            q: Vec::new(),
            r_cols: Vec::new(),
            accepted: Vec::new(),
            appended: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn basis_dim(&self) -> usize {
        self.r_cols.len()
    }

    pub fn appended_count(&self) -> usize {
        self.appended
    }

    /// Ordinals (in append order) of the columns that grew the basis.
    pub fn accepted(&self) -> &[usize] {
        &self.accepted
    }

    pub fn basis_column(&self, k: usize) -> &[f64] {
        &self.q[k * self.n..(k + 1) * self.n]
    }

    pub fn basis(&self) -> DenseMatrix {
        DenseMatrix {
            rows: self.n,
            cols: self.basis_dim(),
            data: self.q.clone(),
        }
    }

    /// `Qᵀ v`
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        (0..self.basis_dim())
            .map(|k| dot(self.basis_column(k), v))
            .collect()
    }

    /// Appends `column`; returns the new unit direction, or `None` when the
    /// column lies in the current span (relative residual ≤ 1e-10).
    pub fn append(&mut self, column: &[f64]) -> Result<Option<Vec<f64>>> {
        if column.len() != self.n {
            return mismatch(format!(
                "column of length {} appended to basis in R^{}",
                column.len(),
                self.n
            ));
        }
        if column.iter().any(|v| !v.is_finite()) {
            return invalid("column contains non-finite entries");
        }
        self.appended += 1;
        let col_norm = norm2(column);
        let k = self.basis_dim();
        let mut r = column.to_vec();
        let mut h_total = vec![0.0; k];
        for _ in 0..2 {
            let h = self.coefficients(&r);
            for (kk, hk) in h.iter().enumerate() {
                axpy(-hk, self.basis_column(kk), &mut r);
                h_total[kk] += hk;
            }
        }
        let rn = norm2(&r);
        if col_norm == 0.0 || rn <= DEPENDENCE_TOL * col_norm {
            return Ok(None);
        }
        for v in r.iter_mut() {
            *v /= rn;
        }
        self.q.extend_from_slice(&r);
        h_total.push(rn);
        self.r_cols.push(h_total);
        self.accepted.push(self.appended - 1);
        Ok(Some(r))
    }

    /// `v − Q(Qᵀv)`
    pub fn project_residual(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return mismatch(format!("vector of length {} vs basis in R^{}", v.len(), self.n));
        }
        let mut out = v.to_vec();
        for k in 0..self.basis_dim() {
            let c = dot(self.basis_column(k), &out);
            axpy(-c, self.basis_column(k), &mut out);
        }
        Ok(out)
    }

    /// `Q(Qᵀv)`
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let resid = self.project_residual(v)?;
        Ok(sub(v, &resid))
    }

    /// Least-squares coefficients on the accepted columns: `R⁻¹ Qᵀ y`.
    pub fn solve_least_squares(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return mismatch("right-hand side length differs from basis dimension");
        }
        let mut c = self.coefficients(y);
        let k = c.len();
        for j in (0..k).rev() {
            c[j] /= self.r_cols[j][j];
            let cj = c[j];
            for (i, ci) in c.iter_mut().enumerate().take(j) {
                *ci -= self.r_cols[j][i] * cj;
            }
        }
        Ok(c)
    }
}

/// Lower-triangular Cholesky factor `A = LLᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: DenseMatrix,
}

impl Cholesky {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return invalid("Cholesky requires a square matrix");
        }
        let scale = (0..n).fold(0.0f64, |m, i| m.max(a.get(i, i).abs())).max(f64::MIN_POSITIVE);
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > PIVOT_TOL * scale) {
                return Err(Error::Singular { index: j, pivot: d });
            }
            let djj = d.sqrt();
            l.set(j, j, djj);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / djj);
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.l
    }

    /// Solves `L z = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut z = b.to_vec();
        for j in 0..self.n {
            z[j] /= self.l.get(j, j);
            let zj = z[j];
            let col = self.l.col(j);
            for i in (j + 1)..self.n {
                z[i] -= col[i] * zj;
            }
        }
        z
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return mismatch("right-hand side length differs from matrix order");
        }
        let mut x = self.forward(b);
        for j in (0..self.n).rev() {
            let col = self.l.col(j);
            let mut s = x[j];
            for i in (j + 1)..self.n {
                s -= col[i] * x[i];
            }
            x[j] = s / col[j];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> DenseMatrix {
        let mut inv = DenseMatrix::zeros(self.n, self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e).expect("dimension checked");
            inv.col_mut(j).copy_from_slice(&col);
        }
        // symmetrize away rounding
        for j in 0..self.n {
            for i in (j + 1)..self.n {
                let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, v);
                inv.set(j, i, v);
            }
        }
        inv
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn spd_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Cholesky::new(a)?.solve(b)
}

/// Gaussian elimination with partial pivoting for a general square system.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return mismatch("lu_solve needs a square system");
    }
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).collect()).collect();
    let mut x = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (piv, pval) = (k..n)
            .map(|i| (i, m[i][k].abs()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if pval <= 1e-14 * scale {
            return Err(Error::Singular { index: k, pivot: pval });
        }
        m.swap(k, piv);
        x.swap(k, piv);
        for i in (k + 1)..n {
            let f = m[i][k] / m[k][k];
            if f != 0.0 {
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in (k + 1)..n {
            s -= m[k][j] * x[j];
        }
        x[k] = s / m[k][k];
    }
    Ok(x)
}

/// Least squares `min ‖A x − b‖₂` by Householder QR. Fails if `A` has fewer
/// rows than columns or is numerically rank deficient.
pub fn householder_lstsq(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = (a.rows(), a.cols());
    if b.len() != n {
        return mismatch("right-hand side length differs from row count");
    }
    if k > n {
        return Err(Error::RankDeficient(format!("{k} columns in R^{n}")));
    }
    let mut r = a.clone();
    let mut rhs = b.to_vec();
    let col_scale: Vec<f64> = (0..k).map(|j| norm2(a.col(j))).collect();
    for j in 0..k {
        let x: Vec<f64> = (j..n).map(|i| r.get(i, j)).collect();
        let alpha = norm2(&x);
        if alpha <= DEPENDENCE_TOL * col_scale[j].max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient(format!("column {j} is dependent")));
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x;
        v[0] += sign * alpha;
        let vn2 = dot(&v, &v);
        for jj in j..k {
            let s: f64 = (j..n).map(|i| v[i - j] * r.get(i, jj)).sum::<f64>() * 2.0 / vn2;
            for i in j..n {
                let val = r.get(i, jj) - s * v[i - j];
                r.set(i, jj, val);
            }
        }
        let s: f64 = (j..n).map(|i| v[i - j] * rhs[i]).sum::<f64>() * 2.0 / vn2;
        for i in j..n {
            rhs[i] -= s * v[i - j];
        }
    }
    let mut x = vec![0.0; k];
    for j in (0..k).rev() {
        let mut s = rhs[j];
        for jj in (j + 1)..k {
            s -= r.get(j, jj) * x[jj];
        }
        x[j] = s / r.get(j, j);
    }
    Ok(x)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
///
/// Cyclic Jacobi up to dimension 64, Householder tridiagonalization followed
/// by Sturm-sequence bisection above that.
pub fn sym_eig_extremes(a: &DenseMatrix) -> Result<(f64, f64)> {
    a.check_symmetric(1e-10)?;
    if !a.is_finite() {
        return invalid("matrix entries must be finite");
    }
    let n = a.rows();
    if n == 0 {
        return invalid("empty matrix has no eigenvalues");
    }
    if n > 2000 {
        return invalid(format!("dimension {n} exceeds 2000"));
    }
    if n <= JACOBI_MAX_DIM {
        let ev = jacobi_eigenvalues(a);
        let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    } else {
        let (d, e) = tridiagonalize(a);
        Ok((tridiag_kth_eigenvalue(&d, &e, 0), tridiag_kth_eigenvalue(&d, &e, n - 1)))
    }
}

fn jacobi_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).collect()).collect();
    let fro: f64 = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * fro.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Householder reduction to tridiagonal form; returns (diagonal, off-diagonal).
fn tridiagonalize(a: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).collect()).collect();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = ((k + 1)..n).map(|i| m[i][k]).collect();
        let alpha = norm2(&x);
        if alpha == 0.0 {
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x;
        v[0] += sign * alpha;
        let vn2 = dot(&v, &v);
        if vn2 == 0.0 {
            continue;
        }
        let len = n - k - 1;
        // p = A v · 2/vn2 restricted to trailing block
        let mut p = vec![0.0; len];
        for i in 0..len {
            let row = &m[k + 1 + i];
            p[i] = (0..len).map(|j| row[k + 1 + j] * v[j]).sum::<f64>() * 2.0 / vn2;
        }
        let kf = dot(&v, &p) / vn2;
        let w: Vec<f64> = (0..len).map(|i| p[i] - kf * v[i]).collect();
        for i in 0..len {
            for j in 0..len {
                m[k + 1 + i][k + 1 + j] -= v[i] * w[j] + w[i] * v[j];
            }
        }
        m[k + 1][k] = -sign * alpha;
        m[k][k + 1] = -sign * alpha;
        for i in (k + 2)..n {
            m[i][k] = 0.0;
            m[k][i] = 0.0;
        }
    }
    let d = (0..n).map(|i| m[i][i]).collect();
    let e = (0..n.saturating_sub(1)).map(|i| m[i + 1][i]).collect();
    (d, e)
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let denom = if q == 0.0 { f64::EPSILON * (e[i - 1].abs() + 1.0) } else { q };
        q = d[i] - x - e[i - 1] * e[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// k-th smallest eigenvalue (0-based) by bisection.
fn tridiag_kth_eigenvalue(d: &[f64], e: &[f64], k: usize) -> f64 {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    lo -= 1e-12 * span;
    hi += 1e-12 * span;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(d, e, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}
