//! Minimization of quadratic forms over the standard simplex and the margin
//! constants built on it: `τ₀² = min_{λ∈T} λᵀΣλ` and its projected
//! counterpart `τ²(S)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::densela::{dot, householder_lstsq, lu_solve, Cholesky, DenseMatrix, IncrementalQr};
use crate::error::{invalid, Error, Result};
use crate::nnls::checked_index_set;

/// Values below this are reported as exactly zero.
pub const ZERO_VALUE: f64 = 1e-12;

/// Default iteration cap of the projected-gradient phase.
pub const MAX_ITER: usize = 50_000;

/// Agreement required between the three `τ²(S)` computations.
pub const CROSS_CHECK_TOL: f64 = 1e-7;

/// A symmetric positive semidefinite operator `v ↦ Qv`.
pub trait QuadraticOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &[f64]) -> Vec<f64>;

    fn column(&self, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[j] = 1.0;
        self.apply(&e)
    }
}

impl QuadraticOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matvec(v)
    }

    fn column(&self, j: usize) -> Vec<f64> {
        self.col(j).to_vec()
    }
}

/// `λ ↦ (1/n) X_{S^c}ᵀ (X_{S^c}λ − X_S θ(λ))` where `θ(λ)` minimizes
/// `‖X_Sθ − X_{S^c}λ‖₂`. Each application runs a Householder least-squares
/// solve.
struct EliminatedOperator<'a> {
    xs: &'a DenseMatrix,
    xsc: &'a DenseMatrix,
}

impl QuadraticOperator for EliminatedOperator<'_> {
    fn dim(&self) -> usize {
        self.xsc.cols()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let target = self.xsc.matvec(v);
        let theta = householder_lstsq(self.xs, &target).expect("X_S rank checked before use");
        let fit = self.xs.matvec(&theta);
        let r: Vec<f64> = target.iter().zip(&fit).map(|(a, b)| a - b).collect();
        let nf = self.xsc.rows() as f64;
        self.xsc.tmatvec(&r).into_iter().map(|g| g / nf).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimplexSolution {
    pub value: f64,
    pub lambda: Vec<f64>,
    /// `λᵀQλ − min_j (Qλ)_j`, an upper bound on the suboptimality.
    pub kkt_gap: f64,
    /// Largest `|(Qλ)_j − λᵀQλ|` over the support of `λ`.
    pub face_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

/// Euclidean projection onto `{λ ⪰ 0, 1ᵀλ = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Minimizes `λᵀQλ` over the simplex. `Q` must be symmetric PSD.
pub fn simplex_min_quadratic(q: &DenseMatrix, tol: f64) -> Result<SimplexSolution> {
    q.check_symmetric(1e-9)?;
    if !q.is_finite() {
        return invalid("Q must be finite");
    }
    if q.rows() == 0 {
        return invalid("Q must be non-empty");
    }
    if q.rows() <= 500 {
        let (lo, _) = crate::densela::sym_eig_extremes(q)?;
        if lo < -1e-9 * q.max_abs().max(1.0) {
            return invalid(format!("Q is not positive semidefinite (eigenvalue {lo:.3e})"));
        }
    }
    simplex_min_operator(q, tol, MAX_ITER)
}

/// Accelerated projected gradient with adaptive restart, finished by an
/// active-face solve of the bordered system `[Q_AA 1; 1ᵀ 0]`.
pub fn simplex_min_operator<Q: QuadraticOperator + ?Sized>(
    q: &Q,
    tol: f64,
    max_iter: usize,
) -> Result<SimplexSolution> {
    let m = q.dim();
    if m == 0 {
        return invalid("empty simplex");
    }
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    if m == 1 {
        let c = q.column(0)[0];
        return Ok(SimplexSolution {
            value: c,
            lambda: vec![1.0],
            kkt_gap: 0.0,
            face_residual: 0.0,
            iterations: 0,
            polished: true,
        });
    }
    let mut cols: HashMap<usize, Vec<f64>> = HashMap::new();

    let mut lambda = vec![1.0 / m as f64; m];
    let mut q_lambda = q.apply(&lambda);
    let mut value = dot(&lambda, &q_lambda);
    let (mut best_value, mut best) = (value, lambda.clone());
    let mut lip = 2.0 * power_estimate(q) * 1.01;
    if !(lip > 0.0) {
        lip = 1.0;
    }
    let mut yk = lambda.clone();
    let mut q_y = q_lambda.clone();
    let mut t: f64 = 1.0;
    let mut iter = 0usize;
    let mut last_polish_gap = f64::INFINITY;

    loop {
        let gap = value - min_of(&q_lambda);
        let scale = value.abs().max(1e-300);
        let try_polish = gap <= tol
            || (iter > 0 && iter % 25 == 0 && (gap <= 1e-4 * scale || iter % 1000 == 0) && gap < 0.5 * last_polish_gap);
        if try_polish || iter == 0 {
            last_polish_gap = gap;
            if let Some(sol) = polish(q, &lambda, tol, &mut cols, iter) {
                return Ok(sol);
            }
            if gap <= tol {
                return Ok(finish(lambda, q_lambda, iter, false));
            }
        }
        if iter >= max_iter {
            return Err(Error::NonConvergence {
                solver: "simplex_qp",
                iterations: iter,
                gap,
                best,
            });
        }
        iter += 1;

        let f_y = dot(&yk, &q_y);
        let grad: Vec<f64> = q_y.iter().map(|g| 2.0 * g).collect();
        let (x_new, q_new, f_new) = loop {
            let step: Vec<f64> = yk.iter().zip(&grad).map(|(y, g)| y - g / lip).collect();
            let x_new = project_simplex(&step);
            let q_new = q.apply(&x_new);
            let f_new = dot(&x_new, &q_new);
            let d: Vec<f64> = x_new.iter().zip(&yk).map(|(a, b)| a - b).collect();
            let model = f_y + dot(&grad, &d) + 0.5 * lip * dot(&d, &d);
            if f_new <= model + 1e-15 * f_y.abs().max(1.0) || lip > 1e300 {
                break (x_new, q_new, f_new);
            }
            lip *= 2.0;
        };

        // gradient-based restart
        let restart = yk
            .iter()
            .zip(&x_new)
            .zip(&lambda)
            .map(|((y, xn), x)| (y - xn) * (xn - x))
            .sum::<f64>()
            > 0.0;
        let t_new = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let mom = if restart { 0.0 } else { (t - 1.0) / t_new };
        let y_next: Vec<f64> = x_new
            .iter()
            .zip(&lambda)
            .map(|(xn, x)| xn + mom * (xn - x))
            .collect();
        // the extrapolated point may leave the simplex; evaluate there anyway
        q_y = if mom == 0.0 {
            q_new.clone()
        } else {
            let qd: Vec<f64> = q_new
                .iter()
                .zip(&q_lambda)
                .map(|(a, b)| a + mom * (a - b))
                .collect();
            qd
        };
        yk = y_next;
        t = t_new;
        lambda = x_new;
        q_lambda = q_new;
        value = f_new;
        if value < best_value {
            best_value = value;
            best = lambda.clone();
        }
    }
}

fn finish(lambda: Vec<f64>, q_lambda: Vec<f64>, iterations: usize, polished: bool) -> SimplexSolution {
    let value = dot(&lambda, &q_lambda).max(0.0);
    let kkt_gap = (value - min_of(&q_lambda)).max(0.0);
    let face_residual = lambda
        .iter()
        .zip(&q_lambda)
        .filter(|(l, _)| **l > 0.0)
        .map(|(_, g)| (g - value).abs())
        .fold(0.0, f64::max);
    let value = if value < ZERO_VALUE { 0.0 } else { value };
    SimplexSolution {
        value,
        lambda,
        kkt_gap,
        face_residual,
        iterations,
        polished,
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn power_estimate<Q: QuadraticOperator + ?Sized>(q: &Q) -> f64 {
    let m = q.dim();
    let mut v: Vec<f64> = (0..m).map(|j| 1.0 + 0.01 * (j as f64 / m as f64)).collect();
    let mut est = 0.0;
    for _ in 0..60 {
        let nv = dot(&v, &v).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = q.apply(&v);
        est = dot(&v, &w);
        v = w;
    }
    est.max(0.0)
}

/// Primal active-set iterations starting from the support of `start`. Returns
/// `None` when a face system is singular or the method does not certify
/// optimality within its budget.
fn polish<Q: QuadraticOperator + ?Sized>(
    q: &Q,
    start: &[f64],
    tol: f64,
    cols: &mut HashMap<usize, Vec<f64>>,
    iterations: usize,
) -> Option<SimplexSolution> {
    let m = q.dim();
    let lmax = start.iter().cloned().fold(0.0, f64::max);
    let mut active: Vec<usize> = (0..m).filter(|&j| start[j] > 1e-9 * lmax).collect();
    if active.len() > 600 {
        return None;
    }
    let mut lambda = vec![0.0; m];
    let mass: f64 = active.iter().map(|&j| start[j]).sum();
    for &j in &active {
        lambda[j] = start[j] / mass;
    }
    for _ in 0..(4 * m + 10) {
        for &j in &active {
            cols.entry(j).or_insert_with(|| q.column(j));
        }
        let k = active.len();
        let kkt = DenseMatrix::from_fn(k + 1, k + 1, |a, b| match (a < k, b < k) {
            (true, true) => cols[&active[b]][active[a]],
            (true, false) | (false, true) => 1.0,
            (false, false) => 0.0,
        });
        let mut rhs = vec![0.0; k + 1];
        rhs[k] = 1.0;
        let sol = lu_solve(&kkt, &rhs).ok()?;
        let z = &sol[..k];
        if z.iter().all(|&v| v > 0.0) {
            lambda.iter_mut().for_each(|v| *v = 0.0);
            for (a, &j) in active.iter().enumerate() {
                lambda[j] = z[a];
            }
            let q_lambda = q.apply(&lambda);
            let value = dot(&lambda, &q_lambda);
            let (jmin, gmin) = q_lambda
                .iter()
                .enumerate()
                .filter(|(j, _)| lambda[*j] == 0.0)
                .fold((usize::MAX, f64::INFINITY), |acc, (j, &g)| if g < acc.1 { (j, g) } else { acc });
            if jmin == usize::MAX || gmin >= value - tol {
                let sol = finish(lambda, q_lambda, iterations, true);
                if sol.kkt_gap <= tol.max(1e-12 * sol.value) && sol.face_residual <= tol {
                    return Some(sol);
                }
                return None;
            }
            active.push(jmin);
            active.sort_unstable();
        } else {
            // move toward z until a coordinate hits zero, then drop it
            let mut alpha = f64::INFINITY;
            let mut hit = usize::MAX;
            for (a, &j) in active.iter().enumerate() {
                if z[a] <= 0.0 {
                    let step = lambda[j] / (lambda[j] - z[a]);
                    if step < alpha {
                        alpha = step;
                        hit = j;
                    }
                }
            }
            for (a, &j) in active.iter().enumerate() {
                lambda[j] += alpha * (z[a] - lambda[j]);
            }
            lambda[hit] = 0.0;
            active.retain(|&j| j != hit && lambda[j] > 0.0);
            if active.is_empty() {
                return None;
            }
            let mass: f64 = active.iter().map(|&j| lambda[j]).sum();
            for &j in &active {
                lambda[j] /= mass;
            }
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MarginKind {
    Tau0,
    TauS,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginCertificate {
    pub value: f64,
    /// Simplex weights over `columns`.
    pub lambda: Vec<f64>,
    /// Column indices the weights refer to (all columns, or `S^c`).
    pub columns: Vec<usize>,
    /// Separating direction; zero when the margin vanishes.
    pub w: Vec<f64>,
    pub kind: MarginKind,
    pub conditioning_note: String,
    pub kkt_gap: f64,
}

impl MarginCertificate {
    /// `min_j X_jᵀw/√n` over the certificate's columns.
    pub fn achieved_margin(&self, x: &DenseMatrix) -> f64 {
        let sqrt_n = (x.rows() as f64).sqrt();
        self.columns
            .iter()
            .map(|&j| dot(x.col(j), &self.w) / sqrt_n)
            .fold(f64::INFINITY, f64::min)
    }
}

fn direction(x_cols: &DenseMatrix, lambda: &[f64], value: f64) -> Vec<f64> {
    let n = x_cols.rows();
    if value <= 0.0 {
        return vec![0.0; n];
    }
    let v = x_cols.matvec(lambda);
    let norm = dot(&v, &v).sqrt();
    if norm == 0.0 {
        return vec![0.0; n];
    }
    v.into_iter().map(|a| a / norm).collect()
}

/// `τ₀²` of a normalized design together with its dual hyperplane.
pub fn tau0(x: &DenseMatrix) -> Result<MarginCertificate> {
    if x.cols() == 0 || x.rows() == 0 {
        return invalid("design must be non-empty");
    }
    let sigma = x.gram(1.0 / x.rows() as f64);
    let sol = simplex_min_operator(&sigma, 1e-10, MAX_ITER)?;
    let w = direction(x, &sol.lambda, sol.value);
    let note = if sol.value == 0.0 {
        "origin lies in the convex hull of the columns; no separating hyperplane".to_string()
    } else {
        format!("max diagonal {:.6}", (0..sigma.rows()).map(|j| sigma.get(j, j)).fold(0.0, f64::max))
    };
    Ok(MarginCertificate {
        value: sol.value,
        lambda: sol.lambda,
        columns: (0..x.cols()).collect(),
        w,
        kind: MarginKind::Tau0,
        conditioning_note: note,
        kkt_gap: sol.kkt_gap,
    })
}

struct SupportSplit {
    complement: Vec<usize>,
    xs: DenseMatrix,
    xsc: DenseMatrix,
    qr: IncrementalQr,
}

fn split(x: &DenseMatrix, support: &[usize]) -> Result<SupportSplit> {
    let p = x.cols();
    let set = checked_index_set(support, p)?;
    if support.len() >= p {
        return invalid("S must leave at least one column outside");
    }
    let complement: Vec<usize> = (0..p).filter(|j| !set.contains(j)).collect();
    let xs = x.select_columns(support);
    let mut qr = IncrementalQr::new(x.rows());
    for (k, &j) in support.iter().enumerate() {
        if qr.append(xs.col(k))?.is_none() {
            return Err(Error::RankDeficient(format!("X_S: column {j} is dependent")));
        }
    }
    Ok(SupportSplit {
        xsc: x.select_columns(&complement),
        complement,
        xs,
        qr,
    })
}

fn projected_gram(sp: &SupportSplit) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut z = sp.xsc.clone();
    for k in 0..z.cols() {
        let r = sp.qr.project_residual(z.col(k))?;
        z.col_mut(k).copy_from_slice(&r);
    }
    let g = z.gram(1.0 / z.rows() as f64);
    Ok((z, g))
}

fn tau_s_certificate(sp: SupportSplit, z: &DenseMatrix, sol: SimplexSolution, note: String) -> MarginCertificate {
    let w = direction(z, &sol.lambda, sol.value);
    MarginCertificate {
        value: sol.value,
        lambda: sol.lambda,
        columns: sp.complement,
        w,
        kind: MarginKind::TauS,
        conditioning_note: note,
        kkt_gap: sol.kkt_gap,
    }
}

/// `τ²(S)` computed from `Z = Π_S^⊥ X_{S^c}` only.
pub fn tau_s_projected(x: &DenseMatrix, support: &[usize]) -> Result<MarginCertificate> {
    if support.is_empty() {
        let mut c = tau0(x)?;
        c.kind = MarginKind::TauS;
        return Ok(c);
    }
    let sp = split(x, support)?;
    let (z, g) = projected_gram(&sp)?;
    let sol = simplex_min_operator(&g, 1e-10, MAX_ITER)?;
    Ok(tau_s_certificate(sp, &z, sol, String::new()))
}

/// The three computations of `τ²(S)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TauSForms {
    pub projected: f64,
    pub schur: f64,
    pub eliminated: f64,
}

/// `τ²(S)` computed three independent ways (projected design, Schur
/// complement of the Gram matrix, least-squares elimination of the `X_S`
/// coefficients), cross-checked to 1e-7.
pub fn tau_s(x: &DenseMatrix, support: &[usize]) -> Result<MarginCertificate> {
    tau_s_with_forms(x, support).map(|(c, _)| c)
}

pub fn tau_s_with_forms(x: &DenseMatrix, support: &[usize]) -> Result<(MarginCertificate, TauSForms)> {
    if support.is_empty() {
        let mut c = tau0(x)?;
        c.kind = MarginKind::TauS;
        let v = c.value;
        return Ok((
            c,
            TauSForms {
                projected: v,
                schur: v,
                eliminated: v,
            },
        ));
    }
    let sp = split(x, support)?;
    let n = x.rows() as f64;

    let (z, g) = projected_gram(&sp)?;
    let a = simplex_min_operator(&g, 1e-10, MAX_ITER)?;

    // Schur complement Σ_{cc} − Σ_{cS} Σ_SS⁻¹ Σ_{Sc}
    let sigma_ss = sp.xs.gram(1.0 / n);
    let chol = Cholesky::new(&sigma_ss)?;
    let (lo, _) = crate::densela::sym_eig_extremes(&sigma_ss)?;
    let m = sp.xsc.cols();
    let mut cross = DenseMatrix::zeros(support.len(), m);
    for k in 0..m {
        let c: Vec<f64> = sp.xs.tmatvec(sp.xsc.col(k)).into_iter().map(|v| v / n).collect();
        let f = chol.forward(&c);
        cross.col_mut(k).copy_from_slice(&f);
    }
    let schur = DenseMatrix::from_fn(m, m, |i, j| {
        dot(sp.xsc.col(i), sp.xsc.col(j)) / n - dot(cross.col(i), cross.col(j))
    });
    let schur = symmetrize(&schur);
    let b = simplex_min_operator(&schur, 1e-10, MAX_ITER)?;

    let op = EliminatedOperator {
        xs: &sp.xs,
        xsc: &sp.xsc,
    };
    let c = simplex_min_operator(&op, 1e-10, MAX_ITER)?;

    let forms = TauSForms {
        projected: a.value,
        schur: b.value,
        eliminated: c.value,
    };
    let spread = [a.value, b.value, c.value];
    let hi = spread.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo_v = spread.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi - lo_v > CROSS_CHECK_TOL * hi.max(1.0) {
        return Err(Error::CrossCheck(format!(
            "tau^2(S) forms disagree: projected {}, schur {}, eliminated {}",
            a.value, b.value, c.value
        )));
    }
    let note = format!("smallest eigenvalue of Sigma_SS {lo:.6e}");
    Ok((tau_s_certificate(sp, &z, a, note), forms))
}

fn symmetrize(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
}
