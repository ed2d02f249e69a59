//! Active-set NNLS (Lawson–Hanson), KKT certification, the split of the
//! problem into an off-support and an on-support part, uniqueness diagnostics
//! and the self-regularization decomposition.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::densela::{dot, norm2, DenseMatrix, IncrementalQr};
use crate::error::{invalid, mismatch, Error, Result};
use crate::model::RegressionInstance;
use crate::rng::{master_rng, normal_vec};

/// Active-set changes between full refactorizations of the passive-set QR.
const QR_REFRESH: usize = 50;

/// Coefficients of the on-support problem at or below this count as zero.
pub const P2_POSITIVE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct NnlsOptions {
    pub tol: f64,
    /// Defaults to `10·(n + p)` when `None`.
    pub max_iter: Option<usize>,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NnlsSolution {
    pub beta: Vec<f64>,
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub kkt_max_violation: f64,
    pub iterations: usize,
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
}

/// Solves `min_{β ⪰ 0} (1/n)‖y − Xβ‖₂²`.
pub fn nnls_solve(instance: &RegressionInstance, opts: NnlsOptions) -> Result<NnlsSolution> {
    nnls_solve_raw(&instance.x, &instance.y, opts)
}

/// Same as [`nnls_solve`] for a design that need not be normalized.
pub fn nnls_solve_raw(x: &DenseMatrix, y: &[f64], opts: NnlsOptions) -> Result<NnlsSolution> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 || p == 0 {
        return invalid("NNLS needs n ≥ 1 and p ≥ 1");
    }
    if y.len() != n {
        return mismatch(format!("y has length {}, design has {n} rows", y.len()));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return invalid("NNLS input must be finite");
    }
    if !(opts.tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let max_iter = opts.max_iter.unwrap_or(10 * (n + p));
    let nf = n as f64;
    let inner_tol = opts.tol * (norm2(y) / nf.sqrt()).max(1.0) * 1e-2;

    let mut beta = vec![0.0; p];
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; p];
    let mut blocked = vec![false; p];
    let mut qr = IncrementalQr::new(n);
    let mut changes_since_refresh = 0usize;
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut trace = Vec::new();
    let mut iterations = 0usize;

    loop {
        let grad = gradient(x, y, &beta);
        let mut enter: Option<usize> = None;
        let mut best = inner_tol;
        for j in 0..p {
            if !in_passive[j] && !blocked[j] && grad[j] > best {
                best = grad[j];
                enter = Some(j);
            }
        }
        let Some(j) = enter else { break };

        iterations += 1;
        if iterations > max_iter {
            let gap = kkt_violation(&grad, &beta);
            return Err(Error::NonConvergence {
                solver: "nnls",
                iterations: max_iter,
                gap,
                best: beta,
            });
        }
        let mut key = passive.clone();
        key.push(j);
        key.sort_unstable();
        if !seen.insert(key) {
            return Err(Error::Cycling {
                iterations,
                best: beta,
            });
        }

        if qr.append(x.col(j))?.is_none() {
            blocked[j] = true;
            continue;
        }
        passive.push(j);
        in_passive[j] = true;
        changes_since_refresh += 1;

        let mut z = qr.solve_least_squares(y)?;
        if z[z.len() - 1] <= 0.0 {
            // entering coefficient not positive: numerically degenerate direction
            passive.pop();
            in_passive[j] = false;
            qr = rebuild(x, &passive)?;
            blocked[j] = true;
            continue;
        }
        blocked.iter_mut().for_each(|b| *b = false);

        // inner loop: step back toward feasibility until the LS solution is positive
        while z.iter().any(|&v| v <= 0.0) {
            iterations += 1;
            if iterations > max_iter {
                let grad = gradient(x, y, &beta);
                let gap = kkt_violation(&grad, &beta);
                return Err(Error::NonConvergence {
                    solver: "nnls",
                    iterations: max_iter,
                    gap,
                    best: beta,
                });
            }
            let mut alpha = f64::INFINITY;
            for (k, &idx) in passive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let a = beta[idx] / (beta[idx] - z[k]);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            for (k, &idx) in passive.iter().enumerate() {
                beta[idx] += alpha * (z[k] - beta[idx]);
            }
            let mut kept = Vec::with_capacity(passive.len());
            for (k, &idx) in passive.iter().enumerate() {
                let hit = z[k] <= 0.0 && (beta[idx] <= 1e-15 * (1.0 + beta[idx].abs()) || alpha * (z[k] - beta[idx]) + beta[idx] <= 0.0);
                if hit || beta[idx] <= 0.0 {
                    beta[idx] = 0.0;
                    in_passive[idx] = false;
                } else {
                    kept.push(idx);
                }
            }
            if kept.len() == passive.len() {
                // guard against a stalled step: drop the binding index explicitly
                let (k, _) = passive
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| z[*k] <= 0.0)
                    .map(|(k, &idx)| (k, beta[idx]))
                    .fold((usize::MAX, f64::INFINITY), |a, c| if c.1 < a.1 { c } else { a });
                let idx = passive[k];
                beta[idx] = 0.0;
                in_passive[idx] = false;
                kept.retain(|&i| i != idx);
            }
            passive = kept;
            qr = rebuild(x, &passive)?;
            changes_since_refresh = 0;
            z = qr.solve_least_squares(y)?;
        }
        if changes_since_refresh >= QR_REFRESH {
            qr = rebuild(x, &passive)?;
            changes_since_refresh = 0;
            z = qr.solve_least_squares(y)?;
            if z.iter().any(|&v| v <= 0.0) {
                continue;
            }
        }
        for (k, &idx) in passive.iter().enumerate() {
            beta[idx] = z[k];
        }
        trace.push(objective(x, y, &beta));
    }

    // final polish on a fresh factorization
    if !passive.is_empty() {
        let fresh = rebuild(x, &passive)?;
        let z = fresh.solve_least_squares(y)?;
        if z.iter().all(|&v| v > 0.0) {
            for (k, &idx) in passive.iter().enumerate() {
                beta[idx] = z[k];
            }
        }
    }
    let grad = gradient(x, y, &beta);
    let mut active_set: Vec<usize> = (0..p).filter(|&j| beta[j] > 0.0).collect();
    active_set.sort_unstable();
    Ok(NnlsSolution {
        objective: objective(x, y, &beta),
        kkt_max_violation: kkt_violation(&grad, &beta),
        active_set,
        beta,
        iterations,
        objective_trace: trace,
    })
}

fn rebuild(x: &DenseMatrix, cols: &[usize]) -> Result<IncrementalQr> {
    let mut qr = IncrementalQr::new(x.rows());
    for &j in cols {
        if qr.append(x.col(j))?.is_none() {
            return Err(Error::RankDeficient(format!(
                "column {j} became dependent on the passive set"
            )));
        }
    }
    Ok(qr)
}

/// `(1/n) Xᵀ(y − Xβ)`
fn gradient(x: &DenseMatrix, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let fit = x.matvec(beta);
    let r: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    let nf = x.rows() as f64;
    x.tmatvec(&r).into_iter().map(|g| g / nf).collect()
}

fn objective(x: &DenseMatrix, y: &[f64], beta: &[f64]) -> f64 {
    let fit = x.matvec(beta);
    let r: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    dot(&r, &r) / x.rows() as f64
}

fn kkt_violation(grad: &[f64], beta: &[f64]) -> f64 {
    grad.iter()
        .zip(beta)
        .map(|(g, b)| if *b > 0.0 { g.abs() } else { g.max(0.0) })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationClass {
    /// Nonzero gradient on a positive coordinate.
    Active,
    /// Positive gradient on a zero coordinate.
    Inactive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KktReport {
    pub is_optimal: bool,
    pub max_violation: f64,
    pub worst_index: Option<usize>,
    pub worst_class: Option<ViolationClass>,
    pub active_set: Vec<usize>,
}

/// Checks `(1/n)X_jᵀ(y − Xβ) = 0` on `{β_j > 0}` and `≤ 0` elsewhere, both
/// within `tol`.
pub fn kkt_check(instance: &RegressionInstance, beta: &[f64], tol: f64) -> Result<KktReport> {
    if beta.len() != instance.p() {
        return mismatch("beta length differs from column count");
    }
    if beta.iter().any(|b| *b < 0.0 || !b.is_finite()) {
        return invalid("beta must be finite and non-negative");
    }
    let grad = gradient(&instance.x, &instance.y, beta);
    let mut worst = (0.0, None, None);
    for (j, (g, b)) in grad.iter().zip(beta).enumerate() {
        let (v, class) = if *b > 0.0 {
            (g.abs(), ViolationClass::Active)
        } else {
            (g.max(0.0), ViolationClass::Inactive)
        };
        if v > worst.0 {
            worst = (v, Some(j), Some(class));
        }
    }
    Ok(KktReport {
        is_optimal: worst.0 <= tol,
        max_violation: worst.0,
        worst_index: worst.1,
        worst_class: worst.2,
        active_set: (0..beta.len()).filter(|&j| beta[j] > 0.0).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct DecoupledProblems {
    pub support: Vec<usize>,
    pub complement: Vec<usize>,
    /// `Π_S^⊥ X_{S^c}`
    pub z: DenseMatrix,
    /// `Π_S^⊥ y`
    pub xi: Vec<f64>,
    /// Off-support NNLS solution, indexed like `complement`.
    pub beta_p1: Vec<f64>,
    /// On-support least-squares coefficients, indexed like `support`.
    pub beta_p2: Vec<f64>,
    pub p2_all_positive: bool,
    /// Both parts assembled into a length-p vector.
    pub composite: Vec<f64>,
}

/// Splits the NNLS problem along `S`: an NNLS problem for the off-support
/// coefficients on the projected design, then an unconstrained least-squares
/// fit on `X_S`. When the latter is strictly positive the assembled vector
/// solves the full problem.
pub fn decouple(instance: &RegressionInstance, support: &[usize]) -> Result<DecoupledProblems> {
    let p = instance.p();
    let s_set = checked_index_set(support, p)?;
    let complement: Vec<usize> = (0..p).filter(|j| !s_set.contains(j)).collect();
    let mut qr = IncrementalQr::new(instance.n());
    for &j in support {
        if qr.append(instance.x.col(j))?.is_none() {
            return Err(Error::RankDeficient(format!("X_S: column {j} is dependent")));
        }
    }
    let mut z = instance.x.select_columns(&complement);
    for k in 0..complement.len() {
        let r = qr.project_residual(z.col(k))?;
        z.col_mut(k).copy_from_slice(&r);
    }
    let xi = qr.project_residual(&instance.y)?;
    let beta_p1 = if complement.is_empty() {
        Vec::new()
    } else {
        nnls_solve_raw(&z, &xi, NnlsOptions::default())?.beta
    };
    let off_fit = instance.x.select_columns(&complement).matvec(&beta_p1);
    let target: Vec<f64> = instance.y.iter().zip(&off_fit).map(|(a, b)| a - b).collect();
    let beta_p2 = qr.solve_least_squares(&target)?;
    let p2_all_positive = beta_p2.iter().all(|&v| v > P2_POSITIVE_TOL);
    let mut composite = vec![0.0; p];
    for (k, &j) in support.iter().enumerate() {
        composite[j] = beta_p2[k];
    }
    for (k, &j) in complement.iter().enumerate() {
        composite[j] = beta_p1[k];
    }
    Ok(DecoupledProblems {
        support: support.to_vec(),
        complement,
        z,
        xi,
        beta_p1,
        beta_p2,
        p2_all_positive,
        composite,
    })
}

pub(crate) fn checked_index_set(idx: &[usize], p: usize) -> Result<HashSet<usize>> {
    let mut set = HashSet::with_capacity(idx.len());
    for &j in idx {
        if j >= p {
            return invalid(format!("index {j} out of range for p = {p}"));
        }
        if !set.insert(j) {
            return invalid(format!("index {j} repeated"));
        }
    }
    Ok(set)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub glp_sampled: bool,
    pub residual_positive: bool,
    pub active_card_ok: bool,
    pub unique_certified: bool,
}

/// Sufficient conditions for the NNLS solution to be unique: columns in
/// general linear position together with either `p ≤ n` or a positive
/// residual.
pub fn uniqueness_report(
    instance: &RegressionInstance,
    solution: &NnlsSolution,
    seed: u64,
) -> Result<UniquenessReport> {
    let (n, p) = (instance.n(), instance.p());
    let glp_sampled = glp_check(&instance.x, 200, seed)?;
    let residual_positive = solution.objective > 1e-12;
    let active_card_ok = solution.active_set.len() <= (n - 1).min(p);
    Ok(UniquenessReport {
        glp_sampled,
        residual_positive,
        active_card_ok,
        unique_certified: glp_sampled && (p <= n || residual_positive),
    })
}

fn binomial_at_most(p: usize, m: usize, cap: u128) -> Option<u128> {
    let m = m.min(p - m);
    let mut c: u128 = 1;
    for i in 0..m {
        c = c * (p - i) as u128 / (i + 1) as u128;
        if c > cap {
            return None;
        }
    }
    Some(c)
}

fn full_rank(x: &DenseMatrix, cols: &[usize]) -> Result<bool> {
    let mut qr = IncrementalQr::new(x.rows());
    for &j in cols {
        if qr.append(x.col(j))?.is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// General-linear-position check: every `min(n, p)`-subset of columns has full
/// rank. Exhaustive when there are at most 5000 subsets, otherwise `trials`
/// random subsets are tested.
pub fn glp_check(x: &DenseMatrix, trials: usize, seed: u64) -> Result<bool> {
    let (n, p) = (x.rows(), x.cols());
    let m = n.min(p);
    if m == 0 {
        return Ok(true);
    }
    if binomial_at_most(p, m, 5000).is_some() {
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            if !full_rank(x, &idx)? {
                return Ok(false);
            }
            // next combination in lexicographic order
            let mut i = m;
            while i > 0 && idx[i - 1] == p - m + i - 1 {
                i -= 1;
            }
            if i == 0 {
                return Ok(true);
            }
            idx[i - 1] += 1;
            for k in i..m {
                idx[k] = idx[k - 1] + 1;
            }
        }
    }
    let mut rng = master_rng(seed);
    for _ in 0..trials {
        let mut idx = sample(&mut rng, p, m).into_vec();
        idx.sort_unstable();
        if !full_rank(x, &idx)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug)]
pub struct SelfRegDecomposition {
    pub w: Vec<f64>,
    /// `Xᵀw/√n`
    pub h: Vec<f64>,
    /// Diagonal of `D`, entries `τ/h_j`.
    pub d: Vec<f64>,
    /// `(I − wwᵀ) X D`
    pub x_tilde: DenseMatrix,
    pub tau: f64,
    /// Largest relative residual of the objective identity over the random checks.
    pub identity_residual: f64,
}

/// Decomposes the design along a separating direction `w` and verifies the
/// objective identity
/// `(1/n)‖ε − Xβ‖² = (1/n)‖ε − X̄β‖² + (hᵀβ)² − (2εᵀw/√n)(hᵀβ)` with
/// `X̄ = (I − wwᵀ)X` on 20 random pairs `(ε, β ⪰ 0)`.
pub fn self_reg_decompose(
    instance: &RegressionInstance,
    w: &[f64],
    tau: f64,
    seed: u64,
) -> Result<SelfRegDecomposition> {
    let (n, p) = (instance.n(), instance.p());
    if w.len() != n {
        return mismatch("w length differs from row count");
    }
    if (norm2(w) - 1.0).abs() > 1e-10 {
        return invalid("w must have unit norm");
    }
    if !(tau > 0.0) {
        return invalid("tau must be positive");
    }
    let sqrt_n = (n as f64).sqrt();
    let h: Vec<f64> = instance.x.tmatvec(w).into_iter().map(|v| v / sqrt_n).collect();
    let h_min = h.iter().cloned().fold(f64::INFINITY, f64::min);
    if h_min < tau - 1e-8 {
        return Err(Error::Precondition(format!(
            "margin violated: min_j h_j = {h_min:.6e} < tau = {tau:.6e}"
        )));
    }
    let d: Vec<f64> = h.iter().map(|hj| (tau / hj).min(1.0)).collect();
    let mut x_bar = instance.x.clone();
    for j in 0..p {
        let c = dot(x_bar.col(j), w);
        for (v, wi) in x_bar.col_mut(j).iter_mut().zip(w) {
            *v -= c * wi;
        }
    }
    let mut x_tilde = x_bar.clone();
    for j in 0..p {
        for v in x_tilde.col_mut(j) {
            *v *= d[j];
        }
    }
    let mut rng = master_rng(seed);
    let mut worst = 0.0f64;
    let nf = n as f64;
    for _ in 0..20 {
        let eps = normal_vec(&mut rng, n);
        let beta: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let sq = |m: &DenseMatrix| {
            let f = m.matvec(&beta);
            let r: Vec<f64> = eps.iter().zip(&f).map(|(a, b)| a - b).collect();
            dot(&r, &r) / nf
        };
        let lhs = sq(&instance.x);
        let hb = dot(&h, &beta);
        let rhs = sq(&x_bar) + hb * hb - 2.0 * dot(&eps, w) / sqrt_n * hb;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    if worst > 1e-9 {
        return Err(Error::CrossCheck(format!(
            "objective identity residual {worst:.3e} exceeds 1e-9"
        )));
    }
    Ok(SelfRegDecomposition {
        w: w.to_vec(),
        h,
        d,
        x_tilde,
        tau,
        identity_residual: worst,
    })
}
