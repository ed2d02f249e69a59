//! Support recovery by thresholded NNLS and the comparator estimators:
//! non-negative lasso (coordinate descent and exact homotopy path), OMP and
//! ridge regression.

use serde::{Deserialize, Serialize};

use crate::densela::{dot, norm2, spd_solve, DenseMatrix, IncrementalQr};
use crate::error::{invalid, mismatch, Error, Result};
use crate::model::RegressionInstance;
use crate::nnls::{nnls_solve, nnls_solve_raw, NnlsOptions, NnlsSolution};

/// Projection energies at or below this fraction of `‖y‖₂` are treated as
/// rounding noise by the model-size rule.
pub const DELTA_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdedEstimate {
    pub base: NnlsSolution,
    /// Column indices in decreasing order of the base coefficients, ties by index.
    pub order: Vec<usize>,
    pub s_hat: usize,
    pub threshold: Option<f64>,
    pub estimated_support: Vec<usize>,
    /// Coefficients on the estimated support, zero elsewhere.
    pub refit: Vec<f64>,
    /// Projection energies `δ(k)` when the model size was chosen from data.
    pub deltas: Vec<f64>,
    pub sigma_hat: Option<f64>,
}

impl ThresholdedEstimate {
    /// 1-based rank `r_j` of every column.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.order.len()];
        for (k, &j) in self.order.iter().enumerate() {
            r[j] = k + 1;
        }
        r
    }
}

/// Columns sorted by decreasing coefficient, ties broken by index.
pub fn rank_order(beta: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..beta.len()).collect();
    idx.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]).then(a.cmp(&b)));
    idx
}

/// Zeroes every coefficient at or below `t`.
pub fn threshold_hard(solution: &NnlsSolution, t: f64) -> Result<ThresholdedEstimate> {
    if !(t >= 0.0) {
        return invalid("threshold must be non-negative");
    }
    let refit: Vec<f64> = solution.beta.iter().map(|&b| if b > t { b } else { 0.0 }).collect();
    let estimated_support: Vec<usize> = (0..refit.len()).filter(|&j| refit[j] > 0.0).collect();
    Ok(ThresholdedEstimate {
        base: solution.clone(),
        order: rank_order(&solution.beta),
        s_hat: estimated_support.len(),
        threshold: Some(t),
        estimated_support,
        refit,
        deltas: Vec::new(),
        sigma_hat: None,
    })
}

/// Model size from the incremental projection energies
/// `δ(k) = ‖(Π(k+1) − Π(k))y‖₂` along the ranking: the largest `k` with
/// `δ(k) ≥ (1+M) σ̂ √(2 log p)`, plus one, or zero when no `k` qualifies.
pub fn select_s_hat(instance: &RegressionInstance, order: &[usize], sigma_hat: f64, m: f64) -> Result<(usize, Vec<f64>)> {
    let p = instance.p();
    if order.len() != p {
        return mismatch("ranking length differs from column count");
    }
    let mut seen = vec![false; p];
    for &j in order {
        if j >= p || seen[j] {
            return invalid("ranking is not a permutation");
        }
        seen[j] = true;
    }
    if !(sigma_hat >= 0.0) || !(m >= 0.0) {
        return invalid("sigma and M must be non-negative");
    }
    let y = &instance.y;
    let floor = DELTA_FLOOR * norm2(y);
    let thresh = (1.0 + m) * sigma_hat * (2.0 * (p as f64).ln()).sqrt();
    let mut qr = IncrementalQr::new(instance.n());
    let mut deltas = Vec::with_capacity(p);
    let mut s_hat = 0;
    for (k, &j) in order.iter().enumerate() {
        let d = if qr.basis_dim() < instance.n() {
            qr.append(instance.x.col(j))?.map_or(0.0, |u| dot(&u, y).abs())
        } else {
            0.0
        };
        if d >= thresh && d > floor {
            s_hat = k + 1;
        }
        deltas.push(d);
    }
    Ok((s_hat, deltas))
}

/// `σ̂ = ((1/n)‖y − Xβ̂‖₂²)^{1/2}`
pub fn sigma_naive(instance: &RegressionInstance, solution: &NnlsSolution) -> f64 {
    instance.objective(&solution.beta).max(0.0).sqrt()
}

/// NNLS restricted to the columns in `support`, embedded in length `p`.
pub fn refit_on_support(instance: &RegressionInstance, support: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; instance.p()];
    if support.is_empty() {
        return Ok(out);
    }
    let xs = instance.x.select_columns(support);
    let sol = nnls_solve_raw(&xs, &instance.y, NnlsOptions::default())?;
    for (k, &j) in support.iter().enumerate() {
        out[j] = sol.beta[k];
    }
    Ok(out)
}

/// NNLS, rank, choose `ŝ` from data, keep the top `ŝ` columns and refit.
pub fn recover_support(instance: &RegressionInstance, sigma: Option<f64>, m: f64) -> Result<ThresholdedEstimate> {
    let base = nnls_solve(instance, NnlsOptions::default())?;
    let order = rank_order(&base.beta);
    let sigma_hat = match sigma {
        Some(s) => s,
        None => sigma_naive(instance, &base),
    };
    let (s_hat, deltas) = select_s_hat(instance, &order, sigma_hat, m)?;
    let mut estimated_support: Vec<usize> = order[..s_hat].to_vec();
    estimated_support.sort_unstable();
    let refit = refit_on_support(instance, &estimated_support)?;
    Ok(ThresholdedEstimate {
        base,
        order,
        s_hat,
        threshold: None,
        estimated_support,
        refit,
        deltas,
        sigma_hat: Some(sigma_hat),
    })
}

/// Largest violation of the non-negative lasso optimality conditions
/// `(2/n)X_jᵀ(y − Xβ) = λ` on `{β_j > 0}` and `≤ λ` elsewhere.
pub fn nn_lasso_kkt(instance: &RegressionInstance, beta: &[f64], lambda: f64) -> f64 {
    let r = instance.residual(beta);
    let nf = instance.n() as f64;
    instance
        .x
        .tmatvec(&r)
        .iter()
        .zip(beta)
        .map(|(g, b)| {
            let g = 2.0 * g / nf;
            if *b > 0.0 {
                (g - lambda).abs()
            } else {
                (g - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn gram_kkt(c: &[f64], beta: &[f64], s_beta: &[f64], lambda: f64) -> f64 {
    c.iter()
        .zip(s_beta)
        .zip(beta)
        .map(|((cj, sb), b)| {
            let g = 2.0 * (cj - sb);
            if *b > 0.0 {
                (g - lambda).abs()
            } else {
                (g - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// `min_{β⪰0} (1/n)‖y − Xβ‖₂² + λ 1ᵀβ`, solved as the non-negative quadratic
/// program `min βᵀΣβ − 2(c − λ/2)ᵀβ` by an active-set method.
pub fn nn_lasso(instance: &RegressionInstance, lambda: f64, tol: f64) -> Result<Vec<f64>> {
    let sigma = instance.gram();
    let nf = instance.n() as f64;
    let c: Vec<f64> = instance.x.tmatvec(&instance.y).into_iter().map(|v| v / nf).collect();
    nn_lasso_gram(&sigma, &c, lambda, tol)
}

/// Same as [`nn_lasso`] given `Σ = XᵀX/n` and `c = Xᵀy/n`. `tol` bounds the
/// returned optimality violation.
pub fn nn_lasso_gram(sigma: &DenseMatrix, c: &[f64], lambda: f64, tol: f64) -> Result<Vec<f64>> {
    let p = c.len();
    if sigma.rows() != p || sigma.cols() != p {
        return mismatch("Gram matrix and correlations differ in size");
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid("lambda must be finite and non-negative");
    }
    let ct: Vec<f64> = c.iter().map(|v| v - 0.5 * lambda).collect();
    let mut beta = vec![0.0; p];
    let mut active: Vec<usize> = Vec::new();
    let mut blocked = vec![false; p];
    let max_iter = 10 * (p + 1);
    let mut iterations = 0;
    loop {
        let s_beta = sigma.matvec(&beta);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if beta[j] > 0.0 || active.contains(&j) || blocked[j] {
                continue;
            }
            let w = ct[j] - s_beta[j];
            if w > 0.25 * tol && best.is_none_or(|(_, bw)| w > bw) {
                best = Some((j, w));
            }
        }
        let Some((entering, _)) = best else {
            let viol = gram_kkt(c, &beta, &s_beta, lambda);
            if viol <= tol {
                return Ok(beta);
            }
            return Err(Error::NonConvergence {
                solver: "nn_lasso",
                iterations,
                gap: viol,
                best: beta,
            });
        };
        iterations += 1;
        if iterations > max_iter {
            let viol = gram_kkt(c, &beta, &s_beta, lambda);
            return Err(Error::NonConvergence {
                solver: "nn_lasso",
                iterations,
                gap: viol,
                best: beta,
            });
        }
        active.push(entering);
        let mut added = true;
        loop {
            let s_aa = sigma.submatrix(&active, &active);
            let rhs: Vec<f64> = active.iter().map(|&j| ct[j]).collect();
            let z = match spd_solve(&s_aa, &rhs) {
                Ok(z) => z,
                Err(_) if added => {
                    active.pop();
                    blocked[entering] = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            if z.iter().all(|&v| v > 0.0) {
                for (k, &j) in active.iter().enumerate() {
                    beta[j] = z[k];
                }
                if added {
                    blocked.iter_mut().for_each(|b| *b = false);
                }
                break;
            }
            if added && z[active.len() - 1] <= 0.0 {
                active.pop();
                blocked[entering] = true;
                break;
            }
            added = false;
            let mut alpha = 1.0f64;
            for (k, &j) in active.iter().enumerate() {
                if z[k] <= 0.0 {
                    alpha = alpha.min(beta[j] / (beta[j] - z[k]));
                }
            }
            for (k, &j) in active.iter().enumerate() {
                beta[j] += alpha * (z[k] - beta[j]);
            }
            for (k, &j) in active.iter().enumerate() {
                if z[k] <= 0.0 && beta[j] <= 1e-14 * (1.0 + z[k].abs()) {
                    beta[j] = 0.0;
                }
            }
            active.retain(|&j| beta[j] > 0.0);
            if active.is_empty() {
                break;
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Breakpoint {
    pub lambda: f64,
    pub beta: Vec<f64>,
    /// Active set on the segment that starts at this breakpoint.
    pub active_set: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LassoPath {
    pub breakpoints: Vec<Breakpoint>,
    /// `2σ√(2 log p / n)` when the noise level is known.
    pub lambda0: Option<f64>,
    /// `2‖Xᵀε/n‖∞` when the noise vector is known.
    pub lambda_hat_emp: Option<f64>,
}

impl LassoPath {
    pub fn lambda_max(&self) -> f64 {
        self.breakpoints[0].lambda
    }

    pub fn lambda_min(&self) -> f64 {
        self.breakpoints.last().expect("non-empty path").lambda
    }

    /// Solution at `λ` by linear interpolation between breakpoints; zero above
    /// `λ_max`. Fails below the end of the path.
    pub fn beta_at(&self, lambda: f64) -> Result<Vec<f64>> {
        let bps = &self.breakpoints;
        if lambda >= bps[0].lambda {
            return Ok(vec![0.0; bps[0].beta.len()]);
        }
        for w in bps.windows(2) {
            let (hi, lo) = (&w[0], &w[1]);
            if lambda <= hi.lambda && lambda >= lo.lambda {
                let t = if hi.lambda > lo.lambda { (hi.lambda - lambda) / (hi.lambda - lo.lambda) } else { 1.0 };
                return Ok(hi
                    .beta
                    .iter()
                    .zip(&lo.beta)
                    .map(|(a, b)| (a + t * (b - a)).max(0.0))
                    .collect());
            }
        }
        invalid(format!("lambda {lambda} lies below the end of the path {}", self.lambda_min()))
    }
}

/// Lower-triangular factor of `Σ_AA`, grown one row at a time.
struct GrowingCholesky {
    rows: Vec<Vec<f64>>,
}

impl GrowingCholesky {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut z = b.to_vec();
        for i in 0..self.rows.len() {
            let row = &self.rows[i];
            let s: f64 = (0..i).map(|k| row[k] * z[k]).sum();
            z[i] = (z[i] - s) / row[i];
        }
        z
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.forward(b);
        for i in (0..self.rows.len()).rev() {
            let s: f64 = ((i + 1)..self.rows.len()).map(|k| self.rows[k][i] * x[k]).sum();
            x[i] = (x[i] - s) / self.rows[i][i];
        }
        x
    }

    /// Adds a row for a new column with cross terms `cross` and diagonal `diag`;
    /// false when the new pivot is not positive.
    fn push(&mut self, cross: &[f64], diag: f64) -> bool {
        let w = self.forward(cross);
        let d = diag - dot(&w, &w);
        if !(d > 1e-10 * diag.max(1e-300)) {
            return false;
        }
        let mut row = w;
        row.push(d.sqrt());
        self.rows.push(row);
        true
    }
}

/// Exact non-negative lasso path from `λ_max = max_j (2/n)X_jᵀy` down to
/// `lambda_min`, tracking entries and exits of the active set.
pub fn nn_lasso_path(instance: &RegressionInstance, lambda_min: f64) -> Result<LassoPath> {
    if !(lambda_min > 0.0) {
        return invalid("lambda_min must be positive");
    }
    let (n, p) = (instance.n(), instance.p());
    let nf = n as f64;
    let sigma = instance.gram();
    let c: Vec<f64> = instance.x.tmatvec(&instance.y).into_iter().map(|v| v / nf).collect();
    let (lambda0, lambda_hat_emp) = match &instance.truth {
        Some(t) => (
            Some(2.0 * t.sigma * (2.0 * (p as f64).ln() / nf).sqrt()),
            t.epsilon.as_ref().map(|e| {
                2.0 * instance.x.tmatvec(e).iter().fold(0.0f64, |m, v| m.max(v.abs())) / nf
            }),
        ),
        None => (None, None),
    };
    let cap = 20 * (n + p);

    let (jmax, cmax) = c
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
    let lambda_max = 2.0 * cmax;
    let mut breakpoints = Vec::new();
    if lambda_max <= lambda_min {
        breakpoints.push(Breakpoint {
            lambda: lambda_max.max(lambda_min),
            beta: vec![0.0; p],
            active_set: Vec::new(),
        });
        if lambda_max < lambda_min {
            breakpoints.push(Breakpoint {
                lambda: lambda_min,
                beta: vec![0.0; p],
                active_set: Vec::new(),
            });
        }
        return Ok(LassoPath {
            breakpoints,
            lambda0,
            lambda_hat_emp,
        });
    }

    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; p];
    let mut chol = GrowingCholesky::new();
    let mut blocked = vec![false; p];
    let mut lam = lambda_max;
    let mut entering = Some(jmax);
    let mut just_dropped: Option<usize> = None;
    let mut beta = vec![0.0; p];

    loop {
        if let Some(j) = entering.take() {
            let cross: Vec<f64> = active.iter().map(|&k| sigma.get(k, j)).collect();
            if chol.push(&cross, sigma.get(j, j)) {
                active.push(j);
                in_active[j] = true;
            } else {
                blocked[j] = true;
            }
        }
        breakpoints.push(Breakpoint {
            lambda: lam,
            beta: beta.clone(),
            active_set: sorted(&active),
        });
        if breakpoints.len() > cap {
            return Err(Error::RunawayPath(cap));
        }

        // β_A(λ) = a − (λ/2) d
        let c_a: Vec<f64> = active.iter().map(|&j| c[j]).collect();
        let a = chol.solve(&c_a);
        let d = chol.solve(&vec![1.0; active.len()]);
        let mut next = (lambda_min, None::<(usize, bool)>);
        let floor = lam * (1.0 - 1e-12);
        for (k, &j) in active.iter().enumerate() {
            if d[k] < 0.0 {
                let l = 2.0 * a[k] / d[k];
                if l < floor && l > next.0 {
                    next = (l, Some((j, false)));
                }
            }
        }
        for j in 0..p {
            if in_active[j] || blocked[j] || just_dropped == Some(j) {
                continue;
            }
            let sa: f64 = active.iter().zip(&a).map(|(&k, ak)| sigma.get(j, k) * ak).sum();
            let sd: f64 = active.iter().zip(&d).map(|(&k, dk)| sigma.get(j, k) * dk).sum();
            let (u, v) = (c[j] - sa, sd);
            if 1.0 - v > 1e-14 {
                let l = 2.0 * u / (1.0 - v);
                if l < floor && l > next.0 {
                    next = (l, Some((j, true)));
                }
            }
        }
        let (l_next, event) = next;
        for (k, &j) in active.iter().enumerate() {
            beta[j] = (a[k] - 0.5 * l_next * d[k]).max(0.0);
        }
        lam = l_next;
        match event {
            None => {
                breakpoints.push(Breakpoint {
                    lambda: lam,
                    beta: beta.clone(),
                    active_set: sorted(&active),
                });
                break;
            }
            Some((j, true)) => {
                entering = Some(j);
                just_dropped = None;
            }
            Some((j, false)) => {
                beta[j] = 0.0;
                in_active[j] = false;
                active.retain(|&k| k != j);
                chol = GrowingCholesky::new();
                for (i, &k) in active.iter().enumerate() {
                    let cross: Vec<f64> = active[..i].iter().map(|&l| sigma.get(l, k)).collect();
                    if !chol.push(&cross, sigma.get(k, k)) {
                        return Err(Error::RankDeficient("active Gram lost rank after removal".into()));
                    }
                }
                blocked.iter_mut().for_each(|b| *b = false);
                just_dropped = Some(j);
            }
        }
    }
    Ok(LassoPath {
        breakpoints,
        lambda0,
        lambda_hat_emp,
    })
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OmpResult {
    pub support: Vec<usize>,
    pub beta: Vec<f64>,
    pub early_stop: bool,
}

/// Orthogonal matching pursuit: `steps` greedy selections of the column most
/// correlated with the residual, each followed by a least-squares refit.
pub fn omp(instance: &RegressionInstance, steps: usize) -> Result<OmpResult> {
    let (n, p) = (instance.n(), instance.p());
    if steps > n.min(p) {
        return invalid(format!("steps must not exceed min(n, p) = {}", n.min(p)));
    }
    let mut qr = IncrementalQr::new(n);
    let mut chosen: Vec<usize> = Vec::new();
    let mut taken = vec![false; p];
    let mut r = instance.y.clone();
    let scale = norm2(&instance.y);
    let mut early_stop = false;
    for _ in 0..steps {
        let corr = instance.x.tmatvec(&r);
        let mut best = (usize::MAX, -1.0);
        for (j, v) in corr.iter().enumerate() {
            if !taken[j] && v.abs() > best.1 {
                best = (j, v.abs());
            }
        }
        if best.0 == usize::MAX || best.1 <= 1e-12 * scale * (n as f64).sqrt() {
            early_stop = true;
            break;
        }
        let j = best.0;
        if qr.append(instance.x.col(j))?.is_none() {
            early_stop = true;
            break;
        }
        taken[j] = true;
        chosen.push(j);
        r = qr.project_residual(&instance.y)?;
    }
    let coef = qr.solve_least_squares(&instance.y)?;
    let mut beta = vec![0.0; p];
    for (k, &j) in chosen.iter().enumerate() {
        beta[j] = coef[k];
    }
    Ok(OmpResult {
        support: sorted(&chosen),
        beta,
        early_stop,
    })
}

/// Ridge regression `(Σ + γI)⁻¹ Xᵀy / n`; solved in the dual when `n < p`.
pub fn ridge(instance: &RegressionInstance, gamma: f64) -> Result<Vec<f64>> {
    ridge_raw(&instance.x, &instance.y, gamma)
}

pub fn ridge_raw(x: &DenseMatrix, y: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Precondition("ridge needs a finite gamma > 0".into()));
    }
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return mismatch("response length differs from row count");
    }
    let nf = n as f64;
    if n >= p {
        let mut a = x.gram(1.0 / nf);
        for j in 0..p {
            a.set(j, j, a.get(j, j) + gamma);
        }
        let c: Vec<f64> = x.tmatvec(y).into_iter().map(|v| v / nf).collect();
        spd_solve(&a, &c)
    } else {
        let xt = x.transpose();
        let mut k = xt.gram(1.0 / nf);
        for i in 0..n {
            k.set(i, i, k.get(i, i) + gamma);
        }
        let alpha = spd_solve(&k, y)?;
        Ok(x.tmatvec(&alpha).into_iter().map(|v| v / nf).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, substream};

    fn orthonormal_instance(y: Vec<f64>, p: usize) -> RegressionInstance {
        let n = y.len();
        let s = (n as f64).sqrt();
        let x = DenseMatrix::from_fn(n, p, |i, j| if i == j { s } else { 0.0 });
        RegressionInstance::from_normalized(x, y, None).unwrap()
    }

    fn gaussian(n: usize, p: usize, seed: u64) -> RegressionInstance {
        let mut rng = substream(seed, 9, 0);
        let x = DenseMatrix::from_col_major(n, p, normal_vec(&mut rng, n * p)).unwrap();
        let y = normal_vec(&mut rng, n);
        RegressionInstance::new(x, y, None).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let sol = NnlsSolution {
            beta: vec![0.5, 0.2, 0.0],
            active_set: vec![0, 1],
            objective: 0.0,
            kkt_max_violation: 0.0,
            iterations: 0,
            objective_trace: vec![],
        };
        assert_eq!(threshold_hard(&sol, 0.3).unwrap().estimated_support, vec![0]);
        assert_eq!(threshold_hard(&sol, 0.0).unwrap().estimated_support, vec![0, 1]);
        assert!(threshold_hard(&sol, 0.5).unwrap().estimated_support.is_empty());
    }

    #[test]
    fn rank_order_ties_by_index() {
        assert_eq!(rank_order(&[0.0, 1.0, 0.0, 1.0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn s_hat_orthonormal_deltas() {
        let y = vec![3.0, -1.0, 0.5, 0.0];
        let inst = orthonormal_instance(y.clone(), 3);
        let (_, deltas) = select_s_hat(&inst, &[2, 0, 1], 0.1, 1.0).unwrap();
        let expect = [0.5, 3.0, 1.0];
        for (d, e) in deltas.iter().zip(expect) {
            assert!((d - e).abs() < 1e-12);
        }
    }

    #[test]
    fn s_hat_zero_response() {
        let inst = orthonormal_instance(vec![0.0; 4], 3);
        let (s, d) = select_s_hat(&inst, &[0, 1, 2], 0.0, 1.0).unwrap();
        assert_eq!(s, 0);
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noiseless_recovery() {
        let inst = gaussian(40, 80, 4);
        let mut b = vec![0.0; 80];
        b[5] = 1.0;
        b[17] = 0.7;
        b[60] = 1.3;
        let inst = inst.with_response(inst.x.matvec(&b)).unwrap();
        let est = recover_support(&inst, None, 1.0).unwrap();
        assert_eq!(est.estimated_support, vec![5, 17, 60]);
        assert_eq!(est.s_hat, 3);
    }

    #[test]
    fn nn_lasso_orthonormal() {
        let y = vec![3.0, -1.0, 0.5, 2.0];
        let inst = orthonormal_instance(y.clone(), 4);
        let lam = 0.6;
        let b = nn_lasso(&inst, lam, 1e-12).unwrap();
        let xty = inst.x.tmatvec(&y);
        for j in 0..4 {
            let e = (xty[j] / 4.0 - lam / 2.0).max(0.0);
            assert!((b[j] - e).abs() < 1e-12, "{j}: {} vs {e}", b[j]);
        }
    }

    #[test]
    fn nn_lasso_above_lambda_max_is_zero() {
        let inst = gaussian(20, 30, 1);
        let lmax = inst.x.tmatvec(&inst.y).iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) * 2.0 / 20.0;
        assert!(nn_lasso(&inst, lmax * 1.01, 1e-10).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn path_matches_coordinate_descent() {
        for seed in 0..5 {
            let inst = gaussian(30, 50, seed);
            let path = nn_lasso_path(&inst, 0.05).unwrap();
            for w in path.breakpoints.windows(2) {
                assert!(w[0].lambda > w[1].lambda);
            }
            for bp in &path.breakpoints {
                assert!(nn_lasso_kkt(&inst, &bp.beta, bp.lambda) <= 1e-8, "kkt at {}", bp.lambda);
            }
            for k in 1..10 {
                let lam = path.lambda_max() * (k as f64 / 10.0);
                if lam < path.lambda_min() {
                    continue;
                }
                let a = path.beta_at(lam).unwrap();
                let b = nn_lasso(&inst, lam, 1e-11).unwrap();
                let diff = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-7, "seed {seed} lam {lam}: {diff}");
            }
        }
    }

    #[test]
    fn single_column_path() {
        let x = DenseMatrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let inst = RegressionInstance::new(x, vec![2.0, 1.0], None).unwrap();
        let path = nn_lasso_path(&inst, 0.1).unwrap();
        assert_eq!(path.breakpoints.len(), 2);
        let c = inst.x.tmatvec(&inst.y)[0] / 2.0;
        assert!((path.lambda_max() - 2.0 * c).abs() < 1e-14);
        assert!((path.breakpoints[1].beta[0] - (c - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn omp_examples() {
        let inst = gaussian(20, 30, 7);
        let y = inst.x.col(0).to_vec();
        let inst = inst.with_response(y).unwrap();
        let r = omp(&inst, 1).unwrap();
        assert_eq!(r.support, vec![0]);
        assert!((r.beta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_examples() {
        let y = vec![3.0, -1.0, 0.5];
        let inst = orthonormal_instance(y.clone(), 3);
        let b = ridge(&inst, 0.5).unwrap();
        let xty = inst.x.tmatvec(&y);
        for j in 0..3 {
            assert!((b[j] - xty[j] / 3.0 / 1.5).abs() < 1e-12);
        }
        assert!(matches!(ridge(&inst, 0.0), Err(Error::Precondition(_))));
        // primal and dual forms agree
        let inst = gaussian(10, 25, 3);
        let dual = ridge(&inst, 0.3).unwrap();
        let mut a = inst.gram();
        for j in 0..25 {
            a.set(j, j, a.get(j, j) + 0.3);
        }
        let c: Vec<f64> = inst.x.tmatvec(&inst.y).into_iter().map(|v| v / 10.0).collect();
        let primal = spd_solve(&a, &c).unwrap();
        for (u, v) in dual.iter().zip(&primal) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
