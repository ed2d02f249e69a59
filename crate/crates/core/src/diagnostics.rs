//! Design constants on a support and the error bounds built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::densela::{dot, norm1, sym_eig_extremes, Cholesky, DenseMatrix};
use crate::error::{invalid, mismatch, Error, Result};
use crate::nnls::checked_index_set;
use crate::rng::master_rng;
use crate::simplex::{tau0, tau_s_projected};

/// Default deviation parameter in `λ_M`.
pub const DEFAULT_M: f64 = 1.0;

/// `λ_M = (1 + M) σ √(2 log p / n)`
pub fn lambda_m(m: f64, sigma: f64, n: usize, p: usize) -> f64 {
    (1.0 + m) * sigma * (2.0 * (p as f64).ln() / n as f64).sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiagnosticsReport {
    pub tau0_sq: f64,
    pub tau_s_sq: f64,
    pub iota: f64,
    #[serde(rename = "K_S")]
    pub k_s: f64,
    pub phi_min_s: f64,
    pub phi_max_s: f64,
    pub beta_min_s: Option<f64>,
    pub lambda_m: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub bound_b: f64,
    pub bound_btilde: f64,
    pub thm4_condition_holds: bool,
    pub thm6_lambda: f64,
    pub thm6_bound_b: f64,
    pub iota_at_least_one: bool,
    pub slow_rate_bound: f64,
    /// `‖Σ_SS⁻¹1‖∞`
    pub inv_ones_sup: f64,
}

struct SupportBlock {
    inverse: DenseMatrix,
    chol: Cholesky,
    phi_min: f64,
    phi_max: f64,
}

fn support_block(x: &DenseMatrix, support: &[usize]) -> Result<SupportBlock> {
    checked_index_set(support, x.cols())?;
    let xs = x.select_columns(support);
    let sigma_ss = xs.gram(1.0 / x.rows() as f64);
    let chol = Cholesky::new(&sigma_ss).map_err(|e| match e {
        Error::Singular { index, .. } => {
            Error::RankDeficient(format!("X_S is rank deficient at support position {index}"))
        }
        other => other,
    })?;
    let (phi_min, phi_max) = sym_eig_extremes(&sigma_ss)?;
    Ok(SupportBlock {
        inverse: chol.inverse(),
        chol,
        phi_min,
        phi_max,
    })
}

/// Maximum absolute row sum, i.e. the operator norm induced by `‖·‖∞`.
pub fn inf_norm(a: &DenseMatrix) -> f64 {
    (0..a.rows())
        .map(|i| (0..a.cols()).map(|j| a.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `ι(S) = max_{j∈S^c} Σ_{jS} Σ_SS⁻¹ 1`; zero when `S` or `S^c` is empty.
pub fn iota(x: &DenseMatrix, support: &[usize]) -> Result<f64> {
    if support.is_empty() {
        return Ok(0.0);
    }
    let block = support_block(x, support)?;
    Ok(iota_with(x, support, &block.chol))
}

fn iota_with(x: &DenseMatrix, support: &[usize], chol: &Cholesky) -> f64 {
    let n = x.rows() as f64;
    let v = chol.solve(&vec![1.0; support.len()]).expect("dimension matches");
    let xs = x.select_columns(support);
    let xv = xs.matvec(&v);
    let in_s = {
        let mut m = vec![false; x.cols()];
        support.iter().for_each(|&j| m[j] = true);
        m
    };
    let vals = (0..x.cols()).filter(|&j| !in_s[j]).map(|j| dot(x.col(j), &xv) / n);
    let mut any = false;
    let mut best = f64::NEG_INFINITY;
    for v in vals {
        any = true;
        best = best.max(v);
    }
    if any {
        best
    } else {
        0.0
    }
}

/// Every constant and bound attached to a support `S`.
pub fn constants_for_support(
    x: &DenseMatrix,
    support: &[usize],
    beta_star: Option<&[f64]>,
    sigma: f64,
    m: f64,
) -> Result<DiagnosticsReport> {
    let (n, p) = (x.rows(), x.cols());
    if support.is_empty() {
        return invalid("support must be non-empty");
    }
    if support.len() >= p {
        return invalid("support must leave at least one column outside");
    }
    if !(sigma >= 0.0) || !(m >= 0.0) {
        return invalid("sigma and M must be non-negative");
    }
    if let Some(b) = beta_star {
        if b.len() != p {
            return mismatch("beta* length differs from column count");
        }
    }
    let s = support.len();
    let block = support_block(x, support)?;
    let k_s = inf_norm(&block.inverse);
    let inv_ones = block.chol.solve(&vec![1.0; s])?;
    let inv_ones_sup = inv_ones.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let iota_v = iota_with(x, support, &block.chol);
    let t0 = tau0(x)?.value;
    let ts = tau_s_projected(x, support)?.value;
    let lm = lambda_m(m, sigma, n, p);
    let bound_b = if ts > 0.0 { 2.0 * lm / ts } else { f64::INFINITY };
    let bound_btilde = bound_b * k_s + lm / block.phi_min.sqrt();
    let thm4_condition_holds = thm4_condition(m, n, p, s, ts);
    let (thm6_lambda, thm6_bound_b) = if iota_v < 1.0 {
        let lam = 2.0 * lm / (1.0 - iota_v);
        (lam, 0.5 * lam * inv_ones_sup + lm / block.phi_min.sqrt())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let l1 = beta_star.map_or(0.0, norm1);
    let slow = if t0 > 0.0 {
        slow_rate_bound(l1, 0.0, t0, sigma, m, n, p)?
    } else {
        f64::INFINITY
    };
    Ok(DiagnosticsReport {
        tau0_sq: t0,
        tau_s_sq: ts,
        iota: iota_v,
        k_s,
        phi_min_s: block.phi_min,
        phi_max_s: block.phi_max,
        beta_min_s: beta_star.map(|b| support.iter().map(|&j| b[j]).fold(f64::INFINITY, f64::min)),
        lambda_m: lm,
        m,
        bound_b,
        bound_btilde,
        thm4_condition_holds,
        thm6_lambda,
        thm6_bound_b,
        iota_at_least_one: iota_v >= 1.0,
        slow_rate_bound: slow,
        inv_ones_sup,
    })
}

/// `32(1+M)² log p / (τ²(S) n) ≤ 1 − s/n`, with the noise second moment
/// equal to `σ²` so that `σ` cancels.
pub fn thm4_condition(m: f64, n: usize, p: usize, s: usize, tau_s_sq: f64) -> bool {
    if !(tau_s_sq > 0.0) {
        return false;
    }
    let lhs = 32.0 * (1.0 + m).powi(2) * (p as f64).ln() / (tau_s_sq * n as f64);
    lhs <= 1.0 - s as f64 / n as f64
}

/// Prediction bound
/// `𝓔* + ((6‖β*‖₁ + 8√𝓔*)/τ²) λ_M + 16(1+M)²σ² log p / (τ² n)`.
pub fn slow_rate_bound(
    bstar_l1: f64,
    estar: f64,
    tau_sq: f64,
    sigma: f64,
    m: f64,
    n: usize,
    p: usize,
) -> Result<f64> {
    if !(tau_sq > 0.0) {
        return Err(Error::UndefinedBound(format!("tau^2 = {tau_sq} is not positive")));
    }
    if estar < 0.0 || bstar_l1 < 0.0 {
        return invalid("norms must be non-negative");
    }
    let lm = lambda_m(m, sigma, n, p);
    Ok(estar
        + (6.0 * bstar_l1 + 8.0 * estar.sqrt()) / tau_sq * lm
        + 16.0 * (1.0 + m).powi(2) * sigma * sigma * (p as f64).ln() / (tau_sq * n as f64))
}

/// Radius of the `ℓ₁` alternative in the cone lemma:
/// `4(1+M)(1 + 3/τ²) σ √(2 log p / n)`.
pub fn cone_l1_radius(tau_sq: f64, sigma: f64, m: f64, n: usize, p: usize) -> Result<f64> {
    if !(tau_sq > 0.0) {
        return Err(Error::UndefinedBound(format!("tau^2 = {tau_sq} is not positive")));
    }
    Ok(4.0 * (1.0 + 3.0 / tau_sq) * lambda_m(m, sigma, n, p))
}

/// `ℓ_q` estimation bound (`q ∈ [1, 2]`) under the restricted eigenvalue
/// condition with constant `phi = φ(3/τ², s)`.
pub fn lq_error_bound(q: f64, phi: f64, tau_sq: f64, s: usize, sigma: f64, m: f64, n: usize, p: usize) -> Result<f64> {
    if !(1.0..=2.0).contains(&q) {
        return invalid("q must lie in [1, 2]");
    }
    if !(phi > 0.0) || !(tau_sq > 0.0) {
        return Err(Error::UndefinedBound("phi and tau^2 must be positive".into()));
    }
    let lm = lambda_m(m, sigma, n, p);
    Ok(2f64.powf(3.0 * q - 2.0) / phi.powf(q) * (1.0 + 3.0 / tau_sq).powf(2.0 * q) * s as f64 * lm.powf(q))
}

/// Prediction bound `8(1+M)²σ²/φ · (1 + 3/τ²)² · s log p / n`.
pub fn prediction_error_bound(phi: f64, tau_sq: f64, s: usize, sigma: f64, m: f64, n: usize, p: usize) -> Result<f64> {
    if !(phi > 0.0) || !(tau_sq > 0.0) {
        return Err(Error::UndefinedBound("phi and tau^2 must be positive".into()));
    }
    Ok(8.0 * (1.0 + m).powi(2) * sigma * sigma / phi
        * (1.0 + 3.0 / tau_sq).powi(2)
        * s as f64
        * (p as f64).ln()
        / n as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeMembership {
    pub in_cone: bool,
    pub ratio: f64,
}

/// `‖δ_{S^c}‖₁ / ‖δ_S‖₁ ≤ c₀`
pub fn cone_membership(delta: &[f64], support: &[usize], c0: f64) -> Result<ConeMembership> {
    let set = checked_index_set(support, delta.len())?;
    let on: f64 = support.iter().map(|&j| delta[j].abs()).sum();
    let off: f64 = (0..delta.len()).filter(|j| !set.contains(j)).map(|j| delta[j].abs()).sum();
    let ratio = if off == 0.0 {
        0.0
    } else if on == 0.0 {
        f64::INFINITY
    } else {
        off / on.max(1e-300)
    };
    Ok(ConeMembership {
        in_cone: ratio <= c0,
        ratio,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReEstimate {
    pub alpha: f64,
    pub s: usize,
    /// Value attained by the witness; an upper bound on the restricted eigenvalue.
    pub phi_estimate: f64,
    pub witness_j: Vec<usize>,
    pub witness_delta: Vec<f64>,
    pub restarts: usize,
    pub exhaustive: bool,
}

/// Euclidean projection onto the `ℓ₁` ball of the given radius.
fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    if norm1(v) <= radius {
        return v.to_vec();
    }
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let proj = crate::simplex::project_simplex(&abs.iter().map(|a| a / radius).collect::<Vec<_>>());
    v.iter()
        .zip(proj)
        .map(|(x, p)| x.signum() * p * radius)
        .collect()
}

/// Maps `δ` into `𝓡(J, α)` with `‖δ_J‖₂ = 1`.
fn make_feasible(delta: &mut [f64], in_j: &[bool], alpha: f64) -> bool {
    let jnorm = delta.iter().zip(in_j).filter(|(_, b)| **b).map(|(d, _)| d * d).sum::<f64>().sqrt();
    if !(jnorm > 1e-12) {
        return false;
    }
    delta.iter_mut().for_each(|d| *d /= jnorm);
    let j_l1: f64 = delta.iter().zip(in_j).filter(|(_, b)| **b).map(|(d, _)| d.abs()).sum();
    let off_idx: Vec<usize> = (0..delta.len()).filter(|&k| !in_j[k]).collect();
    let off: Vec<f64> = off_idx.iter().map(|&k| delta[k]).collect();
    let proj = project_l1_ball(&off, alpha * j_l1);
    for (k, v) in off_idx.iter().zip(proj) {
        delta[*k] = v;
    }
    true
}

fn quad(sigma: &DenseMatrix, d: &[f64]) -> f64 {
    dot(d, &sigma.matvec(d))
}

fn minimize_on_cone<R: Rng>(sigma: &DenseMatrix, j: &[usize], alpha: f64, restarts: usize, rng: &mut R) -> (f64, Vec<f64>) {
    let p = sigma.rows();
    let mut in_j = vec![false; p];
    j.iter().for_each(|&k| in_j[k] = true);
    let lmax = crate::densela::sym_eig_extremes(sigma).map(|e| e.1).unwrap_or(1.0).max(1e-12);
    let step = 0.5 / lmax;
    let mut best = (f64::INFINITY, vec![0.0; p]);
    for r in 0..restarts {
        let mut d: Vec<f64> = if r == 0 {
            // J coordinates equal, the rest pushed against them
            let g: Vec<f64> = (0..p).map(|k| if in_j[k] { 1.0 } else { 0.0 }).collect();
            let sg = sigma.matvec(&g);
            (0..p).map(|k| if in_j[k] { 1.0 } else { -sg[k] }).collect()
        } else {
            (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
        };
        if !make_feasible(&mut d, &in_j, alpha) {
            continue;
        }
        let mut val = quad(sigma, &d);
        for _ in 0..400 {
            let g = sigma.matvec(&d);
            let mut cand: Vec<f64> = d.iter().zip(&g).map(|(a, b)| a - 2.0 * step * b).collect();
            if !make_feasible(&mut cand, &in_j, alpha) {
                break;
            }
            let cv = quad(sigma, &cand);
            if cv < val - 1e-15 {
                let improvement = val - cv;
                d = cand;
                val = cv;
                if improvement < 1e-13 {
                    break;
                }
            } else {
                break;
            }
        }
        if val < best.0 {
            best = (val, d);
        }
    }
    best
}

fn combinations(p: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == p - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for t in i..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

fn count_subsets(p: usize, s: usize, cap: usize) -> Option<usize> {
    let mut total = 0usize;
    for k in 1..=s {
        let mut c: u128 = 1;
        for i in 0..k {
            c = c * (p - i) as u128 / (i + 1) as u128;
            if c > cap as u128 {
                return None;
            }
        }
        total += c as usize;
        if total > cap {
            return None;
        }
    }
    Some(total)
}

/// Upper estimate of the restricted eigenvalue
/// `min_{1≤|J|≤s} min_{δ∈𝓡(J,α)} δᵀΣδ/‖δ_J‖₂²` by projected descent on each
/// cone from several starts. All sets `J` are visited when there are at most
/// 2000 of them; otherwise sets of size `s` are sampled.
pub fn re_estimate(sigma: &DenseMatrix, alpha: f64, s: usize, restarts: usize, seed: u64) -> Result<ReEstimate> {
    sigma.check_symmetric(1e-9)?;
    let p = sigma.rows();
    if s == 0 || s > p {
        return invalid("s must satisfy 1 ≤ s ≤ p");
    }
    if !(alpha >= 1.0) {
        return invalid("alpha must be at least 1");
    }
    let restarts = restarts.max(1);
    let mut rng = master_rng(seed);
    let mut sets = Vec::new();
    let exhaustive = count_subsets(p, s, 2000).is_some();
    if exhaustive {
        for k in 1..=s {
            combinations(p, k, &mut sets);
        }
    } else {
        for _ in 0..200 {
            let mut j = rand::seq::index::sample(&mut rng, p, s).into_vec();
            j.sort_unstable();
            sets.push(j);
        }
    }
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for j in sets {
        let (v, d) = minimize_on_cone(sigma, &j, alpha, restarts, &mut rng);
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, j, d));
        }
    }
    let (phi, j, d) = best.expect("at least one set");
    let jn: f64 = j.iter().map(|&k| d[k] * d[k]).sum();
    let phi_exact = quad(sigma, &d) / jn;
    debug_assert!((phi_exact - phi).abs() < 1e-9 * phi.abs().max(1.0));
    Ok(ReEstimate {
        alpha,
        s,
        phi_estimate: phi_exact,
        witness_j: j,
        witness_delta: d,
        restarts,
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_design(sigma: &DenseMatrix) -> DenseMatrix {
        let n = sigma.rows();
        let l = Cholesky::new(sigma).unwrap();
        let sq = (n as f64).sqrt();
        DenseMatrix::from_fn(n, n, |i, j| l.lower().get(j, i) * sq)
    }

    fn equicorr(p: usize, rho: f64) -> DenseMatrix {
        DenseMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho })
    }

    #[test]
    fn identity_support_constants() {
        let x = exact_design(&DenseMatrix::identity(5));
        let r = constants_for_support(&x, &[0, 1], None, 1.0, 1.0).unwrap();
        assert!((r.k_s - 1.0).abs() < 1e-12);
        assert!((r.phi_min_s - 1.0).abs() < 1e-12);
        assert!(r.iota.abs() < 1e-12);
    }

    #[test]
    fn equicorr_support_constants() {
        let x = exact_design(&equicorr(6, 0.5));
        let r = constants_for_support(&x, &[0, 1, 2], None, 1.0, 1.0).unwrap();
        assert!((r.phi_min_s - 0.5).abs() < 1e-10);
        assert!((r.inv_ones_sup - 0.5).abs() < 1e-10);
        assert!((iota(&x, &[0, 1, 2]).unwrap() - 0.75).abs() < 1e-10);
    }

    #[test]
    fn cone_examples() {
        let c = cone_membership(&[1.0, -2.0, 0.0], &[0, 1], 0.5).unwrap();
        assert!(c.in_cone && c.ratio == 0.0);
        let c = cone_membership(&[0.0, 0.0, 3.0], &[0, 1], 10.0).unwrap();
        assert!(!c.in_cone && c.ratio.is_infinite());
    }

    #[test]
    fn slow_rate_examples() {
        let n = 7usize;
        let b = slow_rate_bound(0.0, 0.0, 0.5, 1.0, 1.0, n, 10).unwrap();
        assert!((b - 16.0 * 4.0 * (10f64).ln() / (0.5 * 7.0)).abs() < 1e-12);
        assert!(matches!(slow_rate_bound(0.0, 0.0, 0.0, 1.0, 1.0, 5, 5), Err(Error::UndefinedBound(_))));
    }

    #[test]
    fn re_two_by_two() {
        let rho: f64 = 0.4;
        let s = DenseMatrix::from_rows(&[&[1.0, rho], &[rho, 1.0]]).unwrap();
        let r = re_estimate(&s, 1.0, 1, 16, 0).unwrap();
        assert!((r.phi_estimate - (1.0 - rho * rho)).abs() < 1e-8, "{}", r.phi_estimate);
        let r = re_estimate(&DenseMatrix::identity(4), 2.0, 2, 8, 0).unwrap();
        assert!((r.phi_estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thm4_monotone_in_n() {
        let mut prev = false;
        for n in (50..5000).step_by(50) {
            let now = thm4_condition(1.0, n, 400, 10, 0.3);
            assert!(!(prev && !now));
            prev = now;
        }
        assert!(prev);
    }
}
