//! Seeded Monte-Carlo experiments: the active-set size sampler for
//! equi-correlated designs and its empirical counterpart, the `τ²(S)` grid
//! study, spike deconvolution and sparse-recovery phase experiments.
//!
//! Replication `r` of grid cell `c` draws from `substream(seed, c, r)` and the
//! rows are collected in index order, so reports do not depend on the number
//! of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::densela::{norm2, DenseMatrix};
use crate::designs::{
    design_one_instance, design_two_instance, equicorrelation, from_gram, generate_with,
    noisy_instance, sha256_hex, DeconvSpec, DesignKind, DesignSpec,
};
use crate::error::{invalid, Error, Result};
use crate::estimators::{nn_lasso, nn_lasso_gram, nn_lasso_path, omp, recover_support, refit_on_support, ridge, ridge_raw, LassoPath};
use crate::model::RegressionInstance;
use crate::nnls::{nnls_solve, NnlsOptions};
use crate::rng::{normal, substream, StreamRng};
use crate::simplex::{tau0, tau_s_projected};

pub const QUANTILES: [f64; 5] = [0.01, 0.05, 0.5, 0.95, 0.99];

/// Runs `f` on a dedicated pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub cell: usize,
    pub rep: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell: usize,
    pub column: String,
    /// Number of finite values.
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Values at [`QUANTILES`].
    pub quantiles: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentReport {
    pub name: String,
    pub config: Value,
    pub seed: u64,
    pub cells: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub wall_clock_secs: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per cell and column: mean, standard error `sd/√count` and quantiles over the
/// finite values, in order of first appearance of each cell.
pub fn aggregate(rows: &[Row], columns: &[String]) -> Vec<Aggregate> {
    let mut cells: Vec<usize> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    let mut out = Vec::new();
    for &cell in &cells {
        for (k, col) in columns.iter().enumerate() {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.cell == cell)
                .map(|r| r.values[k])
                .filter(|x| x.is_finite())
                .collect();
            let count = v.len();
            let mean = if count == 0 { f64::NAN } else { v.iter().sum::<f64>() / count as f64 };
            let std_error = if count < 2 {
                0.0
            } else {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            };
            v.sort_by(f64::total_cmp);
            out.push(Aggregate {
                cell,
                column: col.clone(),
                count,
                mean,
                std_error,
                quantiles: QUANTILES.iter().map(|&q| quantile_sorted(&v, q)).collect(),
            });
        }
    }
    out
}

impl ExperimentReport {
    fn build(name: &str, config: Value, seed: u64, cells: Vec<String>, columns: &[&str], rows: Vec<Row>, start: Instant) -> Self {
        let columns: Vec<String> = columns.iter().map(|s| s.to_string()).collect();
        let aggregates = aggregate(&rows, &columns);
        Self {
            name: name.to_string(),
            config,
            seed,
            cells,
            columns,
            rows,
            aggregates,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        }
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.config.to_string().as_bytes())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column in one cell, in replication order.
    pub fn values(&self, cell: usize, name: &str) -> Vec<f64> {
        let k = self.column(name).unwrap_or_else(|| panic!("unknown column {name}"));
        self.rows.iter().filter(|r| r.cell == cell).map(|r| r.values[k]).collect()
    }

    pub fn aggregate_for(&self, cell: usize, name: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.cell == cell && a.column == name)
    }

    /// One line per replication under a `# config_hash=` header.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# config_hash={}\n", self.config_hash());
        s.push_str("cell,label,rep");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", r.cell, self.cells[r.cell], r.rep);
            for v in &r.values {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<name>_seed<seed>.csv` and `.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let stem = format!("{}_seed{}", self.name, self.seed);
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        fs::write(&csv, self.to_csv())?;
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        Ok((csv, json))
    }
}

fn run_seeded<F>(seed: u64, cells: usize, reps: usize, f: F) -> Result<Vec<Row>>
where
    F: Fn(usize, usize, &mut StreamRng) -> Result<Vec<f64>> + Sync + Send,
{
    (0..cells * reps)
        .into_par_iter()
        .map(|i| {
            let (cell, rep) = (i / reps, i % reps);
            let mut rng = substream(seed, cell as u32, rep as u32);
            f(cell, rep, &mut rng).map(|values| Row { cell, rep, values })
        })
        .collect()
}

fn bool_value(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Active-set size for equi-correlated designs

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Prop2Sample {
    pub s: usize,
    pub rho: f64,
    pub p_minus_s: usize,
    pub z: Vec<f64>,
    /// `z` sorted in decreasing order.
    pub order_stats: Vec<f64>,
    /// `ζ_j`, `j = 1..p−s−1`; non-increasing while positive, non-positive
    /// afterwards.
    pub zetas: Vec<f64>,
    pub theta: f64,
    pub card_f: usize,
}

pub fn prop2_gamma(s: usize, rho: f64) -> f64 {
    if s == 0 {
        rho
    } else {
        rho * (1.0 - rho) / (1.0 + (s as f64 - 1.0) * rho)
    }
}

pub fn prop2_theta(s: usize, rho: f64) -> f64 {
    if s == 0 {
        rho / (1.0 - rho)
    } else {
        rho / (1.0 + (s as f64 - 1.0) * rho)
    }
}

/// One draw from the conditional law of the active-set size.
pub fn prop2_sample<R: rand::Rng + ?Sized>(s: usize, rho: f64, p: usize, rng: &mut R) -> Result<Prop2Sample> {
    if !(0.0..1.0).contains(&rho) {
        return invalid(format!("rho = {rho} must lie in [0, 1)"));
    }
    if p <= s {
        return invalid("need p > s");
    }
    let m = p - s;
    let gamma = prop2_gamma(s, rho);
    let theta = prop2_theta(s, rho);
    let g0 = normal(rng);
    let z: Vec<f64> = (0..m)
        .map(|_| (1.0 - rho).sqrt() * normal(rng) + gamma.sqrt() * g0)
        .collect();
    let mut order_stats = z.clone();
    order_stats.sort_by(|a, b| b.total_cmp(a));
    let mut zetas = Vec::with_capacity(m.saturating_sub(1));
    let mut head = 0.0;
    for j in 1..m {
        head += order_stats[j - 1];
        let next = order_stats[j];
        let denom = head - j as f64 * next;
        zetas.push(if denom > 0.0 { next / denom } else if next > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY });
    }
    let card_f = if order_stats[0] <= 0.0 {
        s
    } else {
        let extra = zetas.iter().rposition(|&zeta| zeta > theta).map_or(0, |k| k + 1);
        s + 1 + extra
    };
    Ok(Prop2Sample {
        s,
        rho,
        p_minus_s: m,
        z,
        order_stats,
        zetas,
        theta,
        card_f,
    })
}

/// Quantiles `lo_q`, `hi_q` of the sampled active-set size over `draws` draws.
pub fn prop2_band(s: usize, rho: f64, p: usize, draws: usize, seed: u64, lo_q: f64, hi_q: f64) -> Result<(f64, f64)> {
    let mut rng = substream(seed, u32::MAX, 0);
    let mut sizes = Vec::with_capacity(draws);
    for _ in 0..draws {
        sizes.push(prop2_sample(s, rho, p, &mut rng)?.card_f as f64);
    }
    sizes.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sizes, lo_q), quantile_sorted(&sizes, hi_q)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Config {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub sigma: f64,
    pub reps: usize,
    pub band_draws: usize,
}

/// NNLS on the exact equi-correlated design with `β*_S` at
/// `3(1+M)σ√(2 log p/n)/(1−ρ)`, `M = 1`; records `|F|`, positivity on `S` and
/// whether `|F|` falls in the sampler's `[0.01, 0.99]` band.
pub fn prop2_empirical(cfg: &Prop2Config, seed: u64) -> Result<ExperimentReport> {
    let start = Instant::now();
    let Prop2Config { n, p, s, rho, sigma, reps, band_draws } = *cfg;
    if n < p {
        return invalid("exact equi-correlated design needs n ≥ p");
    }
    if s >= p || !(sigma >= 0.0) {
        return invalid("need s < p and σ ≥ 0");
    }
    let x = from_gram(&equicorrelation(p, rho), n)?;
    let level = 3.0 * 2.0 * sigma * (2.0 * (p as f64).ln() / n as f64).sqrt() / (1.0 - rho);
    let mut beta = vec![0.0; p];
    beta[..s].iter_mut().for_each(|b| *b = level);
    let (lo, hi) = prop2_band(s, rho, p, band_draws, seed, 0.01, 0.99)?;
    let rows = run_seeded(seed, 1, reps, |_, _, rng| {
        let inst = noisy_instance(x.clone(), beta.clone(), sigma, rng)?;
        let sol = nnls_solve(&inst, NnlsOptions::default())?;
        let card = sol.active_set.len() as f64;
        let s_positive = sol.beta[..s].iter().all(|b| *b > 0.0);
        Ok(vec![card, bool_value(s_positive), bool_value(card >= lo && card <= hi), lo, hi])
    })?;
    let config = json!({ "experiment": "prop2", "seed": seed, "n": n, "p": p, "s": s, "rho": rho, "sigma": sigma, "reps": reps, "bandDraws": band_draws });
    Ok(ExperimentReport::build(
        "prop2",
        config,
        seed,
        vec![format!("rho={rho};s={s}")],
        &["card_f", "beta_s_positive", "in_band", "band_lo", "band_hi"],
        rows,
        start,
    ))
}

// ---------------------------------------------------------------------------
// τ²(S) grid

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourConfig {
    pub n: usize,
    pub p_ratios: Vec<f64>,
    pub s_ratios: Vec<f64>,
    pub kind: DesignKind,
    pub reps: usize,
}

fn ratio_to_count(n: usize, r: f64) -> usize {
    (r * n as f64).round() as usize
}

/// `τ²(S)` with `S` the first `s` columns, for every `(p/n, s/n)` pair.
pub fn tau_contour_study(cfg: &ContourConfig, seed: u64) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.p_ratios.is_empty() || cfg.s_ratios.is_empty() || cfg.reps == 0 {
        return invalid("grids and reps must be non-empty");
    }
    let mut grid = Vec::new();
    for &pr in &cfg.p_ratios {
        for &sr in &cfg.s_ratios {
            let (p, s) = (ratio_to_count(cfg.n, pr), ratio_to_count(cfg.n, sr));
            if p == 0 || s >= p || s >= cfg.n || pr <= 0.0 || sr < 0.0 {
                return invalid(format!("invalid grid point p/n = {pr}, s/n = {sr}"));
            }
            grid.push((pr, sr, p, s));
        }
    }
    let rows = run_seeded(seed, grid.len(), cfg.reps, |cell, _, rng| {
        let (_, _, p, s) = grid[cell];
        let spec = DesignSpec::new(cfg.kind.clone(), cfg.n, p, 0);
        let x = generate_with(&spec, rng)?.x;
        let t = if s == 0 {
            tau0(&x)?.value
        } else {
            let support: Vec<usize> = (0..s).collect();
            tau_s_projected(&x, &support)?.value
        };
        Ok(vec![t, t.log2()])
    })?;
    let cells = grid.iter().map(|(pr, sr, _, _)| format!("p_n={pr};s_n={sr}")).collect();
    let config = json!({ "experiment": "tau-contour", "seed": seed, "n": cfg.n, "pRatios": cfg.p_ratios, "sRatios": cfg.s_ratios, "design": cfg.kind, "reps": cfg.reps });
    Ok(ExperimentReport::build("tau-contour", config, seed, cells, &["tau_s_sq", "log2_tau_s_sq"], rows, start))
}

// ---------------------------------------------------------------------------
// Spike deconvolution

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvConfig {
    pub spec: DeconvSpec,
    pub sigma: f64,
    pub reps: usize,
    pub folds: usize,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        Self {
            spec: DeconvSpec::default(),
            sigma: 0.09,
            reps: 20,
            folds: 10,
        }
    }
}

pub const DECONV_COLUMNS: [&str; 8] = [
    "mse_nnls",
    "mse_nnlasso_lambda0",
    "mse_nnlasso_cv",
    "mse_ridge_cv",
    "mse_oracle",
    "nnls_mass_near_spikes",
    "lambda_cv",
    "gamma_cv",
];

/// Random partition of `0..n` into `k` folds of near-equal size.
pub fn kfold_indices(n: usize, k: usize, rng: &mut StreamRng) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return invalid(format!("need 2 ≤ folds ≤ n, got {k}"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
    let mut folds = vec![Vec::new(); k];
    for (i, &r) in perm.iter().enumerate() {
        folds[i % k].push(r);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

fn split(x: &DenseMatrix, y: &[f64], test: &[usize]) -> (DenseMatrix, Vec<f64>, DenseMatrix, Vec<f64>) {
    let train: Vec<usize> = (0..x.rows()).filter(|i| test.binary_search(i).is_err()).collect();
    let ytr = train.iter().map(|&i| y[i]).collect();
    let yte = test.iter().map(|&i| y[i]).collect();
    (x.select_rows(&train), ytr, x.select_rows(test), yte)
}

fn sq_error(x: &DenseMatrix, y: &[f64], beta: &[f64]) -> f64 {
    x.matvec(beta).iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Index of the grid value with the smallest cross-validated squared error;
/// ties go to the earlier value.
fn cv_select<F>(x: &DenseMatrix, y: &[f64], folds: &[Vec<usize>], grid: &[f64], fit: F) -> Result<usize>
where
    F: Fn(&DenseMatrix, &[f64], f64) -> Result<Vec<f64>>,
{
    let mut errors = vec![0.0; grid.len()];
    for test in folds {
        let (xtr, ytr, xte, yte) = split(x, y, test);
        for (k, &g) in grid.iter().enumerate() {
            let b = fit(&xtr, &ytr, g)?;
            errors[k] += sq_error(&xte, &yte, &b);
        }
    }
    let mut best = 0;
    for k in 1..grid.len() {
        if errors[k] < errors[best] {
            best = k;
        }
    }
    Ok(best)
}

fn nn_lasso_raw(x: &DenseMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let nf = x.rows() as f64;
    let sigma = x.gram(1.0 / nf);
    let c: Vec<f64> = x.tmatvec(y).into_iter().map(|v| v / nf).collect();
    nn_lasso_gram(&sigma, &c, lambda, 1e-9)
}

pub fn deconv_lambda0(sigma: f64, n: usize, p: usize) -> f64 {
    2.0 * sigma * (2.0 * (p as f64).ln() / n as f64).sqrt()
}

pub fn deconv_lambda_grid(lambda0: f64) -> Vec<f64> {
    (-5..=4).map(|k| lambda0 * 2f64.powi(k)).collect()
}

pub fn ridge_grid() -> Vec<f64> {
    (0..10).map(|k| 10f64.powf(-4.0 + 6.0 * k as f64 / 9.0)).collect()
}

fn prediction_mse(inst: &RegressionInstance, beta: &[f64]) -> f64 {
    let truth = inst.truth.as_ref().expect("simulated instance");
    let a = inst.x.matvec(&truth.beta_star);
    let b = inst.x.matvec(beta);
    a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / inst.n() as f64
}

/// Fraction of `‖β‖₁` within `radius` candidate steps of a true spike.
pub fn mass_near(beta: &[f64], spikes: &[usize], radius: usize) -> f64 {
    let total: f64 = beta.iter().map(|b| b.abs()).sum();
    if total == 0.0 {
        return 1.0;
    }
    let near: f64 = beta
        .iter()
        .enumerate()
        .filter(|(j, _)| spikes.iter().any(|&k| j.abs_diff(k) <= radius))
        .map(|(_, b)| b.abs())
        .sum();
    near / total
}

/// Prediction MSE `(1/n)‖Xβ* − Xβ̂‖²` of NNLS, the non-negative lasso at `λ₀`
/// and cross-validated over `λ₀·2^k`, cross-validated ridge and least squares
/// on the true centers.
pub fn deconv_experiment(cfg: &DeconvConfig, seed: u64) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.spec.validate()?;
    if !(cfg.sigma >= 0.0) || cfg.reps == 0 {
        return invalid("need σ ≥ 0 and reps ≥ 1");
    }
    let (x, beta) = cfg.spec.design()?;
    let (n, p) = (cfg.spec.n, cfg.spec.p);
    let lambda0 = deconv_lambda0(cfg.sigma, n, p);
    let lgrid = deconv_lambda_grid(lambda0);
    let rgrid = ridge_grid();
    let mut support: Vec<usize> = cfg.spec.spike_indices.clone();
    support.sort_unstable();
    support.dedup();
    let rows = run_seeded(seed, 1, cfg.reps, |_, _, rng| {
        let inst = noisy_instance(x.clone(), beta.clone(), cfg.sigma, rng)?;
        let folds = kfold_indices(n, cfg.folds, rng)?;
        let b_nnls = nnls_solve(&inst, NnlsOptions::default())?.beta;
        let b_l0 = nn_lasso(&inst, lambda0, 1e-9)?;
        let kl = cv_select(&inst.x, &inst.y, &folds, &lgrid, nn_lasso_raw)?;
        let b_lcv = nn_lasso(&inst, lgrid[kl], 1e-9)?;
        let kr = cv_select(&inst.x, &inst.y, &folds, &rgrid, ridge_raw)?;
        let b_ridge = ridge(&inst, rgrid[kr])?;
        let b_oracle = refit_on_support(&inst, &support)?;
        Ok(vec![
            prediction_mse(&inst, &b_nnls),
            prediction_mse(&inst, &b_l0),
            prediction_mse(&inst, &b_lcv),
            prediction_mse(&inst, &b_ridge),
            prediction_mse(&inst, &b_oracle),
            mass_near(&b_nnls, &support, 3),
            lgrid[kl],
            rgrid[kr],
        ])
    })?;
    let config = json!({
        "experiment": "deconv", "seed": seed, "spec": cfg.spec, "sigma": cfg.sigma, "reps": cfg.reps,
        "folds": cfg.folds, "lambda0": lambda0, "lambdaGrid": lgrid, "ridgeGrid": rgrid,
    });
    Ok(ExperimentReport::build("deconv", config, seed, vec!["deconv".into()], &DECONV_COLUMNS, rows, start))
}

// ---------------------------------------------------------------------------
// Sparse recovery

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryDesign {
    /// Uniform entries, `ρ = 3/4`.
    I,
    /// Localized exponential kernels.
    II,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub p_ratio: f64,
    pub s_ratio: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub design: RecoveryDesign,
    pub n: usize,
    pub cells: Vec<RecoveryCell>,
    pub reps: usize,
    pub m: f64,
}

pub const RECOVERY_COLUMNS: [&str; 14] = [
    "s",
    "p",
    "t_nnls_oracle",
    "t_nnls",
    "t_nnl1",
    "nnl1",
    "omp",
    "linf_nnls",
    "l2_nnls",
    "linf_nnl1",
    "l2_nnl1",
    "s_hat",
    "refit_linf_le_nnls",
    "path_breakpoints",
];

fn separation_margin(beta: &[f64], s: usize) -> f64 {
    let min_s = beta[..s].iter().copied().fold(f64::INFINITY, f64::min);
    let max_sc = beta[s..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if beta.len() == s {
        return min_s;
    }
    min_s - max_sc
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| (u + t * (v - u)).max(0.0)).collect()
}

/// True when some path solution with `λ ∈ [lo, hi]` ranks every column of
/// `S = {0..s}` strictly above every other column. The margin is concave on
/// each linear segment, so a ternary search per segment is exact.
pub fn path_separates(path: &LassoPath, s: usize, lo: f64, hi: f64) -> Result<bool> {
    let bps = &path.breakpoints;
    let p = bps[0].beta.len();
    let lam_max = path.lambda_max();
    if hi >= lam_max && separation_margin(&vec![0.0; p], s) > 0.0 {
        return Ok(true);
    }
    for w in bps.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (top, bot) = (a.lambda.min(hi), b.lambda.max(lo));
        if top < bot {
            continue;
        }
        let at = |lam: f64| -> f64 {
            let t = if a.lambda > b.lambda { (a.lambda - lam) / (a.lambda - b.lambda) } else { 1.0 };
            separation_margin(&lerp(&a.beta, &b.beta, t), s)
        };
        if at(top) > 0.0 || at(bot) > 0.0 {
            return Ok(true);
        }
        let (mut l, mut r) = (bot, top);
        for _ in 0..100 {
            let m1 = l + (r - l) / 3.0;
            let m2 = r - (r - l) / 3.0;
            if at(m1) < at(m2) {
                l = m1;
            } else {
                r = m2;
            }
        }
        if at(0.5 * (l + r)) > 0.0 {
            return Ok(true);
        }
    }
    Ok(false)
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (u, v)| m.max((u - v).abs()))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
    norm2(&d)
}

/// One replication of the recovery protocol on an instance whose support is
/// the first `s` columns.
pub fn recovery_replication(inst: &RegressionInstance, s: usize, m: f64) -> Result<Vec<f64>> {
    let truth = inst.truth.as_ref().ok_or_else(|| Error::InvalidInput("instance needs ground truth".into()))?;
    let beta_star = &truth.beta_star;
    let (n, p) = (inst.n(), inst.p());
    let support: Vec<usize> = (0..s).collect();

    let rec = recover_support(inst, None, m)?;
    let nnls = &rec.base.beta;
    let t_oracle = separation_margin(nnls, s) > 0.0;
    let t_data = rec.estimated_support == support;
    let refit_flag = if t_data {
        let refit_err = linf(&rec.refit[..s], &beta_star[..s]);
        let raw_err = linf(&nnls[..s], &beta_star[..s]);
        bool_value(refit_err <= raw_err)
    } else {
        f64::NAN
    };

    let lambda0 = 2.0 * truth.sigma * (2.0 * (p as f64).ln() / n as f64).sqrt();
    let eps = truth.epsilon.as_ref().ok_or_else(|| Error::InvalidInput("instance needs its noise vector".into()))?;
    let lambda_hat = 2.0 * inst.x.tmatvec(eps).iter().fold(0.0f64, |a, v| a.max(v.abs())) / n as f64;
    let (lo, hi) = (lambda0.min(lambda_hat), lambda0.max(lambda_hat));
    let path = nn_lasso_path(inst, lo)?;
    let t_l1 = path_separates(&path, s, lo, hi)?;
    let nnl1 = path.breakpoints.iter().any(|bp| bp.lambda >= lo && bp.active_set == support);
    let b_l1 = path.beta_at(lambda0)?;

    let o = omp(inst, s)?;
    let omp_ok = o.support.iter().copied().collect::<std::collections::BTreeSet<_>>() == support.iter().copied().collect();

    Ok(vec![
        s as f64,
        p as f64,
        bool_value(t_oracle),
        bool_value(t_data),
        bool_value(t_l1),
        bool_value(nnl1),
        bool_value(omp_ok),
        linf(nnls, beta_star),
        l2(nnls, beta_star),
        linf(&b_l1, beta_star),
        l2(&b_l1, beta_star),
        rec.s_hat as f64,
        refit_flag,
        path.breakpoints.len() as f64,
    ])
}

pub fn recovery_phase_experiment(cfg: &RecoveryConfig, seed: u64) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.cells.is_empty() || cfg.reps == 0 {
        return invalid("need at least one cell and one replication");
    }
    let mut dims = Vec::new();
    for c in &cfg.cells {
        let p = ratio_to_count(cfg.n, c.p_ratio);
        let s = ratio_to_count(cfg.n, c.s_ratio).max(1);
        if s >= cfg.n || s > p || !(c.b > 0.0) {
            return invalid(format!("invalid cell {c:?}"));
        }
        dims.push((p, s));
    }
    let rows = run_seeded(seed, cfg.cells.len(), cfg.reps, |cell, _, rng| {
        let (p, s) = dims[cell];
        let b = cfg.cells[cell].b;
        let inst = match cfg.design {
            RecoveryDesign::I => design_one_instance(cfg.n, p, s, b, rng)?,
            RecoveryDesign::II => design_two_instance(cfg.n, p, s, b, rng)?,
        };
        recovery_replication(&inst, s, cfg.m)
    })?;
    let cells = cfg
        .cells
        .iter()
        .map(|c| format!("p_n={};s_n={};b={}", c.p_ratio, c.s_ratio, c.b))
        .collect();
    let config = json!({ "experiment": "recovery-phase", "seed": seed, "design": cfg.design, "n": cfg.n, "cells": cfg.cells, "reps": cfg.reps, "M": cfg.m });
    Ok(ExperimentReport::build("recovery-phase", config, seed, cells, &RECOVERY_COLUMNS, rows, start))
}
