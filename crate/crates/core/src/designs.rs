//! Design generators: orthonormal, power-decay and equi-correlated Gram
//! constructions, i.i.d. non-negative ensembles, localized kernels for spike
//! deconvolution, Bernoulli group-testing matrices and the block
//! counterexample for the irrepresentable condition. Also structural checks
//! and on-disk serialization.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::densela::{Cholesky, DenseMatrix};
use crate::error::{invalid, Error, Result};
use crate::model::{first_unnormalized, normalize_columns, GroundTruth, RegressionInstance};
use crate::rng::{master_rng, normal, normal_vec, uniform, StreamRng};

pub use crate::nnls::glp_check;

/// Non-negative i.i.d. entry distributions, each a mixture with a point mass
/// at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ensemble", rename_all = "UPPERCASE")]
pub enum Ensemble {
    /// `a·uniform[0, √(3/a)] + (1−a)δ₀`
    E1 { a: f64 },
    /// `Bernoulli(π)`
    E2 { pi: f64 },
    /// `|Z|` with `Z ~ a·N(0,1) + (1−a)δ₀`
    E3 { a: f64 },
    /// `a·Poisson(3/√(12a)) + (1−a)δ₀`
    E4 { a: f64 },
}

/// First two moments of an ensemble and the implied population correlation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsPlusSpec {
    pub mu: f64,
    pub mu2: f64,
    pub rho_pop: f64,
}

impl Ensemble {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Ensemble::E1 { a } | Ensemble::E3 { a } | Ensemble::E4 { a } => {
                if !(a > 0.0 && a <= 1.0) {
                    return invalid(format!("mixture weight a = {a} must lie in (0, 1]"));
                }
            }
            Ensemble::E2 { pi } => {
                if !(pi > 0.0 && pi <= 1.0) {
                    return invalid(format!("pi = {pi} must lie in (0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> EnsPlusSpec {
        let (mu, mu2) = match *self {
            Ensemble::E1 { a } => (a * (3.0 / a).sqrt() / 2.0, 1.0),
            Ensemble::E2 { pi } => (pi, pi),
            Ensemble::E3 { a } => (a * (2.0 / std::f64::consts::PI).sqrt(), a),
            Ensemble::E4 { a } => {
                let l = 3.0 / (12.0 * a).sqrt();
                (a * l, a * (l + l * l))
            }
        };
        EnsPlusSpec {
            mu,
            mu2,
            rho_pop: mu * mu / mu2,
        }
    }

    /// One draw, not yet rescaled.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Ensemble::E1 { a } => {
                if uniform(rng) < a {
                    uniform(rng) * (3.0 / a).sqrt()
                } else {
                    0.0
                }
            }
            Ensemble::E2 { pi } => {
                if uniform(rng) < pi {
                    1.0
                } else {
                    0.0
                }
            }
            Ensemble::E3 { a } => {
                if uniform(rng) < a {
                    normal(rng).abs()
                } else {
                    0.0
                }
            }
            Ensemble::E4 { a } => {
                if uniform(rng) < a {
                    let l = 3.0 / (12.0 * a).sqrt();
                    Poisson::new(l).expect("positive rate").sample(rng)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum DesignKind {
    /// `√n [I; 0]`, needs `n ≥ p`.
    Orthonormal,
    /// Gram `ρ^{|j−k|}`; exact when `n ≥ p`, Gaussian rows otherwise.
    PowerDecay { rho: f64 },
    GaussianIid,
    /// Gram `(1−ρ)I + ρ11ᵀ` exactly, needs `n ≥ p`.
    EquiCorrExact { rho: f64 },
    EnsPlus {
        #[serde(flatten)]
        ensemble: Ensemble,
    },
    /// Gaussian bumps of the given width at `centers`, sampled at `u_i = i/n`.
    LocalizedGaussian { centers: Vec<f64>, width: f64 },
    /// Exponential kernels with random separated centers; also draws `β*`.
    LocalizedExp { s: usize, b: f64 },
    GroupTestingBernoulli { pi: f64 },
    /// Block Gram with an `s`-block violating the irrepresentable-type bound.
    AppendixICounterexample { s: usize },
    /// Row-major Gram matrix realized through its Cholesky factor.
    ExplicitGram { sigma: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub kind: DesignKind,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl DesignSpec {
    pub fn new(kind: DesignKind, n: usize, p: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            p,
            seed,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedDesign {
    pub x: DenseMatrix,
    /// Coefficients and support for kinds that define them; `σ = 0`.
    pub truth: Option<GroundTruth>,
}

/// Builds the design described by `spec`; deterministic in `spec.seed`.
pub fn generate(spec: &DesignSpec) -> Result<GeneratedDesign> {
    let mut rng = master_rng(spec.seed);
    generate_with(spec, &mut rng)
}

pub fn generate_with(spec: &DesignSpec, rng: &mut StreamRng) -> Result<GeneratedDesign> {
    let (n, p) = (spec.n, spec.p);
    if n == 0 || p == 0 {
        return invalid("n and p must be positive");
    }
    let mut truth = None;
    let mut x = match &spec.kind {
        DesignKind::Orthonormal => {
            if n < p {
                return invalid("orthonormal design needs n ≥ p");
            }
            let s = (n as f64).sqrt();
            DenseMatrix::from_fn(n, p, |i, j| if i == j { s } else { 0.0 })
        }
        DesignKind::PowerDecay { rho } => {
            check_rho(*rho)?;
            let sigma = DenseMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()));
            if n >= p {
                from_gram(&sigma, n)?
            } else {
                gaussian_rows(&sigma, n, rng)?
            }
        }
        DesignKind::GaussianIid => DenseMatrix::from_col_major(n, p, normal_vec(rng, n * p))?,
        DesignKind::EquiCorrExact { rho } => {
            check_rho(*rho)?;
            if n < p {
                return invalid("exact equi-correlated design needs n ≥ p");
            }
            from_gram(&equicorrelation(p, *rho), n)?
        }
        DesignKind::EnsPlus { ensemble } => {
            ensemble.validate()?;
            ens_plus(*ensemble, n, p, rng)
        }
        DesignKind::LocalizedGaussian { centers, width } => {
            if centers.len() != p {
                return invalid("number of centers must equal p");
            }
            if !(*width > 0.0) {
                return invalid("kernel width must be positive");
            }
            DenseMatrix::from_fn(n, p, |i, j| {
                let u = (i + 1) as f64 / n as f64;
                (-(u - centers[j]).powi(2) / (2.0 * width * width)).exp()
            })
        }
        DesignKind::LocalizedExp { s, b } => {
            let (x, beta) = design_two_raw(n, p, *s, *b, rng)?;
            truth = Some(GroundTruth::new(beta, 0.0, None)?);
            x
        }
        DesignKind::GroupTestingBernoulli { pi } => bernoulli_matrix(n, p, *pi, rng)?,
        DesignKind::AppendixICounterexample { s } => {
            if *s < 2 || *s > p {
                return invalid("counterexample needs 2 ≤ s ≤ p");
            }
            if n < p {
                return invalid("counterexample design needs n ≥ p");
            }
            from_gram(&appendix_i_gram(*s, p), n)?
        }
        DesignKind::ExplicitGram { sigma } => {
            if sigma.len() != p || sigma.iter().any(|r| r.len() != p) {
                return invalid("explicit Gram must be p x p");
            }
            if n < p {
                return invalid("explicit Gram design needs n ≥ p");
            }
            let rows: Vec<&[f64]> = sigma.iter().map(|r| r.as_slice()).collect();
            let g = DenseMatrix::from_rows(&rows)?;
            g.check_symmetric(1e-12)?;
            from_gram(&g, n)?
        }
    };
    if spec.normalize {
        let scales = normalize_columns(&mut x).map_err(|e| Error::Generation(e.to_string()))?;
        if let Some(t) = truth.as_mut() {
            for (b, c) in t.beta_star.iter_mut().zip(&scales) {
                *b *= c;
            }
        }
    }
    Ok(GeneratedDesign { x, truth })
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return invalid(format!("rho = {rho} must lie in [0, 1)"));
    }
    Ok(())
}

pub fn equicorrelation(p: usize, rho: f64) -> DenseMatrix {
    DenseMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho })
}

/// `X = √n [Lᵀ; 0]` with `Σ = LLᵀ`, so that `XᵀX/n = Σ` exactly up to rounding.
pub fn from_gram(sigma: &DenseMatrix, n: usize) -> Result<DenseMatrix> {
    let p = sigma.rows();
    if n < p {
        return invalid("exact Gram construction needs n ≥ p");
    }
    let chol = Cholesky::new(sigma).map_err(|e| Error::Generation(format!("Gram is not positive definite: {e}")))?;
    let l = chol.lower();
    let s = (n as f64).sqrt();
    Ok(DenseMatrix::from_fn(n, p, |i, j| if i < p { l.get(j, i) * s } else { 0.0 }))
}

fn gaussian_rows(sigma: &DenseMatrix, n: usize, rng: &mut StreamRng) -> Result<DenseMatrix> {
    let p = sigma.rows();
    let chol = Cholesky::new(sigma)?;
    let l = chol.lower();
    let mut x = DenseMatrix::zeros(n, p);
    for i in 0..n {
        let g = normal_vec(rng, p);
        for j in 0..p {
            let v: f64 = (0..=j).map(|k| l.get(j, k) * g[k]).sum();
            x.set(i, j, v);
        }
    }
    Ok(x)
}

fn ens_plus(ensemble: Ensemble, n: usize, p: usize, rng: &mut StreamRng) -> DenseMatrix {
    let scale = 1.0 / ensemble.moments().mu2.sqrt();
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        data.push(ensemble.sample(rng) * scale);
    }
    let mut x = DenseMatrix::from_col_major(n, p, data).expect("finite draws");
    // an all-zero column cannot be normalized; redraw it
    for j in 0..p {
        while x.col(j).iter().all(|v| *v == 0.0) {
            for i in 0..n {
                x.set(i, j, ensemble.sample(rng) * scale);
            }
        }
    }
    x
}

fn bernoulli_matrix(n: usize, p: usize, pi: f64, rng: &mut StreamRng) -> Result<DenseMatrix> {
    if !(pi > 0.0 && pi <= 1.0) {
        return invalid(format!("pi = {pi} must lie in (0, 1]"));
    }
    let dist = Bernoulli::new(pi).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut x = DenseMatrix::zeros(n, p);
    for j in 0..p {
        loop {
            for i in 0..n {
                x.set(i, j, if dist.sample(rng) { 1.0 } else { 0.0 });
            }
            if x.col(j).iter().any(|v| *v != 0.0) {
                break;
            }
        }
    }
    Ok(x)
}

/// Normalized Bernoulli(π) membership matrix; zero columns are redrawn.
pub fn group_testing_design(n: usize, p: usize, pi: f64, seed: u64) -> Result<DenseMatrix> {
    let mut rng = master_rng(seed);
    let mut x = bernoulli_matrix(n, p, pi, &mut rng)?;
    normalize_columns(&mut x)?;
    Ok(x)
}

/// The 5×10 pooling matrix under which `e₃ + e₉` (1-based) is the only
/// non-negative solution of the noiseless system.
pub fn fig_cs_matrix() -> DenseMatrix {
    let rows: [[f64; 10]; 5] = [
        [1., 1., 0., 0., 0., 1., 0., 0., 1., 0.],
        [0., 1., 0., 0., 0., 0., 1., 0., 0., 1.],
        [1., 0., 1., 0., 0., 0., 1., 1., 0., 0.],
        [0., 0., 0., 1., 1., 1., 0., 1., 0., 0.],
        [0., 0., 1., 1., 1., 0., 0., 0., 1., 1.],
    ];
    DenseMatrix::from_fn(5, 10, |i, j| rows[i][j])
}

/// Gram with leading block `[[1, −c1ᵀ], [−c1, I]]`, `c = 1/√(2(s−1))`, and the
/// identity elsewhere.
pub fn appendix_i_gram(s: usize, p: usize) -> DenseMatrix {
    let c = -1.0 / (2.0 * (s as f64 - 1.0)).sqrt();
    DenseMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if i < s && j < s && (i == 0 || j == 0) {
            c
        } else {
            0.0
        }
    })
}

/// `σ₀/K` with `σ₀` the smallest entry over all diagonal blocks of the
/// partition and `K` the number of blocks; zero when `σ₀ ≤ 0`. This is a lower
/// bound on `τ₀²`.
pub fn block_lower_bound(sigma: &DenseMatrix, blocks: &[Vec<usize>]) -> Result<f64> {
    let p = sigma.rows();
    let mut seen = vec![false; p];
    for b in blocks {
        for &j in b {
            if j >= p || seen[j] {
                return invalid("blocks must partition the column indices");
            }
            seen[j] = true;
        }
    }
    if seen.iter().any(|s| !s) || blocks.iter().any(|b| b.is_empty()) {
        return invalid("blocks must cover every column and be non-empty");
    }
    let mut sigma0 = f64::INFINITY;
    for b in blocks {
        for &i in b {
            for &j in b {
                sigma0 = sigma0.min(sigma.get(i, j));
            }
        }
    }
    if sigma0 <= 0.0 {
        return Ok(0.0);
    }
    Ok(sigma0 / blocks.len() as f64)
}

/// Coefficient scale of the equi-correlation-like recovery design:
/// `6b (1−ρ)^{-1/2} √(2 log p / n)`.
pub fn design_one_scale(n: usize, p: usize, b: f64, rho: f64) -> f64 {
    6.0 * b / (1.0 - rho).sqrt() * (2.0 * (p as f64).ln() / n as f64).sqrt()
}

/// Equi-correlation-like design: uniform entries scaled to unit second
/// moment, so the population Gram has `ρ = 3/4`; columns are not normalized
/// to their sample norms. `β*_j = scale·(1 + U_j)` on the first `s` columns,
/// standard Gaussian noise.
pub fn design_one_instance(n: usize, p: usize, s: usize, b: f64, rng: &mut StreamRng) -> Result<RegressionInstance> {
    if s >= n || s > p {
        return invalid("need s < n and s ≤ p");
    }
    let x = ens_plus(Ensemble::E1 { a: 1.0 }, n, p, rng);
    let scale = design_one_scale(n, p, b, 0.75);
    let mut beta = vec![0.0; p];
    for bj in beta.iter_mut().take(s) {
        *bj = scale * (1.0 + uniform(rng));
    }
    let eps = normal_vec(rng, n);
    let mut y = x.matvec(&beta);
    for (yi, e) in y.iter_mut().zip(&eps) {
        *yi += e;
    }
    let truth = GroundTruth::new(beta, 1.0, Some(eps))?;
    RegressionInstance::unscaled(x, y, Some(truth))
}

/// `β_min = 4√(6 log 10 / n)` of the localized-kernel recovery design.
pub fn design_two_beta_min(n: usize) -> f64 {
    4.0 * (6.0 * 10f64.ln() / n as f64).sqrt()
}

/// Range of kernel centers, evaluated exactly as `u₁ − h log(1/n)` and
/// `u_n + h log(1/n)`.
pub fn design_two_center_range(n: usize) -> (f64, f64) {
    let nf = n as f64;
    let h = 2.0 / nf;
    let (u1, un) = (1.0 / nf, 1.0);
    (u1 - h * (1.0 / nf).ln(), un + h * (1.0 / nf).ln())
}

fn design_two_raw(n: usize, p: usize, s: usize, b: f64, rng: &mut StreamRng) -> Result<(DenseMatrix, Vec<f64>)> {
    if s == 0 || s > p || s >= n {
        return invalid("need 1 ≤ s ≤ p and s < n");
    }
    if !(b > 0.0) {
        return invalid("b must be positive");
    }
    let nf = n as f64;
    let h = 2.0 / nf;
    let delta = h;
    let (lo, hi) = design_two_center_range(n);
    if !(hi > lo) {
        return Err(Error::Generation(format!("empty center range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / s as f64;
    let mut centers = Vec::with_capacity(p);
    for k in 0..s {
        centers.push(lo + width * (k as f64 + uniform(rng)));
    }
    for _ in s..p {
        let mut tries = 0;
        loop {
            let m = lo + (hi - lo) * uniform(rng);
            if centers[..s].iter().all(|c| (m - c).abs() > delta) {
                centers.push(m);
                break;
            }
            tries += 1;
            if tries >= 10_000 {
                return Err(Error::Generation(
                    "could not place an off-support center after 10000 rejections".into(),
                ));
            }
        }
    }
    let x = DenseMatrix::from_fn(n, p, |i, j| {
        let u = (i + 1) as f64 / nf;
        (-(u - centers[j]).abs() / h).exp()
    });
    let bmin = design_two_beta_min(n);
    let mut beta = vec![0.0; p];
    for bj in beta.iter_mut().take(s) {
        *bj = b * bmin * (1.0 + uniform(rng));
    }
    Ok((x, beta))
}

/// Localized exponential kernels with separated centers; `β*` as for
/// [`design_two_beta_min`], standard Gaussian noise. The coefficients refer to
/// the normalized columns.
pub fn design_two_instance(n: usize, p: usize, s: usize, b: f64, rng: &mut StreamRng) -> Result<RegressionInstance> {
    let (mut x, beta) = design_two_raw(n, p, s, b, rng)?;
    normalize_columns(&mut x)?;
    noisy_instance(x, beta, 1.0, rng)
}

/// `y = Xβ* + σε` on a normalized design.
pub fn noisy_instance(mut x: DenseMatrix, beta: Vec<f64>, sigma: f64, rng: &mut StreamRng) -> Result<RegressionInstance> {
    let scales = normalize_columns(&mut x)?;
    let beta: Vec<f64> = beta.iter().zip(&scales).map(|(b, c)| b * c).collect();
    let eps: Vec<f64> = normal_vec(rng, x.rows()).into_iter().map(|e| e * sigma).collect();
    let mut y = x.matvec(&beta);
    for (yi, e) in y.iter_mut().zip(&eps) {
        *yi += e;
    }
    let truth = GroundTruth::new(beta, sigma, Some(eps))?;
    RegressionInstance::from_normalized(x, y, Some(truth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvSpec {
    pub n: usize,
    pub p: usize,
    /// Standard deviation of the Gaussian kernel.
    pub width: f64,
    /// Indices of the true spikes among the candidate centers `m_j = (j+1)/p`.
    pub spike_indices: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

impl Default for DeconvSpec {
    fn default() -> Self {
        Self {
            n: 100,
            p: 200,
            width: 0.106,
            spike_indices: vec![29, 64, 99, 139, 169],
            amplitudes: vec![0.4, 0.7, 0.2, 0.55, 0.3],
        }
    }
}

impl DeconvSpec {
    pub fn centers(&self) -> Vec<f64> {
        (0..self.p).map(|j| (j + 1) as f64 / self.p as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return invalid("n and p must be positive");
        }
        if !(self.width > 0.0) {
            return invalid("kernel width must be positive");
        }
        if self.spike_indices.len() != self.amplitudes.len() {
            return invalid("one amplitude per spike");
        }
        if self.spike_indices.iter().any(|&j| j >= self.p) {
            return invalid("spike index out of range");
        }
        if self.amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return invalid("amplitudes must be non-negative");
        }
        Ok(())
    }

    /// Normalized design together with `β*` on its columns.
    pub fn design(&self) -> Result<(DenseMatrix, Vec<f64>)> {
        self.validate()?;
        let spec = DesignSpec {
            kind: DesignKind::LocalizedGaussian {
                centers: self.centers(),
                width: self.width,
            },
            n: self.n,
            p: self.p,
            seed: 0,
            normalize: false,
        };
        let mut x = generate(&spec)?.x;
        let scales = normalize_columns(&mut x)?;
        let mut beta = vec![0.0; self.p];
        for (&j, &a) in self.spike_indices.iter().zip(&self.amplitudes) {
            beta[j] += a * scales[j];
        }
        Ok((x, beta))
    }
}

/// Spike deconvolution instance; the spikes sit on candidate centers so the
/// approximation error is zero.
pub fn build_deconv_instance(spec: &DeconvSpec, sigma: f64, rng: &mut StreamRng) -> Result<RegressionInstance> {
    let (x, beta) = spec.design()?;
    noisy_instance(x, beta, sigma, rng)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub n: usize,
    pub p: usize,
    pub spec: Option<DesignSpec>,
    pub seed: Option<u64>,
    pub truth: Option<GroundTruth>,
    pub y: Vec<f64>,
    pub matrix_file: String,
    pub matrix_sha256: String,
    /// False for designs kept at their defining scale.
    #[serde(default = "default_true")]
    pub normalized: bool,
    /// Effective configuration of the producing command, echoed verbatim.
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn matrix_bytes(x: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * x.as_slice().len());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes `<prefix>.json` (manifest) and `<prefix>.bin` (little-endian f64,
/// column-major). Returns the manifest path.
pub fn save_instance(
    prefix: &Path,
    instance: &RegressionInstance,
    spec: Option<&DesignSpec>,
    config: serde_json::Value,
) -> Result<PathBuf> {
    let bin = prefix.with_extension("bin");
    let json = prefix.with_extension("json");
    let bytes = matrix_bytes(&instance.x);
    fs::write(&bin, &bytes)?;
    let manifest = InstanceManifest {
        n: instance.n(),
        p: instance.p(),
        spec: spec.cloned(),
        seed: spec.map(|s| s.seed),
        truth: instance.truth.clone(),
        y: instance.y.clone(),
        matrix_file: bin.file_name().expect("file name").to_string_lossy().into_owned(),
        matrix_sha256: sha256_hex(&bytes),
        normalized: first_unnormalized(&instance.x).is_none(),
        config,
    };
    fs::write(&json, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(json)
}

/// Reads an instance written by [`save_instance`], verifying the matrix hash.
pub fn load_instance(manifest_path: &Path) -> Result<(RegressionInstance, InstanceManifest)> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: InstanceManifest = serde_json::from_str(&text)?;
    let bin = manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.matrix_file);
    let bytes = fs::read(&bin)?;
    let hash = sha256_hex(&bytes);
    if hash != manifest.matrix_sha256 {
        return invalid(format!("matrix file hash {hash} does not match manifest"));
    }
    if bytes.len() != 8 * manifest.n * manifest.p {
        return invalid("matrix file size does not match dimensions");
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let x = DenseMatrix::from_col_major(manifest.n, manifest.p, data)?;
    let inst = if manifest.normalized {
        RegressionInstance::from_normalized(x, manifest.y.clone(), manifest.truth.clone())?
    } else {
        RegressionInstance::unscaled(x, manifest.y.clone(), manifest.truth.clone())?
    };
    Ok((inst, manifest))
}
