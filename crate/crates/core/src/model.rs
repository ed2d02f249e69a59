//! Regression instances `y = Xβ* + ε` with columns scaled to `‖X_j‖₂² = n`.

use serde::{Deserialize, Serialize};

use crate::densela::{dot, DenseMatrix};
use crate::error::{invalid, mismatch, Error, Result};

/// Tolerance on `‖X_j‖₂²/n − 1` for a column to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta_star: Vec<f64>,
    pub support: Vec<usize>,
    pub sigma: f64,
    pub epsilon: Option<Vec<f64>>,
    /// Approximation error `(1/n)‖f − Xβ*‖²`; zero for exact linear models.
    pub approx_error: f64,
}

impl GroundTruth {
    pub fn new(beta_star: Vec<f64>, sigma: f64, epsilon: Option<Vec<f64>>) -> Result<Self> {
        if beta_star.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return invalid("beta* must be finite and non-negative");
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return invalid("sigma must be a finite non-negative number");
        }
        let support = support_of(&beta_star);
        Ok(Self {
            beta_star,
            support,
            sigma,
            epsilon,
            approx_error: 0.0,
        })
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }
}

pub fn support_of(beta: &[f64]) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, b)| **b > 0.0)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Clone, Debug)]
pub struct RegressionInstance {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    pub truth: Option<GroundTruth>,
}

impl RegressionInstance {
    /// Builds an instance, rescaling columns to `‖X_j‖₂² = n`. When a truth is
    /// supplied its coefficients are rescaled so that `Xβ*` is unchanged.
    pub fn new(mut x: DenseMatrix, y: Vec<f64>, mut truth: Option<GroundTruth>) -> Result<Self> {
        Self::check_shapes(&x, &y, truth.as_ref())?;
        let scales = normalize_columns(&mut x)?;
        if let Some(t) = truth.as_mut() {
            for (b, c) in t.beta_star.iter_mut().zip(&scales) {
                *b *= c;
            }
        }
        Ok(Self { x, y, truth })
    }

    /// Builds an instance from an already normalized design, failing if any
    /// column violates the normalization.
    pub fn from_normalized(x: DenseMatrix, y: Vec<f64>, truth: Option<GroundTruth>) -> Result<Self> {
        Self::check_shapes(&x, &y, truth.as_ref())?;
        if let Some(j) = first_unnormalized(&x) {
            return invalid(format!("column {j} is not normalized to squared norm n"));
        }
        Ok(Self { x, y, truth })
    }

    /// Keeps the design exactly as given, for designs whose column scaling is
    /// part of their definition.
    pub fn unscaled(x: DenseMatrix, y: Vec<f64>, truth: Option<GroundTruth>) -> Result<Self> {
        Self::check_shapes(&x, &y, truth.as_ref())?;
        Ok(Self { x, y, truth })
    }

    fn check_shapes(x: &DenseMatrix, y: &[f64], truth: Option<&GroundTruth>) -> Result<()> {
        if x.rows() == 0 || x.cols() == 0 {
            return invalid("design must have at least one row and one column");
        }
        if y.len() != x.rows() {
            return mismatch(format!("y has length {}, design has {} rows", y.len(), x.rows()));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return invalid("design and response must be finite");
        }
        if let Some(t) = truth {
            if t.beta_star.len() != x.cols() {
                return mismatch("beta* length differs from column count");
            }
            if let Some(e) = &t.epsilon {
                if e.len() != x.rows() {
                    return mismatch("noise length differs from row count");
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.x.cols()
    }

    /// `Σ = XᵀX/n`
    pub fn gram(&self) -> DenseMatrix {
        self.x.gram(1.0 / self.n() as f64)
    }

    pub fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let fit = self.x.matvec(beta);
        self.y.iter().zip(&fit).map(|(a, b)| a - b).collect()
    }

    /// `(1/n)‖y − Xβ‖₂²`
    pub fn objective(&self, beta: &[f64]) -> f64 {
        let r = self.residual(beta);
        dot(&r, &r) / self.n() as f64
    }

    /// Same design with a different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return mismatch("response length differs from row count");
        }
        Ok(Self {
            x: self.x.clone(),
            y,
            truth: None,
        })
    }
}

/// Scales every column to squared norm `n`; returns the applied norms
/// `‖X_j‖₂/√n` (the factors by which coefficients must be multiplied).
pub fn normalize_columns(x: &mut DenseMatrix) -> Result<Vec<f64>> {
    let n = x.rows() as f64;
    let mut scales = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let norm = dot(x.col(j), x.col(j)).sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput(format!("column {j} is identically zero")));
        }
        let c = norm / n.sqrt();
        for v in x.col_mut(j) {
            *v /= c;
        }
        scales.push(c);
    }
    Ok(scales)
}

pub fn first_unnormalized(x: &DenseMatrix) -> Option<usize> {
    let n = x.rows() as f64;
    (0..x.cols()).find(|&j| (dot(x.col(j), x.col(j)) / n - 1.0).abs() > NORMALIZATION_TOL)
}
