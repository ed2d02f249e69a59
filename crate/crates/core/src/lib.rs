//! Non-negative least squares for sparse high-dimensional linear models.
//!
//! The crate bundles an active-set NNLS solver with KKT certification, the
//! simplex-margin constants that govern its behaviour, support recovery by
//! thresholding, comparator estimators, design generators and a seeded
//! Monte-Carlo harness.

pub mod densela;
pub mod designs;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod model;
pub mod nnls;
pub mod rng;
pub mod simlab;
pub mod simplex;

pub use densela::{DenseMatrix, IncrementalQr};
pub use error::{Error, Result};
pub use model::{GroundTruth, RegressionInstance};
pub use nnls::{nnls_solve, NnlsOptions, NnlsSolution};

pub use simplex::{tau0, tau_s, MarginCertificate};
