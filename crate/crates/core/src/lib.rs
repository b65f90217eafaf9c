//! Numerical construction of Fatou-Bieberbach maps and the multi-sheeted
//! potential basins of repelling fixed points.
//!
//! The pipeline: truncate the attracting inverse germ `F` at the fixed
//! point ([`poly`]), triangularize its linear part and find a contracting
//! neighborhood ([`linalg`], [`dynamics`]), compute a Poincaré-Dulac normal
//! form ([`normal_form`]), then evaluate `Psi = lim G^-k T F^k` and its entire
//! inverse `Theta = lim h^k T^-1 G^k` ([`fb_map`]). Multi-valued inverse
//! branches are tracked sheet by sheet in [`continuation`].

pub mod continuation;
pub mod dynamics;
pub mod fb_map;
pub mod gallery;
pub mod linalg;
pub mod normal_form;
pub mod poly;
pub mod raster;
pub mod verify;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// A point of `C^N`.
pub type Point = DVector<Complex64>;
/// A dense `N x N` complex matrix.
pub type CMatrix = DMatrix<Complex64>;

pub use num_complex::Complex64 as C64;

use thiserror::Error;

/// Failure of a pointwise map evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    /// The point sits on a branch point of a multi-valued generator.
    #[error("branch point of {0}")]
    Singular(&'static str),
    /// The orbit left every bounded region the evaluator works in.
    #[error("orbit escaped (norm {0:e})")]
    Escaped(f64),
    #[error("non-finite value")]
    NonFinite,
    #[error("outside domain: {0}")]
    OutsideDomain(String),
    #[error("no convergence within {iterations} iterations (last delta {last_delta:e})")]
    NoConvergence { iterations: usize, last_delta: f64 },
}

pub(crate) fn finite(p: Point) -> Result<Point, EvalError> {
    if p.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(p)
    } else {
        Err(EvalError::NonFinite)
    }
}
