// SPDX-License-Identifier: Apache-2.0

//! Inter-arrival distributions: quantized PDFs and CDFs, the PDF-outlier
//! steepness test, and monotone piecewise-cubic interpolation of CDFs.

mod empirical;
mod pchip;

use thiserror::Error;

pub use empirical::{
    build_pdf, build_pdf_signed, steepness, EmpiricalCdf, EmpiricalPdf, SteepnessReport, UtmostMode,
};
pub use pchip::{max_derivative, pchip_fit, MaxDerivative, Pchip};

/// Default PDF quantization step: 1 µs.
pub const DEFAULT_QUANTUM_NS: u64 = 1_000;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("no samples to build a distribution from")]
    EmptySamples,
    #[error("quantum must be at least 1 ns")]
    ZeroQuantum,
    #[error("PDF needs at least two distinct support points, found {0}")]
    DegeneratePdf(usize),
    #[error("no PDF point exceeds the regression line by more than the margin")]
    NoOutlier,
    #[error("interpolation needs at least two strictly increasing, finite knots")]
    DegenerateCdf,
}
