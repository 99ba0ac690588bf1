// SPDX-License-Identifier: Apache-2.0

//! Shape-preserving piecewise cubic Hermite interpolation.
//!
//! Knot slopes follow Fritsch–Carlson: zero at local extrema, a weighted
//! harmonic mean of the adjacent secants elsewhere, and a one-sided
//! three-point estimate limited to preserve shape at the ends. The
//! interpolant is C¹ and monotone wherever the data are.

use super::{DistributionError, EmpiricalCdf};

#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

/// Location and value of the largest first derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxDerivative {
    pub t_ns: f64,
    pub slope: f64,
}

/// Fit a pchip interpolant through the bin-edge knots of `cdf`.
pub fn pchip_fit(cdf: &EmpiricalCdf) -> Result<Pchip, DistributionError> {
    let (xs, ys) = cdf.edge_knots();
    Pchip::new(xs, ys)
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if !same_sign(d, d0) {
        0.0
    } else if !same_sign(d0, d1) && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, DistributionError> {
        let n = xs.len();
        if n < 2
            || ys.len() != n
            || xs.iter().chain(&ys).any(|v| !v.is_finite())
            || xs.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(DistributionError::DegenerateCdf);
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let secant: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();

        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = secant[0];
            slopes[1] = secant[0];
        } else {
            for k in 1..n - 1 {
                let (a, b) = (secant[k - 1], secant[k]);
                if same_sign(a, b) {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / a + w2 / b);
                }
            }
            slopes[0] = end_slope(h[0], h[1], secant[0], secant[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], secant[n - 2], secant[n - 3]);
        }
        Ok(Pchip { xs, ys, slopes })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    /// Index of the piece containing `x`, clamped to the valid range.
    fn piece(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|&k| k <= x);
        i.saturating_sub(1).min(self.xs.len() - 2)
    }

    /// Value at `x`. Outside the knot range the end values are held.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.x_min() {
            return self.ys[0];
        }
        if x >= self.x_max() {
            return self.ys[self.ys.len() - 1];
        }
        let k = self.piece(x);
        let h = self.xs[k + 1] - self.xs[k];
        let s = (x - self.xs[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.ys[k]
            + (s3 - 2.0 * s2 + s) * h * self.slopes[k]
            + (-2.0 * s3 + 3.0 * s2) * self.ys[k + 1]
            + (s3 - s2) * h * self.slopes[k + 1]
    }

    /// First derivative at `x`; zero outside the knot range.
    pub fn derivative(&self, x: f64) -> f64 {
        if x < self.x_min() || x > self.x_max() {
            return 0.0;
        }
        let k = self.piece(x);
        let (a, b, c) = self.derivative_coefficients(k);
        let s = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        (a * s + b) * s + c
    }

    /// Derivative on piece `k` as `a·s² + b·s + c` with `s ∈ [0, 1]`.
    fn derivative_coefficients(&self, k: usize) -> (f64, f64, f64) {
        let h = self.xs[k + 1] - self.xs[k];
        let dy = (self.ys[k] - self.ys[k + 1]) / h;
        let (d0, d1) = (self.slopes[k], self.slopes[k + 1]);
        (
            6.0 * dy + 3.0 * d0 + 3.0 * d1,
            -6.0 * dy - 4.0 * d0 - 2.0 * d1,
            d0,
        )
    }
}

/// Maximum of the interpolant's first derivative.
///
/// The derivative is quadratic on each piece, so each piece is checked at
/// both ends and at its interior stationary point. Ties (within relative
/// 1e-12) go to the smaller location.
pub fn max_derivative(curve: &Pchip) -> MaxDerivative {
    let mut best = MaxDerivative {
        t_ns: curve.xs[0],
        slope: curve.slopes[0],
    };
    let mut consider = |t_ns: f64, slope: f64| {
        let tol = 1e-12 * best.slope.abs().max(slope.abs());
        if slope > best.slope + tol {
            best = MaxDerivative { t_ns, slope };
        }
    };
    for k in 0..curve.xs.len() - 1 {
        let (x0, x1) = (curve.xs[k], curve.xs[k + 1]);
        let (a, b, c) = curve.derivative_coefficients(k);
        if a < 0.0 {
            let s = -b / (2.0 * a);
            if s > 0.0 && s < 1.0 {
                consider(x0 + s * (x1 - x0), (a * s + b) * s + c);
            }
        }
        consider(x1, curve.slopes[k + 1]);
    }
    best
}
