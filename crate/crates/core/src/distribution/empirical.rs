// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::DistributionError;

/// Probability mass over quantized inter-arrival times.
///
/// Counts are kept as integers so the mass statistics used by the
/// steepness test can be formed without accumulated rounding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalPdf {
    support: Vec<i64>,
    counts: Vec<u64>,
    total: u64,
    quantum_ns: u64,
}

pub fn build_pdf(samples: &[u64], quantum_ns: u64) -> Result<EmpiricalPdf, DistributionError> {
    let signed: Vec<i64> = samples
        .iter()
        .map(|&s| i64::try_from(s).unwrap_or(i64::MAX))
        .collect();
    build_pdf_signed(&signed, quantum_ns)
}

/// Like [`build_pdf`] for signed values (time differences). Values are
/// floored toward negative infinity onto multiples of `quantum_ns`.
pub fn build_pdf_signed(
    samples: &[i64],
    quantum_ns: u64,
) -> Result<EmpiricalPdf, DistributionError> {
    if samples.is_empty() {
        return Err(DistributionError::EmptySamples);
    }
    if quantum_ns == 0 {
        return Err(DistributionError::ZeroQuantum);
    }
    let q = i64::try_from(quantum_ns).unwrap_or(i64::MAX);
    let mut bins: BTreeMap<i64, u64> = BTreeMap::new();
    for &s in samples {
        *bins.entry(s.div_euclid(q) * q).or_default() += 1;
    }
    let (support, counts) = bins.into_iter().unzip();
    Ok(EmpiricalPdf {
        support,
        counts,
        total: samples.len() as u64,
        quantum_ns,
    })
}

impl EmpiricalPdf {
    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn quantum_ns(&self) -> u64 {
        self.quantum_ns
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.total as f64
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.mass(i)).collect()
    }

    pub fn to_cdf(&self) -> EmpiricalCdf {
        let mut running = 0u64;
        let cumulative = self
            .counts
            .iter()
            .map(|&c| {
                running += c;
                running as f64 / self.total as f64
            })
            .collect();
        EmpiricalCdf {
            support: self.support.clone(),
            cumulative,
            quantum_ns: self.quantum_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    support: Vec<i64>,
    cumulative: Vec<f64>,
    quantum_ns: u64,
}

impl EmpiricalCdf {
    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn quantum_ns(&self) -> u64 {
        self.quantum_ns
    }

    /// Interpolation knots for the binned distribution.
    ///
    /// A sample quantized to `v` lies in `[v, v + quantum)`, so the CDF rises
    /// across that bin: knots `(v, F(v-))` and `(v + quantum, F(v))`, shared
    /// between adjacent occupied bins. A single-point CDF becomes the two
    /// knots `(v, 0)` and `(v + quantum, 1)`.
    pub fn edge_knots(&self) -> (Vec<f64>, Vec<f64>) {
        let q = self.quantum_ns as f64;
        let mut xs = Vec::with_capacity(self.support.len() * 2 + 1);
        let mut ys = Vec::with_capacity(self.support.len() * 2 + 1);
        let mut prev = 0.0;
        for (k, (&v, &f)) in self.support.iter().zip(&self.cumulative).enumerate() {
            let left = v as f64;
            if k == 0 || xs.last().is_some_and(|&x: &f64| x < left) {
                xs.push(left);
                ys.push(prev);
            }
            xs.push(left + q);
            ys.push(f);
            prev = f;
        }
        (xs, ys)
    }
}

/// How the utmost outlier is picked from the outlier set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UtmostMode {
    /// Outlier with the largest probability mass.
    #[default]
    Mass,
    /// Outlier farthest above the regression line.
    Distance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteepnessReport {
    /// Height of the utmost outlier above the regression line.
    pub steepness: f64,
    pub t_utmost_ns: i64,
    pub regression_slope: f64,
    pub regression_intercept: f64,
    pub margin: f64,
    /// `(T_intt, mass)` of every point above the margin, in support order.
    pub outliers: Vec<(i64, f64)>,
}

/// PDF-outlier steepness test.
///
/// Fits `mass ≈ slope·T + intercept` with `slope = std(mass)/std(T)` and
/// `intercept = mean(mass) − slope·mean(T)` (population statistics), marks
/// points more than `var(mass)/2` above the line as outliers, and reports
/// the height of the utmost one. Ties go to the smaller `T`.
pub fn steepness(
    pdf: &EmpiricalPdf,
    mode: UtmostMode,
) -> Result<SteepnessReport, DistributionError> {
    let k = pdf.len();
    if k < 2 {
        return Err(DistributionError::DegeneratePdf(k));
    }
    let kk = k as i128;
    let n = pdf.total as i128;

    // Masses are c/N with mean 1/K; var(mass) = (K·Σc² − N²) / (K²·N²).
    let sum_c2: i128 = pdf.counts.iter().map(|&c| (c as i128) * (c as i128)).sum();
    let var_mass = (kk * sum_c2 - n * n) as f64 / ((kk * kk) as f64 * (n * n) as f64);

    let sum_t: i128 = pdf.support.iter().map(|&t| t as i128).sum();
    let mean_t = sum_t as f64 / k as f64;
    // T − mean(T) = (K·T − ΣT) / K, numerator exact.
    let dev_t: Vec<f64> = pdf
        .support
        .iter()
        .map(|&t| (kk * t as i128 - sum_t) as f64 / k as f64)
        .collect();
    let var_t = dev_t.iter().map(|d| d * d).sum::<f64>() / k as f64;
    if var_t <= 0.0 {
        return Err(DistributionError::DegeneratePdf(k));
    }

    let slope = (var_mass / var_t).sqrt();
    let mean_mass = 1.0 / k as f64;
    let intercept = mean_mass - slope * mean_t;
    let margin = var_mass / 2.0;

    let mut outliers = Vec::new();
    let mut utmost: Option<(usize, f64)> = None;
    for (i, &dt) in dev_t.iter().enumerate() {
        let dm = (kk * pdf.counts[i] as i128 - n) as f64 / (kk * n) as f64;
        let distance = dm - slope * dt;
        if distance <= margin {
            continue;
        }
        outliers.push((pdf.support[i], pdf.mass(i)));
        let better = match utmost {
            None => true,
            Some((j, best)) => match mode {
                UtmostMode::Mass => pdf.counts[i] > pdf.counts[j],
                UtmostMode::Distance => distance > best,
            },
        };
        if better {
            utmost = Some((i, distance));
        }
    }

    let (i, distance) = utmost.ok_or(DistributionError::NoOutlier)?;
    Ok(SteepnessReport {
        steepness: distance,
        t_utmost_ns: pdf.support[i],
        regression_slope: slope,
        regression_intercept: intercept,
        margin,
        outliers,
    })
}
