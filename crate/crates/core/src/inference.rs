// SPDX-License-Identifier: Apache-2.0

//! Latency-model inference and per-request decomposition.
//!
//! Device time is modeled as linear in request size for sequential
//! accesses (`β·size` for reads, `η·size` for writes) plus a representative
//! move delay for random accesses. Coefficients come from the two steepest
//! sequential `T_intt` CDFs per operation: their horizontal gap divided by
//! their size difference gives the slope, and the steepest CDF's peak
//! location minus `slope·size` gives the channel delay.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::distribution::{
    build_pdf, build_pdf_signed, max_derivative, pchip_fit, steepness, DistributionError,
    EmpiricalPdf, UtmostMode, DEFAULT_QUANTUM_NS,
};
use crate::grouping::{
    classify, label_sequentiality, GroupKey, RequestGroup, Sequentiality, DEFAULT_MIN_SAMPLES,
};
use crate::trace::{inter_arrival_times, Decomposition, Op, Trace, TraceError};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("no {op:?} groups with at least {min_samples} samples")]
    InsufficientGroups { op: Op, min_samples: usize },
    #[error("no request group in the trace has at least {0} samples")]
    NoQualifyingGroups(usize),
    #[error("no latency model and {0} records lack a measured response time")]
    ModelMissing(usize),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("model file: {0}")]
    ModelFile(#[from] ConfigError),
}

/// Sign handling for the quantile-gap distribution between the two
/// steepest CDFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffMode {
    /// `q_steep1(p) − q_steep2(p)`; a gap whose sign disagrees with the size
    /// difference yields a zero coefficient.
    #[default]
    Signed,
    /// `|q_steep1(p) − q_steep2(p)|`.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub quantum_ns: u64,
    pub min_samples: usize,
    pub utmost: UtmostMode,
    pub diff: DiffMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            quantum_ns: DEFAULT_QUANTUM_NS,
            min_samples: DEFAULT_MIN_SAMPLES,
            utmost: UtmostMode::Mass,
            diff: DiffMode::Signed,
        }
    }
}

/// How a coefficient was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum FitMethod {
    /// Gap between the two steepest CDFs.
    TwoCdf,
    /// Only one qualifying size: the steepest CDF's peak is the whole latency.
    SingleCdf,
    /// No qualifying group for this op; copied from the other op.
    Borrowed(Op),
    /// Steepest random-access CDF.
    SteepestRandom,
    /// Nothing to fit from; value is zero.
    Unfitted,
}

/// Which groups produced a field, with their steepness.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldProvenance {
    pub method: FitMethod,
    pub groups: Vec<(GroupKey, f64)>,
    pub notes: Vec<String>,
}

impl FieldProvenance {
    fn new(method: FitMethod, groups: Vec<(GroupKey, f64)>) -> Self {
        FieldProvenance {
            method,
            groups,
            notes: Vec::new(),
        }
    }

    fn note(&mut self, note: impl Into<String>) {
        let note = note.into();
        log::warn!("{note}");
        self.notes.push(note);
    }
}

impl fmt::Display for FieldProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let method = match &self.method {
            FitMethod::TwoCdf => "two-cdf".to_string(),
            FitMethod::SingleCdf => "single-cdf".to_string(),
            FitMethod::Borrowed(op) => format!("borrowed-{op}"),
            FitMethod::SteepestRandom => "steepest-random".to_string(),
            FitMethod::Unfitted => "unfitted".to_string(),
        };
        write!(f, "{method}")?;
        for (key, s) in &self.groups {
            write!(f, " {key}:{s}")?;
        }
        for note in &self.notes {
            write!(f, " ; {note}")?;
        }
        Ok(())
    }
}

impl FromStr for FieldProvenance {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(" ; ");
        let mut head = parts.next().ok_or(())?.split_whitespace();
        let method = match head.next().ok_or(())? {
            "two-cdf" => FitMethod::TwoCdf,
            "single-cdf" => FitMethod::SingleCdf,
            "borrowed-R" => FitMethod::Borrowed(Op::Read),
            "borrowed-W" => FitMethod::Borrowed(Op::Write),
            "steepest-random" => FitMethod::SteepestRandom,
            "unfitted" => FitMethod::Unfitted,
            _ => return Err(()),
        };
        let groups = head
            .map(|g| {
                let (key, s) = g.rsplit_once(':').ok_or(())?;
                Ok((key.parse()?, s.parse().map_err(|_| ())?))
            })
            .collect::<Result<_, ()>>()?;
        Ok(FieldProvenance {
            method,
            groups,
            notes: parts.map(str::to_string).collect(),
        })
    }
}

impl FromStr for GroupKey {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut it = s.splitn(3, '-');
        let sequentiality = match it.next() {
            Some("seq") => Sequentiality::Sequential,
            Some("rand") => Sequentiality::Random,
            _ => return Err(()),
        };
        let op = match it.next() {
            Some("R") => Op::Read,
            Some("W") => Op::Write,
            _ => return Err(()),
        };
        let size_sectors = it.next().ok_or(())?.parse().map_err(|_| ())?;
        Ok(GroupKey {
            sequentiality,
            op,
            size_sectors,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub beta: FieldProvenance,
    pub eta: FieldProvenance,
    pub t_cdel_read: FieldProvenance,
    pub t_cdel_write: FieldProvenance,
    pub t_movd_rep: FieldProvenance,
}

impl Default for Provenance {
    fn default() -> Self {
        let unfitted = FieldProvenance::new(FitMethod::Unfitted, Vec::new());
        Provenance {
            beta: unfitted.clone(),
            eta: unfitted.clone(),
            t_cdel_read: unfitted.clone(),
            t_cdel_write: unfitted.clone(),
            t_movd_rep: unfitted,
        }
    }
}

/// Inferred latency model of the system a trace was collected on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    pub beta_ns_per_sector: f64,
    pub eta_ns_per_sector: f64,
    pub t_cdel_read_ns: f64,
    pub t_cdel_write_ns: f64,
    pub t_movd_rep_ns: f64,
    pub provenance: Provenance,
}

impl LatencyModel {
    /// Model with the given parameters and empty provenance.
    pub fn from_parameters(
        beta: f64,
        eta: f64,
        cdel_read: f64,
        cdel_write: f64,
        movd: f64,
    ) -> Self {
        LatencyModel {
            beta_ns_per_sector: beta,
            eta_ns_per_sector: eta,
            t_cdel_read_ns: cdel_read,
            t_cdel_write_ns: cdel_write,
            t_movd_rep_ns: movd,
            provenance: Provenance::default(),
        }
    }

    pub fn slope(&self, op: Op) -> f64 {
        match op {
            Op::Read => self.beta_ns_per_sector,
            Op::Write => self.eta_ns_per_sector,
        }
    }

    pub fn channel_delay(&self, op: Op) -> f64 {
        match op {
            Op::Read => self.t_cdel_read_ns,
            Op::Write => self.t_cdel_write_ns,
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.beta_ns_per_sector,
            self.eta_ns_per_sector,
            self.t_cdel_read_ns,
            self.t_cdel_write_ns,
            self.t_movd_rep_ns,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("format_version", MODEL_FORMAT_VERSION.to_string());
        kv.push("beta_ns_per_sector", self.beta_ns_per_sector.to_string());
        kv.push("eta_ns_per_sector", self.eta_ns_per_sector.to_string());
        kv.push("t_cdel_read_ns", self.t_cdel_read_ns.to_string());
        kv.push("t_cdel_write_ns", self.t_cdel_write_ns.to_string());
        kv.push("t_movd_rep_ns", self.t_movd_rep_ns.to_string());
        let p = &self.provenance;
        kv.push("provenance.beta", p.beta.to_string());
        kv.push("provenance.eta", p.eta.to_string());
        kv.push("provenance.t_cdel_read", p.t_cdel_read.to_string());
        kv.push("provenance.t_cdel_write", p.t_cdel_write.to_string());
        kv.push("provenance.t_movd_rep", p.t_movd_rep.to_string());
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        let number = |key: &str| -> Result<f64, ConfigError> {
            let v = kv.require(key)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                })
        };
        let provenance = |key: &str| -> FieldProvenance {
            kv.get(key)
                .and_then(|v| v.parse().ok())
                .unwrap_or_else(|| FieldProvenance::new(FitMethod::Unfitted, Vec::new()))
        };
        if let Some(v) = kv.get("format_version") {
            if v != MODEL_FORMAT_VERSION.to_string() {
                return Err(ConfigError::BadValue {
                    key: "format_version".into(),
                    value: v.into(),
                });
            }
        }
        Ok(LatencyModel {
            beta_ns_per_sector: number("beta_ns_per_sector")?,
            eta_ns_per_sector: number("eta_ns_per_sector")?,
            t_cdel_read_ns: number("t_cdel_read_ns")?,
            t_cdel_write_ns: number("t_cdel_write_ns")?,
            t_movd_rep_ns: kv
                .get("t_movd_rep_ns")
                .map_or(Ok(0.0), |_| number("t_movd_rep_ns"))?,
            provenance: Provenance {
                beta: provenance("provenance.beta"),
                eta: provenance("provenance.eta"),
                t_cdel_read: provenance("provenance.t_cdel_read"),
                t_cdel_write: provenance("provenance.t_cdel_write"),
                t_movd_rep: provenance("provenance.t_movd_rep"),
            },
        })
    }

    /// Model file text: a versioned header, then `key = value` lines in ns.
    pub fn to_file_string(&self) -> String {
        let mut s = format!(
            "# trace-revive latency-model v{MODEL_FORMAT_VERSION}\n# units: ns and ns/sector\n"
        );
        for (k, v) in self.to_key_values().iter() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_key_values(&KeyValues::load(path)?)
    }
}

/// Expected device time for one request.
pub fn t_sdev(
    model: &LatencyModel,
    op: Op,
    size_sectors: u64,
    sequentiality: Sequentiality,
) -> f64 {
    let linear = model.slope(op) * size_sectors as f64;
    match sequentiality {
        Sequentiality::Sequential => linear,
        Sequentiality::Random => linear + model.t_movd_rep_ns,
    }
}

/// A group's distribution and where its CDF rises fastest.
#[derive(Debug, Clone)]
struct RankedGroup<'a> {
    group: &'a RequestGroup,
    steepness: f64,
    t_utmost_ns: i64,
}

fn rank_groups<'a>(
    groups: impl Iterator<Item = &'a RequestGroup>,
    cfg: &InferenceConfig,
) -> Result<Vec<RankedGroup<'a>>, DistributionError> {
    let mut ranked = Vec::new();
    for group in groups {
        if group.intt_samples.len() < cfg.min_samples {
            continue;
        }
        let pdf = build_pdf(&group.intt_samples, cfg.quantum_ns)?;
        let entry = match steepness(&pdf, cfg.utmost) {
            Ok(r) => RankedGroup {
                group,
                steepness: r.steepness,
                t_utmost_ns: r.t_utmost_ns,
            },
            // Every sample in one bin: a perfect step, as steep as a CDF gets.
            Err(DistributionError::DegeneratePdf(1)) => RankedGroup {
                group,
                steepness: 1.0,
                t_utmost_ns: pdf.support()[0],
            },
            Err(DistributionError::NoOutlier) => continue,
            Err(e) => return Err(e),
        };
        ranked.push(entry);
    }
    ranked.sort_by(|a, b| {
        b.steepness
            .total_cmp(&a.steepness)
            .then(a.t_utmost_ns.cmp(&b.t_utmost_ns))
            .then(a.group.key.cmp(&b.group.key))
    });
    Ok(ranked)
}

/// Location of the steepest rise of the pchip-fitted CDF of `pdf`, floored
/// to the quantization grid (the bin the peak falls in).
fn peak_location(pdf: &EmpiricalPdf) -> Result<i64, DistributionError> {
    let curve = pchip_fit(&pdf.to_cdf())?;
    let t = max_derivative(&curve).t_ns;
    let q = pdf.quantum_ns() as f64;
    Ok(((t / q).floor() * q) as i64)
}

/// Peak `T_intt` of a group's CDF.
fn group_peak(group: &RequestGroup, quantum_ns: u64) -> Result<f64, DistributionError> {
    Ok(peak_location(&build_pdf(&group.intt_samples, quantum_ns)?)? as f64)
}

/// Differences between matching quantiles of two sample sets.
fn quantile_gaps(a: &[u64], b: &[u64], mode: DiffMode) -> Vec<i64> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let n = a.len().min(b.len());
    let pick = |v: &[u64], j: usize| -> i64 {
        // Midpoint rank of level (j + 0.5) / n.
        let idx = ((2 * j + 1) * v.len()) / (2 * n);
        v[idx.min(v.len() - 1)] as i64
    };
    (0..n)
        .map(|j| {
            let d = pick(&a, j) - pick(&b, j);
            match mode {
                DiffMode::Signed => d,
                DiffMode::Absolute => d.abs(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct OpFit {
    slope: f64,
    cdel: f64,
    slope_provenance: FieldProvenance,
    cdel_provenance: FieldProvenance,
}

fn fit_op(groups: &[RequestGroup], op: Op, cfg: &InferenceConfig) -> Result<OpFit, InferenceError> {
    let sequential = rank_groups(
        groups
            .iter()
            .filter(|g| g.op() == op && g.sequentiality() == Sequentiality::Sequential),
        cfg,
    )?;
    if sequential.len() >= 2 {
        return fit_two_cdf(&sequential[0], &sequential[1], cfg);
    }
    let candidates = if sequential.is_empty() {
        // No sequential group qualifies: fall back to random-access groups.
        rank_groups(groups.iter().filter(|g| g.op() == op), cfg)?
    } else {
        sequential
    };
    let top = candidates
        .first()
        .ok_or(InferenceError::InsufficientGroups {
            op,
            min_samples: cfg.min_samples,
        })?;
    let t_prime = group_peak(top.group, cfg.quantum_ns)?;
    let size = top.group.size_sectors() as f64;
    let used = vec![(top.group.key, top.steepness)];
    let mut slope_provenance = FieldProvenance::new(FitMethod::SingleCdf, used.clone());
    slope_provenance.notes.push(format!(
        "insufficient groups: one qualifying size, T_slat = T'_intt = {t_prime}"
    ));
    Ok(OpFit {
        slope: t_prime / size,
        cdel: 0.0,
        slope_provenance,
        cdel_provenance: FieldProvenance::new(FitMethod::SingleCdf, used),
    })
}

fn fit_two_cdf(
    steep1: &RankedGroup<'_>,
    steep2: &RankedGroup<'_>,
    cfg: &InferenceConfig,
) -> Result<OpFit, InferenceError> {
    let g1 = steep1.group;
    let g2 = steep2.group;
    let used = vec![(g1.key, steep1.steepness), (g2.key, steep2.steepness)];
    let mut slope_provenance = FieldProvenance::new(FitMethod::TwoCdf, used.clone());
    let mut cdel_provenance = FieldProvenance::new(FitMethod::TwoCdf, used);

    let gaps = quantile_gaps(&g1.intt_samples, &g2.intt_samples, cfg.diff);
    let delta_t = peak_location(&build_pdf_signed(&gaps, cfg.quantum_ns)?)? as f64;
    let size1 = g1.size_sectors() as f64;
    let size2 = g2.size_sectors() as f64;
    let delta_size = match cfg.diff {
        DiffMode::Signed => size1 - size2,
        DiffMode::Absolute => (size1 - size2).abs(),
    };
    let mut slope = delta_t / delta_size;
    if slope < 0.0 {
        slope_provenance.note(format!(
            "negative coefficient: ΔT_intt {delta_t} ns against Δsize {delta_size}; clamped to 0"
        ));
        slope = 0.0;
    }

    let t_prime = group_peak(g1, cfg.quantum_ns)?;
    let mut cdel = t_prime - slope * size1;
    if cdel < 0.0 {
        cdel_provenance.note(format!(
            "negative channel delay {cdel} ns (T'_intt {t_prime}); clamped to 0"
        ));
        cdel = 0.0;
    }
    Ok(OpFit {
        slope,
        cdel,
        slope_provenance,
        cdel_provenance,
    })
}

/// Fit β, η and the per-op channel delays. `t_movd_rep_ns` is left at zero;
/// see [`fit_movd`].
pub fn fit_coefficients(
    groups: &[RequestGroup],
    cfg: &InferenceConfig,
) -> Result<LatencyModel, InferenceError> {
    let read = fit_op(groups, Op::Read, cfg);
    let write = fit_op(groups, Op::Write, cfg);
    let borrow = |fit: &OpFit, from: Op| {
        let mut f = fit.clone();
        f.slope_provenance.method = FitMethod::Borrowed(from);
        f.cdel_provenance.method = FitMethod::Borrowed(from);
        f
    };
    let (read, write) = match (read, write) {
        (Ok(r), Ok(w)) => (r, w),
        (Ok(r), Err(InferenceError::InsufficientGroups { .. })) => {
            let w = borrow(&r, Op::Read);
            (r, w)
        }
        (Err(InferenceError::InsufficientGroups { .. }), Ok(w)) => {
            let r = borrow(&w, Op::Write);
            (r, w)
        }
        (
            Err(InferenceError::InsufficientGroups { .. }),
            Err(InferenceError::InsufficientGroups { .. }),
        ) => return Err(InferenceError::NoQualifyingGroups(cfg.min_samples)),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok(LatencyModel {
        beta_ns_per_sector: read.slope,
        eta_ns_per_sector: write.slope,
        t_cdel_read_ns: read.cdel,
        t_cdel_write_ns: write.cdel,
        t_movd_rep_ns: 0.0,
        provenance: Provenance {
            beta: read.slope_provenance,
            eta: write.slope_provenance,
            t_cdel_read: read.cdel_provenance,
            t_cdel_write: write.cdel_provenance,
            t_movd_rep: FieldProvenance::new(FitMethod::Unfitted, Vec::new()),
        },
    })
}

/// Representative move delay: the steepest random group's peak minus the
/// sequential latency the model predicts for its op and size.
pub fn fit_movd(
    groups: &[RequestGroup],
    model: &LatencyModel,
    cfg: &InferenceConfig,
) -> Result<(f64, FieldProvenance), InferenceError> {
    let random = rank_groups(
        groups
            .iter()
            .filter(|g| g.sequentiality() == Sequentiality::Random),
        cfg,
    )?;
    let Some(top) = random.first() else {
        let mut p = FieldProvenance::new(FitMethod::Unfitted, Vec::new());
        p.note(format!(
            "no random groups with at least {} samples; T_movd = 0",
            cfg.min_samples
        ));
        return Ok((0.0, p));
    };
    let g = top.group;
    let t_rand = group_peak(g, cfg.quantum_ns)?;
    let predicted = model.channel_delay(g.op()) + model.slope(g.op()) * g.size_sectors() as f64;
    let mut p = FieldProvenance::new(FitMethod::SteepestRandom, vec![(g.key, top.steepness)]);
    let mut movd = t_rand - predicted;
    if movd < 0.0 {
        p.note(format!("negative move delay {movd} ns; clamped to 0"));
        movd = 0.0;
    }
    Ok((movd, p))
}

/// Classify, fit coefficients and fit the move delay.
pub fn infer(trace: &Trace, cfg: &InferenceConfig) -> Result<LatencyModel, InferenceError> {
    let groups = classify(trace)?;
    infer_from_groups(&groups, cfg)
}

pub fn infer_from_groups(
    groups: &[RequestGroup],
    cfg: &InferenceConfig,
) -> Result<LatencyModel, InferenceError> {
    let mut model = fit_coefficients(groups, cfg)?;
    let (movd, provenance) = fit_movd(groups, &model, cfg)?;
    model.t_movd_rep_ns = movd;
    model.provenance.t_movd_rep = provenance;
    Ok(model)
}

fn round_ns(v: f64) -> u64 {
    if v.is_finite() && v > 0.0 {
        v.round() as u64
    } else {
        0
    }
}

/// Split every record's gap into subsystem latency and idle time.
///
/// Device time comes from the record's measured response when present and
/// from `model` otherwise; channel delay always comes from `model` (zero
/// without one). The last record has no gap and is decomposed with zero idle.
pub fn decompose(
    trace: &Trace,
    model: Option<&LatencyModel>,
) -> Result<Vec<Decomposition>, InferenceError> {
    let records = trace.records();
    if model.is_none() {
        let missing = records.iter().filter(|r| r.response_ns.is_none()).count();
        if missing > 0 {
            return Err(InferenceError::ModelMissing(missing));
        }
    }
    let gaps = if records.len() >= 2 {
        inter_arrival_times(trace)?
    } else {
        Vec::new()
    };
    let labels = label_sequentiality(records);
    Ok(records
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (r, &seq))| {
            let sdev = match (r.response_ns, model) {
                (Some(resp), _) => resp,
                (None, Some(m)) => round_ns(t_sdev(m, r.op, r.size_sectors, seq)),
                (None, None) => unreachable!("checked above"),
            };
            let cdel = model.map_or(0, |m| round_ns(m.channel_delay(r.op)));
            match gaps.get(i) {
                Some(&gap) => Decomposition::from_parts(gap, cdel, sdev),
                None => Decomposition::terminal(cdel, sdev),
            }
        })
        .collect())
}
