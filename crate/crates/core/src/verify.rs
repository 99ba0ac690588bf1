// SPDX-License-Identifier: Apache-2.0

//! Idle-injection verification and baseline reconstruction modes.
//!
//! A plan adds known idle periods after randomly chosen records. After
//! inference on the injected trace, every record whose recovered idle
//! exceeds a threshold is a positive: a true positive if the plan injected
//! there, a false positive otherwise.

use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::replay::SimulatedDevice;
use crate::trace::{inter_arrival_times, Decomposition, Trace, TraceError};

pub const DEFAULT_INJECT_FRACTION: f64 = 0.1;
pub const DEFAULT_IDLE_MIN_NS: u64 = 100_000;
pub const DEFAULT_IDLE_MAX_NS: u64 = 100_000_000;
pub const DEFAULT_ACCELERATION_FACTOR: f64 = 100.0;
pub const DEFAULT_FIXED_THRESHOLD_NS: u64 = 10_000_000;

pub const REPORT_HEADER: &str = "bucket,detection_tp,detection_fp,len_tp,len_fp_ns";

/// Injected-magnitude buckets of the report: `[100 µs, 1 ms)`,
/// `[1 ms, 10 ms)`, `[10 ms, 100 ms]`.
pub const BUCKETS: [(&str, Range<u64>); 3] = [
    ("100us-1ms", 100_000..1_000_000),
    ("1ms-10ms", 1_000_000..10_000_000),
    ("10ms-100ms", 10_000_000..100_000_001),
];

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("injection index {index} out of range for {len} records")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("acceleration factor must be positive and finite, got {0}")]
    ZeroFactor(f64),
    #[error("invalid injection settings: {0}")]
    BadPlan(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionConfig {
    pub fraction: f64,
    pub idle_min_ns: u64,
    pub idle_max_ns: u64,
    pub seed: u64,
    /// Skip records whose existing gap is already above this.
    pub exclude_gap_above_ns: Option<u64>,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            fraction: DEFAULT_INJECT_FRACTION,
            idle_min_ns: DEFAULT_IDLE_MIN_NS,
            idle_max_ns: DEFAULT_IDLE_MAX_NS,
            seed: 0,
            exclude_gap_above_ns: None,
        }
    }
}

/// Idle periods to add after specific records, sorted by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionPlan {
    pub entries: Vec<(usize, u64)>,
    pub seed: u64,
    pub idle_min_ns: u64,
    pub idle_max_ns: u64,
}

impl InjectionPlan {
    pub fn empty() -> Self {
        InjectionPlan {
            entries: Vec::new(),
            seed: 0,
            idle_min_ns: 0,
            idle_max_ns: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_idle_ns(&self) -> u64 {
        self.entries.iter().map(|&(_, idle)| idle).sum()
    }

    /// Injected idle per record index (0 where nothing was injected).
    pub fn per_record(&self, len: usize) -> Vec<u64> {
        let mut v = vec![0; len];
        for &(i, idle) in &self.entries {
            if i < len {
                v[i] = idle;
            }
        }
        v
    }
}

/// Choose `round(fraction·N)` distinct records among those with a successor
/// (partial Fisher–Yates over the eligible indices), then draw each one's
/// idle uniformly from `[idle_min, idle_max]` in index order.
pub fn plan_injection(trace: &Trace, cfg: &InjectionConfig) -> Result<InjectionPlan, VerifyError> {
    if !(0.0..=1.0).contains(&cfg.fraction) || cfg.idle_min_ns > cfg.idle_max_ns {
        return Err(VerifyError::BadPlan(format!(
            "fraction {} and idle range [{}, {}] ns",
            cfg.fraction, cfg.idle_min_ns, cfg.idle_max_ns
        )));
    }
    let gaps = inter_arrival_times(trace)?;
    let mut eligible: Vec<usize> = (0..gaps.len())
        .filter(|&i| cfg.exclude_gap_above_ns.is_none_or(|th| gaps[i] <= th))
        .collect();
    let k = ((cfg.fraction * trace.len() as f64).round() as usize).min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..k {
        let j = rng.random_range(i..eligible.len());
        eligible.swap(i, j);
    }
    let mut chosen = eligible[..k].to_vec();
    chosen.sort_unstable();
    let entries = chosen
        .into_iter()
        .map(|i| (i, rng.random_range(cfg.idle_min_ns..=cfg.idle_max_ns)))
        .collect();
    Ok(InjectionPlan {
        entries,
        seed: cfg.seed,
        idle_min_ns: cfg.idle_min_ns,
        idle_max_ns: cfg.idle_max_ns,
    })
}

/// Lengthen the gap after each planned record by its idle.
pub fn inject(trace: &Trace, plan: &InjectionPlan) -> Result<Trace, VerifyError> {
    let len = trace.len();
    if let Some(&(index, _)) = plan.entries.iter().find(|(i, _)| *i >= len) {
        return Err(VerifyError::IndexOutOfRange { index, len });
    }
    if len < 2 {
        return Ok(trace.clone());
    }
    let extra = plan.per_record(len);
    let gaps: Vec<u64> = inter_arrival_times(trace)?
        .iter()
        .zip(&extra)
        .map(|(g, e)| g + e)
        .collect();
    Ok(trace.with_gaps(&gaps))
}

/// Detection and length metrics over one set of injected records.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketScore {
    pub label: String,
    pub injected: usize,
    pub true_positives: usize,
    pub detection_tp: f64,
    /// Mean of estimated / injected idle over true positives.
    pub len_tp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub total_records: usize,
    pub false_positives: usize,
    pub detection_fp: f64,
    /// Mean estimated idle over false positives.
    pub len_fp_ns: f64,
    pub overall: BucketScore,
    pub buckets: Vec<BucketScore>,
}

impl VerificationReport {
    /// Report CSV. False-positive columns are trace-wide and repeat on every
    /// row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# trace-revive verification-report v1\n{REPORT_HEADER}\n");
        for b in std::iter::once(&self.overall).chain(&self.buckets) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                b.label, b.detection_tp, self.detection_fp, b.len_tp, self.len_fp_ns
            );
        }
        s
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Score the injected records whose idle lies in `range`.
pub fn score_range(
    plan: &InjectionPlan,
    decomp: &[Decomposition],
    tp_threshold_ns: u64,
    label: &str,
    range: Range<u64>,
) -> BucketScore {
    let selected: Vec<(usize, u64)> = plan
        .entries
        .iter()
        .copied()
        .filter(|(_, idle)| range.contains(idle))
        .collect();
    let tp: Vec<f64> = selected
        .iter()
        .filter_map(|&(i, injected)| {
            let est = decomp.get(i)?.t_idle_ns;
            (est > tp_threshold_ns).then(|| est as f64 / injected as f64)
        })
        .collect();
    BucketScore {
        label: label.to_string(),
        injected: selected.len(),
        true_positives: tp.len(),
        detection_tp: if selected.is_empty() {
            0.0
        } else {
            tp.len() as f64 / selected.len() as f64
        },
        len_tp: mean(tp.into_iter()),
    }
}

pub fn score(
    plan: &InjectionPlan,
    decomp: &[Decomposition],
    tp_threshold_ns: u64,
) -> Result<VerificationReport, VerifyError> {
    if let Some(&(index, _)) = plan.entries.iter().find(|(i, _)| *i >= decomp.len()) {
        return Err(VerifyError::IndexOutOfRange {
            index,
            len: decomp.len(),
        });
    }
    let injected = plan.per_record(decomp.len());
    let fp: Vec<f64> = decomp
        .iter()
        .zip(&injected)
        .filter(|(d, &inj)| inj == 0 && d.t_idle_ns > tp_threshold_ns)
        .map(|(d, _)| d.t_idle_ns as f64)
        .collect();
    Ok(VerificationReport {
        total_records: decomp.len(),
        false_positives: fp.len(),
        detection_fp: if decomp.is_empty() {
            0.0
        } else {
            fp.len() as f64 / decomp.len() as f64
        },
        len_fp_ns: mean(fp.into_iter()),
        overall: score_range(plan, decomp, tp_threshold_ns, "all", 0..u64::MAX),
        buckets: BUCKETS
            .iter()
            .map(|(label, r)| score_range(plan, decomp, tp_threshold_ns, label, r.clone()))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    Acceleration(f64),
    Revision,
    FixedTh(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineOutput {
    Trace(Trace),
    Decomposition(Vec<Decomposition>),
}

/// Apply a baseline. Acceleration returns a rescaled trace; Revision and
/// FixedTh return a decomposition to replay.
pub fn baseline(trace: &Trace, mode: Baseline) -> Result<BaselineOutput, VerifyError> {
    Ok(match mode {
        Baseline::Acceleration(f) => BaselineOutput::Trace(accelerate(trace, f)?),
        Baseline::Revision => BaselineOutput::Decomposition(revision_decomposition(trace)),
        Baseline::FixedTh(th) => {
            BaselineOutput::Decomposition(fixed_threshold_decomposition(trace, th))
        }
    })
}

/// Divide every gap by `factor` (rounded to the nearest ns).
pub fn accelerate(trace: &Trace, factor: f64) -> Result<Trace, VerifyError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(VerifyError::ZeroFactor(factor));
    }
    if trace.len() < 2 {
        return Ok(trace.clone());
    }
    let gaps: Vec<u64> = inter_arrival_times(trace)?
        .iter()
        .map(|&g| (g as f64 / factor).round() as u64)
        .collect();
    Ok(trace.with_gaps(&gaps))
}

fn gaps_or_empty(trace: &Trace) -> Vec<u64> {
    inter_arrival_times(trace).unwrap_or_default()
}

/// Every gap is latency; nothing is idle.
pub fn revision_decomposition(trace: &Trace) -> Vec<Decomposition> {
    let mut d: Vec<Decomposition> = gaps_or_empty(trace)
        .into_iter()
        .map(|g| Decomposition::from_parts(g, 0, g))
        .collect();
    d.push(Decomposition::terminal(0, 0));
    d
}

/// Anything beyond `threshold_ns` in a gap is idle.
pub fn fixed_threshold_decomposition(trace: &Trace, threshold_ns: u64) -> Vec<Decomposition> {
    let mut d: Vec<Decomposition> = gaps_or_empty(trace)
        .into_iter()
        .map(|g| Decomposition::from_parts(g, 0, g.min(threshold_ns)))
        .collect();
    d.push(Decomposition::terminal(0, 0));
    d
}

/// Give every record the service time `device` assigns it, in order.
pub fn attach_service(trace: &Trace, device: &mut SimulatedDevice) -> Trace {
    trace.map_records(|r| r.with_response(device.service_ns(r)))
}

/// Idle surviving at the injected records of a reconstructed trace:
/// `Σ max(0, gap − response)` over planned indices. Records without a
/// response count their whole gap.
pub fn preserved_idle_ns(plan: &InjectionPlan, reconstructed: &Trace) -> Result<u64, VerifyError> {
    let records = reconstructed.records();
    let mut total = 0;
    for &(index, _) in &plan.entries {
        if index >= records.len() {
            return Err(VerifyError::IndexOutOfRange {
                index,
                len: records.len(),
            });
        }
        if let Some(next) = records.get(index + 1) {
            let gap = next.arrival_ns - records[index].arrival_ns;
            total += gap.saturating_sub(records[index].response_ns.unwrap_or(0));
        }
    }
    Ok(total)
}
