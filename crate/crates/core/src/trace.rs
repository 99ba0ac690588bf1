// SPDX-License-Identifier: Apache-2.0

//! In-memory block trace model and the per-request timing quantities
//! derived from it.
//!
//! All times are integer nanoseconds. `arrival_ns` is relative to
//! [`Trace::epoch_ns`], which holds the absolute origin from the source
//! trace (when the source format carries one).

use std::fmt;

use thiserror::Error;

/// Bytes per logical sector.
pub const SECTOR_BYTES: u64 = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace has {0} records; at least {1} required")]
    EmptyTrace(usize, usize),
    #[error("record {index}: size_sectors must be >= 1")]
    ZeroSize { index: usize },
    #[error("record {index}: response_ns must be > 0 when present")]
    ZeroResponse { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn as_char(self) -> char {
        match self {
            Op::Read => 'R',
            Op::Write => 'W',
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// One block request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoRecord {
    pub arrival_ns: u64,
    pub op: Op,
    /// 512-byte sector address.
    pub lba: u64,
    pub size_sectors: u64,
    /// Measured device service time, when the source recorded completions.
    pub response_ns: Option<u64>,
    pub async_hint: Option<bool>,
}

impl IoRecord {
    pub fn new(arrival_ns: u64, op: Op, lba: u64, size_sectors: u64) -> Self {
        IoRecord {
            arrival_ns,
            op,
            lba,
            size_sectors,
            response_ns: None,
            async_hint: None,
        }
    }

    pub fn with_response(mut self, response_ns: u64) -> Self {
        self.response_ns = Some(response_ns);
        self
    }

    /// First sector after this request.
    pub fn end_lba(&self) -> u64 {
        self.lba.saturating_add(self.size_sectors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    MsrcCsv,
    FiuText,
    CanonicalCsv,
}

/// Ordered sequence of block requests.
///
/// Construction sorts by arrival (stable, so batch-submitted requests keep
/// their input order) and validates every record. A `Trace` is never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    records: Vec<IoRecord>,
    source_format: SourceFormat,
    epoch_ns: u64,
}

impl Trace {
    pub fn new(
        mut records: Vec<IoRecord>,
        source_format: SourceFormat,
        epoch_ns: u64,
    ) -> Result<Self, TraceError> {
        if records.is_empty() {
            return Err(TraceError::EmptyTrace(0, 1));
        }
        for (index, r) in records.iter().enumerate() {
            if r.size_sectors == 0 {
                return Err(TraceError::ZeroSize { index });
            }
            if r.response_ns == Some(0) {
                return Err(TraceError::ZeroResponse { index });
            }
        }
        records.sort_by_key(|r| r.arrival_ns);
        Ok(Trace {
            records,
            source_format,
            epoch_ns,
        })
    }

    pub fn records(&self) -> &[IoRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<IoRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn source_format(&self) -> SourceFormat {
        self.source_format
    }

    pub fn epoch_ns(&self) -> u64 {
        self.epoch_ns
    }

    /// True when every record carries a measured service time.
    pub fn has_full_response(&self) -> bool {
        self.records.iter().all(|r| r.response_ns.is_some())
    }

    /// Copy of this trace with measured service times removed.
    pub fn without_response(&self) -> Trace {
        let records = self
            .records
            .iter()
            .map(|r| IoRecord {
                response_ns: None,
                ..*r
            })
            .collect();
        Trace {
            records,
            source_format: self.source_format,
            epoch_ns: self.epoch_ns,
        }
    }

    /// Rebuild a trace from per-record gaps, keeping the first arrival and
    /// every non-timing field. `gaps[i]` is the distance from record `i` to
    /// record `i + 1`, so `gaps.len()` must be `len() - 1`.
    pub(crate) fn with_gaps(&self, gaps: &[u64]) -> Trace {
        debug_assert_eq!(gaps.len() + 1, self.records.len());
        let mut records = self.records.clone();
        let mut t = records[0].arrival_ns;
        for (r, gap) in records[1..].iter_mut().zip(gaps) {
            t += gap;
            r.arrival_ns = t;
        }
        Trace {
            records,
            source_format: self.source_format,
            epoch_ns: self.epoch_ns,
        }
    }

    pub(crate) fn map_records(&self, f: impl FnMut(&IoRecord) -> IoRecord) -> Trace {
        Trace {
            records: self.records.iter().map(f).collect(),
            source_format: self.source_format,
            epoch_ns: self.epoch_ns,
        }
    }
}

/// Gap from each record to its successor (`T_intt`). Returns `len - 1` values.
pub fn inter_arrival_times(trace: &Trace) -> Result<Vec<u64>, TraceError> {
    let records = trace.records();
    if records.len() < 2 {
        return Err(TraceError::EmptyTrace(records.len(), 2));
    }
    Ok(records
        .windows(2)
        .map(|w| w[1].arrival_ns - w[0].arrival_ns)
        .collect())
}

/// Split of one request's inter-arrival gap into subsystem latency and idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Decomposition {
    pub t_intt_ns: u64,
    pub t_slat_ns: u64,
    pub t_cdel_ns: u64,
    pub t_sdev_ns: u64,
    pub t_idle_ns: u64,
    /// Submitted before the previous request could have completed.
    pub is_async: bool,
}

impl Decomposition {
    /// Build from a gap and its latency components. Enforces
    /// `slat = cdel + sdev` and `idle = max(0, intt - slat)`. For a
    /// synchronous request whose gap falls between `sdev` and `slat`, the
    /// channel delay is clipped to what fits in the gap.
    pub fn from_parts(t_intt_ns: u64, t_cdel_ns: u64, t_sdev_ns: u64) -> Self {
        let is_async = t_intt_ns < t_sdev_ns;
        let t_cdel_ns = if is_async {
            t_cdel_ns
        } else {
            t_cdel_ns.min(t_intt_ns - t_sdev_ns)
        };
        let t_slat_ns = t_cdel_ns + t_sdev_ns;
        Decomposition {
            t_intt_ns,
            t_slat_ns,
            t_cdel_ns,
            t_sdev_ns,
            t_idle_ns: t_intt_ns.saturating_sub(t_slat_ns),
            is_async,
        }
    }

    /// Decomposition of the final record, which has no successor.
    pub fn terminal(t_cdel_ns: u64, t_sdev_ns: u64) -> Self {
        Decomposition {
            t_intt_ns: 0,
            t_slat_ns: t_cdel_ns + t_sdev_ns,
            t_cdel_ns,
            t_sdev_ns,
            t_idle_ns: 0,
            is_async: false,
        }
    }

    /// Checks the structural invariants.
    pub fn is_consistent(&self) -> bool {
        self.t_slat_ns == self.t_cdel_ns + self.t_sdev_ns
            && self.t_idle_ns == self.t_intt_ns.saturating_sub(self.t_slat_ns)
            && (!self.is_async || self.t_idle_ns == 0)
    }
}
