// SPDX-License-Identifier: Apache-2.0

//! Readers for source trace formats and the canonical CSV writer.
//!
//! Supported inputs:
//!
//! * MSR Cambridge CSV: `Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime`
//!   with timestamps and response times in 100 ns ticks, offsets and sizes in bytes.
//! * FIU text: `ts pid process lba size op major minor [md5]`, whitespace separated.
//!   `ts` with a decimal point is seconds; a bare integer is nanoseconds. Sizes are
//!   already 512-byte blocks. Eight columns means the md5 column is absent.
//! * Canonical CSV: `arrival_ns,op,lba,size_sectors,response_ns`.
//!
//! Lines that fail to parse are counted and skipped; more than 1% malformed
//! lines fails the whole parse.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::trace::{IoRecord, Op, SourceFormat, Trace, TraceError, SECTOR_BYTES};

pub const CANONICAL_HEADER: &str = "arrival_ns,op,lba,size_sectors,response_ns";

/// Fraction of malformed lines tolerated before a parse is rejected.
pub const MALFORMED_TOLERANCE: f64 = 0.01;

const MSRC_TICK_NS: u64 = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown trace format `{0}` (expected msrc, fiu or canonical)")]
    UnknownFormat(String),
    #[error("{count} of {total} lines are malformed")]
    TooManyMalformedLines { count: usize, total: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Which source format to read, plus format-specific selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatSpec {
    pub format: SourceFormat,
    /// MSRC only: keep only this DiskNumber. Sequentiality is classified per
    /// trace, so interleaved disks should be split here.
    pub disk: Option<u32>,
}

impl FormatSpec {
    pub fn new(format: SourceFormat) -> Self {
        FormatSpec { format, disk: None }
    }

    pub fn with_disk(mut self, disk: Option<u32>) -> Self {
        self.disk = disk;
        self
    }

    pub fn delimiter(&self) -> Option<char> {
        match self.format {
            SourceFormat::MsrcCsv | SourceFormat::CanonicalCsv => Some(','),
            SourceFormat::FiuText => None,
        }
    }

    pub fn time_unit_ns(&self) -> u64 {
        match self.format {
            SourceFormat::MsrcCsv => MSRC_TICK_NS,
            SourceFormat::FiuText => 1_000_000_000,
            SourceFormat::CanonicalCsv => 1,
        }
    }
}

impl FromStr for FormatSpec {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let format = match s.to_ascii_lowercase().as_str() {
            "msrc" | "msrc-csv" => SourceFormat::MsrcCsv,
            "fiu" | "fiu-text" => SourceFormat::FiuText,
            "canonical" | "csv" => SourceFormat::CanonicalCsv,
            _ => return Err(IngestError::UnknownFormat(s.to_string())),
        };
        Ok(FormatSpec::new(format))
    }
}

/// Outcome of parsing one line.
enum Line {
    Record { abs_ns: u64, record: IoRecord },
    Skip,
    Malformed,
}

pub fn parse(path: impl AsRef<Path>, spec: FormatSpec) -> Result<Trace, IngestError> {
    let file = File::open(path)?;
    parse_reader(BufReader::new(file), spec)
}

pub fn parse_reader<R: BufRead>(reader: R, spec: FormatSpec) -> Result<Trace, IngestError> {
    let mut parsed: Vec<(u64, IoRecord)> = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 && spec.format == SourceFormat::CanonicalCsv && line == CANONICAL_HEADER {
            continue;
        }
        total += 1;
        let outcome = match spec.format {
            SourceFormat::MsrcCsv => parse_msrc_line(line, spec.disk),
            SourceFormat::FiuText => parse_fiu_line(line),
            SourceFormat::CanonicalCsv => parse_canonical_line(line),
        };
        match outcome {
            Line::Record { abs_ns, record } => parsed.push((abs_ns, record)),
            Line::Skip => total -= 1,
            Line::Malformed => malformed += 1,
        }
    }
    if total > 0 && malformed as f64 > MALFORMED_TOLERANCE * total as f64 {
        return Err(IngestError::TooManyMalformedLines {
            count: malformed,
            total,
        });
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed lines of {total}");
    }

    let epoch_ns = match spec.format {
        SourceFormat::CanonicalCsv => 0,
        _ => parsed.iter().map(|(abs, _)| *abs).min().unwrap_or(0),
    };
    let records = parsed
        .into_iter()
        .map(|(abs, mut r)| {
            r.arrival_ns = abs - epoch_ns;
            r
        })
        .collect();
    Ok(Trace::new(records, spec.format, epoch_ns)?)
}

fn parse_msrc_line(line: &str, disk_filter: Option<u32>) -> Line {
    let parse = || -> Option<Line> {
        let mut it = line.split(',');
        let ticks: u64 = it.next()?.trim().parse().ok()?;
        let _host = it.next()?;
        let disk: u32 = it.next()?.trim().parse().ok()?;
        let op = match it.next()?.trim() {
            "Read" => Op::Read,
            "Write" => Op::Write,
            _ => return None,
        };
        let offset: u64 = it.next()?.trim().parse().ok()?;
        let size_bytes: u64 = it.next()?.trim().parse().ok()?;
        let response_ticks: u64 = it.next()?.trim().parse().ok()?;
        if it.next().is_some() || !offset.is_multiple_of(SECTOR_BYTES) || size_bytes == 0 {
            return None;
        }
        if disk_filter.is_some_and(|d| d != disk) {
            return Some(Line::Skip);
        }
        let abs_ns = ticks.checked_mul(MSRC_TICK_NS)?;
        let response_ns = response_ticks.checked_mul(MSRC_TICK_NS)?;
        let mut record = IoRecord::new(
            0,
            op,
            offset / SECTOR_BYTES,
            size_bytes.div_ceil(SECTOR_BYTES),
        );
        record.response_ns = (response_ns > 0).then_some(response_ns);
        Some(Line::Record { abs_ns, record })
    };
    parse().unwrap_or(Line::Malformed)
}

fn parse_fiu_line(line: &str) -> Line {
    let parse = || -> Option<Line> {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 8 && cols.len() != 9 {
            return None;
        }
        let abs_ns = parse_fiu_timestamp(cols[0])?;
        let lba: u64 = cols[3].parse().ok()?;
        let size: u64 = cols[4].parse().ok()?;
        let op = match cols[5] {
            "R" | "r" => Op::Read,
            "W" | "w" => Op::Write,
            _ => return None,
        };
        if size == 0 {
            return None;
        }
        Some(Line::Record {
            abs_ns,
            record: IoRecord::new(0, op, lba, size),
        })
    };
    parse().unwrap_or(Line::Malformed)
}

/// Seconds with an optional fraction (`12.000345`), or integer nanoseconds.
fn parse_fiu_timestamp(token: &str) -> Option<u64> {
    match token.split_once('.') {
        None => token.parse().ok(),
        Some((secs, frac)) => {
            let secs: u64 = if secs.is_empty() {
                0
            } else {
                secs.parse().ok()?
            };
            if !frac.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let digits = &frac[..frac.len().min(9)];
            let mut nanos: u64 = if digits.is_empty() {
                0
            } else {
                digits.parse().ok()?
            };
            for _ in digits.len()..9 {
                nanos *= 10;
            }
            secs.checked_mul(1_000_000_000)?.checked_add(nanos)
        }
    }
}

fn parse_canonical_line(line: &str) -> Line {
    let parse = || -> Option<Line> {
        let mut it = line.split(',');
        let arrival_ns: u64 = it.next()?.parse().ok()?;
        let op = match it.next()? {
            "R" => Op::Read,
            "W" => Op::Write,
            _ => return None,
        };
        let lba: u64 = it.next()?.parse().ok()?;
        let size: u64 = it.next()?.parse().ok()?;
        let response = it.next()?;
        if it.next().is_some() || size == 0 {
            return None;
        }
        let mut record = IoRecord::new(arrival_ns, op, lba, size);
        if !response.is_empty() {
            let response: u64 = response.parse().ok()?;
            if response == 0 {
                return None;
            }
            record.response_ns = Some(response);
        }
        Some(Line::Record {
            abs_ns: arrival_ns,
            record,
        })
    };
    parse().unwrap_or(Line::Malformed)
}

pub fn write_canonical(trace: &Trace, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_canonical_to(trace, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_canonical_to<W: Write>(trace: &Trace, out: &mut W) -> io::Result<()> {
    writeln!(out, "{CANONICAL_HEADER}")?;
    for r in trace.records() {
        write!(
            out,
            "{},{},{},{},",
            r.arrival_ns,
            r.op.as_char(),
            r.lba,
            r.size_sectors
        )?;
        if let Some(resp) = r.response_ns {
            write!(out, "{resp}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}
