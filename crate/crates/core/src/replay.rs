// SPDX-License-Identifier: Apache-2.0

//! Re-issue a trace against a device backend, waiting the inferred idle
//! time after each request, and capture the resulting timestamps.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::{FileExt, OpenOptionsExt};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::grouping::is_sequential;
use crate::inference::LatencyModel;
use crate::trace::{Decomposition, IoRecord, Op, SourceFormat, Trace, TraceError, SECTOR_BYTES};

/// Default per-gap timing tolerance for wall-clock replay.
pub const DEFAULT_TIMING_TOLERANCE_NS: u64 = 200_000;

/// Remaining wait below which the wall clock spins instead of sleeping.
const SPIN_THRESHOLD: Duration = Duration::from_millis(1);

const DIRECT_IO_ALIGN: usize = 4096;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("empty decomposition")]
    EmptyDecomposition,
    #[error("decomposition has {decomp} entries for {records} records")]
    Misaligned { records: usize, decomp: usize },
    #[error("backend I/O failed at record {index} ({} requests completed): {source}", partial.len())]
    BackendIo {
        index: usize,
        source: io::Error,
        partial: Box<ReplayLog>,
    },
    #[error("cannot open replay target {path}: {source}")]
    Target { path: PathBuf, source: io::Error },
    #[error("replay target {0} is smaller than one {DIRECT_IO_ALIGN}-byte block")]
    TargetTooSmall(PathBuf),
    #[error("clock deadline overflow at {0} ns")]
    Clock(u64),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invalid jitter sigma {0}")]
    Jitter(f64),
}

/// Monotonic time source used by the replayer.
pub trait Clock {
    fn now_ns(&self) -> u64;
    /// Block until `now_ns() >= deadline_ns`. Never returns early.
    fn sleep_until(&mut self, deadline_ns: u64);
}

/// Real monotonic clock. Coarse sleep until close to the deadline, then spin.
#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn sleep_until(&mut self, deadline_ns: u64) {
        let deadline = self.origin + Duration::from_nanos(deadline_ns);
        loop {
            let now = Instant::now();
            if now >= deadline {
                return;
            }
            let remaining = deadline - now;
            if remaining > SPIN_THRESHOLD {
                std::thread::sleep(remaining - SPIN_THRESHOLD);
            } else {
                std::hint::spin_loop();
            }
        }
    }
}

/// Simulated time: sleeping advances the clock instantly.
#[derive(Debug, Default, Clone)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> u64 {
        self.now
    }

    fn sleep_until(&mut self, deadline_ns: u64) {
        self.now = self.now.max(deadline_ns);
    }
}

/// Parameters of the simulated device: `fixed_op + slope_op·size`, plus a
/// move delay for random accesses and optional Gaussian jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceModel {
    pub fixed_read_ns: f64,
    pub fixed_write_ns: f64,
    pub read_ns_per_sector: f64,
    pub write_ns_per_sector: f64,
    pub movd_ns: f64,
    pub jitter_sigma_ns: f64,
}

impl ServiceModel {
    /// Fixed service time for every request.
    pub fn constant(ns: f64) -> Self {
        ServiceModel {
            fixed_read_ns: ns,
            fixed_write_ns: ns,
            read_ns_per_sector: 0.0,
            write_ns_per_sector: 0.0,
            movd_ns: 0.0,
            jitter_sigma_ns: 0.0,
        }
    }

    pub fn with_jitter(mut self, sigma_ns: f64) -> Self {
        self.jitter_sigma_ns = sigma_ns;
        self
    }

    /// Mean service time, before jitter.
    pub fn mean_ns(&self, op: Op, size_sectors: u64, sequential: bool) -> f64 {
        let (fixed, slope) = match op {
            Op::Read => (self.fixed_read_ns, self.read_ns_per_sector),
            Op::Write => (self.fixed_write_ns, self.write_ns_per_sector),
        };
        let base = fixed + slope * size_sectors as f64;
        if sequential {
            base
        } else {
            base + self.movd_ns
        }
    }

    /// Reads a latency-model file; `jitter_sigma_ns` is optional.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        let model = LatencyModel::from_key_values(kv)?;
        let sigma = kv.parse_value::<f64>("jitter_sigma_ns")?.unwrap_or(0.0);
        Ok(ServiceModel::from(&model).with_jitter(sigma))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_key_values(&KeyValues::load(path)?)
    }
}

impl From<&LatencyModel> for ServiceModel {
    fn from(m: &LatencyModel) -> Self {
        ServiceModel {
            fixed_read_ns: m.t_cdel_read_ns,
            fixed_write_ns: m.t_cdel_write_ns,
            read_ns_per_sector: m.beta_ns_per_sector,
            write_ns_per_sector: m.eta_ns_per_sector,
            movd_ns: m.t_movd_rep_ns,
            jitter_sigma_ns: 0.0,
        }
    }
}

/// Deterministic simulated device. Service times depend only on the model,
/// the seed and the sequence of requests submitted.
#[derive(Debug, Clone)]
pub struct SimulatedDevice {
    model: ServiceModel,
    jitter: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    prev: Option<IoRecord>,
}

impl SimulatedDevice {
    pub fn new(model: ServiceModel, seed: u64) -> Result<Self, ReplayError> {
        let sigma = model.jitter_sigma_ns;
        let jitter = if sigma == 0.0 {
            None
        } else {
            Some(Normal::new(0.0, sigma).map_err(|_| ReplayError::Jitter(sigma))?)
        };
        Ok(SimulatedDevice {
            model,
            jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prev: None,
        })
    }

    pub fn model(&self) -> &ServiceModel {
        &self.model
    }

    /// Service time of the next request, in ns (at least 1).
    pub fn service_ns(&mut self, record: &IoRecord) -> u64 {
        let sequential = self.prev.is_some_and(|p| is_sequential(&p, record));
        self.prev = Some(*record);
        let mut t = self
            .model
            .mean_ns(record.op, record.size_sectors, sequential);
        if let Some(n) = &self.jitter {
            t += n.sample(&mut self.rng);
        }
        t.round().max(1.0) as u64
    }
}

/// File or block device opened for unbuffered I/O. Request offsets are
/// `lba·512` taken modulo the usable size and aligned down to 4 KiB.
#[derive(Debug)]
pub struct FileDevice {
    file: File,
    path: PathBuf,
    usable_bytes: u64,
    buf: Vec<u8>,
    direct: bool,
}

impl FileDevice {
    /// Opens `path` with `O_DIRECT`, falling back to buffered I/O when the
    /// filesystem refuses it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        let path = path.as_ref().to_path_buf();
        let target_err = |source| ReplayError::Target {
            path: path.clone(),
            source,
        };
        let mut opts = OpenOptions::new();
        opts.read(true).write(true);
        let (file, direct) = match opts.clone().custom_flags(libc::O_DIRECT).open(&path) {
            Ok(f) => (f, true),
            Err(e) if e.raw_os_error() == Some(libc::EINVAL) => {
                log::warn!(
                    "{}: direct I/O unsupported, using buffered I/O",
                    path.display()
                );
                (opts.open(&path).map_err(target_err)?, false)
            }
            Err(e) => return Err(target_err(e)),
        };
        let len = file.metadata().map_err(target_err)?.len();
        let usable_bytes = len - len % DIRECT_IO_ALIGN as u64;
        if usable_bytes == 0 {
            return Err(ReplayError::TargetTooSmall(path));
        }
        Ok(FileDevice {
            file,
            path,
            usable_bytes,
            buf: Vec::new(),
            direct,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_direct(&self) -> bool {
        self.direct
    }

    /// Byte offset and length for a request.
    fn placement(&self, record: &IoRecord) -> (u64, usize) {
        let align = DIRECT_IO_ALIGN as u64;
        let bytes = record.size_sectors.saturating_mul(SECTOR_BYTES);
        let len = bytes
            .div_ceil(align)
            .saturating_mul(align)
            .min(self.usable_bytes);
        let span = self.usable_bytes - len + 1;
        let offset = record.lba.saturating_mul(SECTOR_BYTES) % span;
        (offset - offset % align, len as usize)
    }

    /// Aligned slice of `len` bytes inside the scratch buffer.
    fn scratch(&mut self, len: usize) -> &mut [u8] {
        if self.buf.len() < len + DIRECT_IO_ALIGN {
            self.buf = vec![0xA5; len + DIRECT_IO_ALIGN];
        }
        let skew = self.buf.as_ptr().align_offset(DIRECT_IO_ALIGN);
        &mut self.buf[skew..skew + len]
    }

    pub fn submit(&mut self, record: &IoRecord) -> io::Result<()> {
        let (offset, len) = self.placement(record);
        let op = record.op;
        let file = self.file.try_clone()?;
        let buf = self.scratch(len);
        match op {
            Op::Read => file.read_exact_at(buf, offset),
            Op::Write => file.write_all_at(buf, offset),
        }
    }
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum DeviceBackend {
    Simulated(SimulatedDevice),
    RealFile(FileDevice),
}

impl DeviceBackend {
    pub fn simulated(model: ServiceModel, seed: u64) -> Result<Self, ReplayError> {
        Ok(DeviceBackend::Simulated(SimulatedDevice::new(model, seed)?))
    }

    pub fn real_file(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        Ok(DeviceBackend::RealFile(FileDevice::open(path)?))
    }

    /// Performs one request, letting the clock absorb its service time.
    fn execute(&mut self, record: &IoRecord, clock: &mut dyn Clock) -> io::Result<()> {
        match self {
            DeviceBackend::Simulated(dev) => {
                let start = clock.now_ns();
                let service = dev.service_ns(record);
                clock.sleep_until(start.saturating_add(service));
                Ok(())
            }
            DeviceBackend::RealFile(dev) => dev.submit(record),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayEntry {
    pub source_index: usize,
    pub issue_ns: u64,
    pub complete_ns: u64,
}

/// Issue and completion times of replayed requests, in source order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayLog {
    pub entries: Vec<ReplayEntry>,
}

impl ReplayLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gap between consecutive issues.
    pub fn inter_issue_gaps(&self) -> Vec<u64> {
        self.entries
            .windows(2)
            .map(|w| w[1].issue_ns - w[0].issue_ns)
            .collect()
    }
}

/// Replay `trace` one request at a time. After record `i` completes, wait
/// `decomp[i].t_idle_ns` before issuing record `i + 1`.
pub fn replay(
    trace: &Trace,
    decomp: &[Decomposition],
    backend: &mut DeviceBackend,
    clock: &mut dyn Clock,
) -> Result<ReplayLog, ReplayError> {
    if decomp.is_empty() {
        return Err(ReplayError::EmptyDecomposition);
    }
    if decomp.len() != trace.len() {
        return Err(ReplayError::Misaligned {
            records: trace.len(),
            decomp: decomp.len(),
        });
    }
    let mut log = ReplayLog {
        entries: Vec::with_capacity(trace.len()),
    };
    for (index, (record, d)) in trace.records().iter().zip(decomp).enumerate() {
        let issue_ns = clock.now_ns();
        if let Err(source) = backend.execute(record, clock) {
            return Err(ReplayError::BackendIo {
                index,
                source,
                partial: Box::new(log),
            });
        }
        let complete_ns = clock.now_ns();
        log.entries.push(ReplayEntry {
            source_index: index,
            issue_ns,
            complete_ns,
        });
        let resume = complete_ns
            .checked_add(d.t_idle_ns)
            .ok_or(ReplayError::Clock(complete_ns))?;
        clock.sleep_until(resume);
    }
    Ok(log)
}

/// Build the captured trace: arrivals are issue times rebased to the first
/// issue, responses are completion minus issue (at least 1 ns).
pub fn capture_trace(log: &ReplayLog, source: &Trace) -> Result<Trace, ReplayError> {
    let base = log.entries.first().map_or(0, |e| e.issue_ns);
    let records = log
        .entries
        .iter()
        .map(|e| {
            let src = source.records()[e.source_index];
            IoRecord {
                arrival_ns: e.issue_ns - base,
                response_ns: Some((e.complete_ns - e.issue_ns).max(1)),
                async_hint: None,
                ..src
            }
        })
        .collect();
    Ok(Trace::new(records, SourceFormat::CanonicalCsv, 0)?)
}
