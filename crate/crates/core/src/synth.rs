// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic traces with known latency ground truth.
//!
//! Requests come in runs of same-op, same-size, contiguous accesses
//! starting at random addresses. Each gap equals the request's service time
//! under a [`ServiceModel`], so the generated trace contains no idle time.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::replay::{ReplayError, ServiceModel, SimulatedDevice};
use crate::trace::{IoRecord, Op, SourceFormat, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub records: usize,
    /// Request sizes in sectors, drawn uniformly per run.
    pub sizes: Vec<u64>,
    pub read_fraction: f64,
    /// Run lengths are uniform in `1..=2·mean_run_len − 1`.
    pub mean_run_len: usize,
    /// Run start addresses are uniform in `[0, lba_space)`.
    pub lba_space: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            records: 10_000,
            sizes: vec![8, 64],
            read_fraction: 0.5,
            mean_run_len: 16,
            lba_space: 1 << 32,
            seed: 0,
        }
    }
}

/// Generated trace plus the service time of every record.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub trace: Trace,
    pub service_ns: Vec<u64>,
}

pub fn generate(cfg: &SynthConfig, model: &ServiceModel) -> Result<Synthetic, ReplayError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut device = SimulatedDevice::new(model.clone(), cfg.seed ^ 0x5EED_0FDE_71CE)?;
    let mut records = Vec::with_capacity(cfg.records);
    let mut service_ns = Vec::with_capacity(cfg.records);
    let mut t = 0u64;
    let max_run = (2 * cfg.mean_run_len).saturating_sub(1).max(1);
    while records.len() < cfg.records {
        let op = if rng.random_bool(cfg.read_fraction) {
            Op::Read
        } else {
            Op::Write
        };
        let size = *cfg.sizes.choose(&mut rng).unwrap_or(&8);
        let run = rng
            .random_range(1..=max_run)
            .min(cfg.records - records.len());
        let mut lba = rng.random_range(0..cfg.lba_space.max(1));
        for _ in 0..run {
            let r = IoRecord::new(t, op, lba, size);
            let s = device.service_ns(&r);
            records.push(r);
            service_ns.push(s);
            t += s;
            lba += size;
        }
    }
    Ok(Synthetic {
        trace: Trace::new(records, SourceFormat::CanonicalCsv, 0)?,
        service_ns,
    })
}
