// SPDX-License-Identifier: Apache-2.0

//! Restore asynchronous submission timing in a captured trace.

use thiserror::Error;

use crate::trace::{Decomposition, Trace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PostprocessError {
    #[error("old decomposition has {old} entries, new trace has {new} records")]
    Misaligned { old: usize, new: usize },
    #[error("record {0} of the captured trace has no response time")]
    MissingResponse(usize),
}

/// For every index the old trace submitted asynchronously, shorten the new
/// gap after it by the new response time (clamped at zero) and rebuild the
/// timeline from the adjusted gaps. Those records get `async_hint = true`.
pub fn restore_async(
    old_decomp: &[Decomposition],
    new_trace: &Trace,
) -> Result<Trace, PostprocessError> {
    let records = new_trace.records();
    if old_decomp.len() != records.len() {
        return Err(PostprocessError::Misaligned {
            old: old_decomp.len(),
            new: records.len(),
        });
    }
    if let Some(i) = records.iter().position(|r| r.response_ns.is_none()) {
        return Err(PostprocessError::MissingResponse(i));
    }
    let gaps: Vec<u64> = records
        .windows(2)
        .zip(old_decomp)
        .map(|(w, d)| {
            let gap = w[1].arrival_ns - w[0].arrival_ns;
            if d.is_async {
                gap.saturating_sub(w[0].response_ns.unwrap_or(0))
            } else {
                gap
            }
        })
        .collect();
    let mut out = new_trace.with_gaps(&gaps);
    let flags: Vec<bool> = old_decomp.iter().map(|d| d.is_async).collect();
    let mut it = flags.into_iter();
    out = out.map_records(|r| {
        let mut r = *r;
        if it.next() == Some(true) {
            r.async_hint = Some(true);
        }
        r
    });
    Ok(out)
}
