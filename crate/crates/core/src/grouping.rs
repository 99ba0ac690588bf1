// SPDX-License-Identifier: Apache-2.0

//! Buckets requests by (sequentiality, operation, exact size).

use std::collections::BTreeMap;
use std::fmt;

use crate::trace::{inter_arrival_times, IoRecord, Op, Trace, TraceError};

/// Groups with fewer inter-arrival samples than this are left out of the
/// steepness competition.
pub const DEFAULT_MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sequentiality {
    Sequential,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub sequentiality: Sequentiality,
    pub op: Op,
    pub size_sectors: u64,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq = match self.sequentiality {
            Sequentiality::Sequential => "seq",
            Sequentiality::Random => "rand",
        };
        write!(f, "{seq}-{}-{}", self.op, self.size_sectors)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestGroup {
    pub key: GroupKey,
    pub member_indices: Vec<usize>,
    /// `T_intt` of every member that has a successor, in trace order.
    pub intt_samples: Vec<u64>,
}

impl RequestGroup {
    pub fn sequentiality(&self) -> Sequentiality {
        self.key.sequentiality
    }

    pub fn op(&self) -> Op {
        self.key.op
    }

    pub fn size_sectors(&self) -> u64 {
        self.key.size_sectors
    }
}

/// A request is sequential when it continues the previous request's address
/// range with the same operation. The first request is random.
pub fn is_sequential(prev: &IoRecord, cur: &IoRecord) -> bool {
    prev.op == cur.op && cur.lba == prev.end_lba()
}

/// Per-record sequentiality labels.
pub fn label_sequentiality(records: &[IoRecord]) -> Vec<Sequentiality> {
    let mut labels = Vec::with_capacity(records.len());
    if !records.is_empty() {
        labels.push(Sequentiality::Random);
    }
    labels.extend(records.windows(2).map(|w| {
        if is_sequential(&w[0], &w[1]) {
            Sequentiality::Sequential
        } else {
            Sequentiality::Random
        }
    }));
    labels
}

pub fn group_key(record: &IoRecord, sequentiality: Sequentiality) -> GroupKey {
    GroupKey {
        sequentiality,
        op: record.op,
        size_sectors: record.size_sectors,
    }
}

/// Partition the trace into request groups, ordered by key.
pub fn classify(trace: &Trace) -> Result<Vec<RequestGroup>, TraceError> {
    let gaps = inter_arrival_times(trace)?;
    let records = trace.records();
    let labels = label_sequentiality(records);

    let mut groups: BTreeMap<GroupKey, RequestGroup> = BTreeMap::new();
    for (i, (record, &seq)) in records.iter().zip(&labels).enumerate() {
        let key = group_key(record, seq);
        let group = groups.entry(key).or_insert_with(|| RequestGroup {
            key,
            member_indices: Vec::new(),
            intt_samples: Vec::new(),
        });
        group.member_indices.push(i);
        if let Some(&gap) = gaps.get(i) {
            group.intt_samples.push(gap);
        }
    }
    Ok(groups.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SourceFormat;
    use proptest::prelude::*;

    fn trace(records: Vec<IoRecord>) -> Trace {
        Trace::new(records, SourceFormat::CanonicalCsv, 0).unwrap()
    }

    #[test]
    fn contiguous_successor_is_sequential() {
        let t = trace(vec![
            IoRecord::new(0, Op::Read, 0, 8),
            IoRecord::new(10, Op::Read, 8, 8),
        ]);
        assert_eq!(
            label_sequentiality(t.records()),
            vec![Sequentiality::Random, Sequentiality::Sequential]
        );
    }

    #[test]
    fn jump_is_random() {
        let t = trace(vec![
            IoRecord::new(0, Op::Read, 0, 8),
            IoRecord::new(10, Op::Read, 1000, 8),
        ]);
        assert_eq!(label_sequentiality(t.records())[1], Sequentiality::Random);
    }

    #[test]
    fn op_change_breaks_sequentiality() {
        let t = trace(vec![
            IoRecord::new(0, Op::Read, 0, 8),
            IoRecord::new(10, Op::Write, 8, 8),
        ]);
        assert_eq!(label_sequentiality(t.records())[1], Sequentiality::Random);
    }

    #[test]
    fn alternating_trace_splits_evenly() {
        // Odd records continue their predecessor, even records jump.
        let mut records = Vec::new();
        let mut lba = 0u64;
        for i in 0..100u64 {
            if i % 2 == 0 {
                lba = 10_000 * (i + 1);
            }
            records.push(IoRecord::new(i * 100, Op::Read, lba, 8));
            lba += 8;
        }
        let t = trace(records.clone());
        let groups = classify(&t).unwrap();

        // Independent linear re-scan.
        let mut seq = 0;
        let mut rand = 0;
        for i in 0..records.len() {
            if i > 0 && records[i].lba == records[i - 1].lba + records[i - 1].size_sectors {
                seq += 1;
            } else {
                rand += 1;
            }
        }
        assert_eq!((seq, rand), (50, 50));
        let count = |s: Sequentiality| {
            groups
                .iter()
                .filter(|g| g.sequentiality() == s)
                .map(|g| g.member_indices.len())
                .sum::<usize>()
        };
        assert_eq!(count(Sequentiality::Sequential), seq);
        assert_eq!(count(Sequentiality::Random), rand);
    }

    #[test]
    fn last_record_has_no_sample() {
        let t = trace(vec![
            IoRecord::new(0, Op::Read, 0, 8),
            IoRecord::new(10, Op::Read, 8, 8),
            IoRecord::new(30, Op::Read, 16, 8),
        ]);
        let groups = classify(&t).unwrap();
        let seq = groups
            .iter()
            .find(|g| g.sequentiality() == Sequentiality::Sequential)
            .unwrap();
        assert_eq!(seq.member_indices, vec![1, 2]);
        assert_eq!(seq.intt_samples, vec![20]);
    }

    #[test]
    fn single_record_is_an_error() {
        let t = trace(vec![IoRecord::new(0, Op::Read, 0, 8)]);
        assert!(classify(&t).is_err());
    }

    fn arb_records() -> impl Strategy<Value = Vec<IoRecord>> {
        prop::collection::vec((0u64..1000, any::<bool>(), 0u64..64, 1u64..4), 2..200).prop_map(
            |v| {
                let mut t = 0;
                v.into_iter()
                    .map(|(dt, w, lba, size)| {
                        t += dt;
                        let op = if w { Op::Write } else { Op::Read };
                        IoRecord::new(t, op, lba * 4, size * 4)
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn groups_partition_the_trace(records in arb_records()) {
            let t = trace(records);
            let groups = classify(&t).unwrap();
            let members: usize = groups.iter().map(|g| g.member_indices.len()).sum();
            let samples: usize = groups.iter().map(|g| g.intt_samples.len()).sum();
            prop_assert_eq!(members, t.len());
            prop_assert_eq!(samples, t.len() - 1);
            let labels = label_sequentiality(t.records());
            for g in &groups {
                for &i in &g.member_indices {
                    prop_assert_eq!(group_key(&t.records()[i], labels[i]), g.key);
                }
            }
        }

        #[test]
        fn labels_are_deterministic(records in arb_records()) {
            let a = label_sequentiality(&records);
            let b = label_sequentiality(&records);
            prop_assert_eq!(a, b);
        }
    }
}
