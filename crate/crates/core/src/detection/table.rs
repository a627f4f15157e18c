//! Flow-information table: collector and classifier state per TCP direction.

use std::collections::BTreeMap;

use fnv::FnvHashMap;
use serde::{Deserialize, Serialize};

use super::{FlowKey, PacketEvent, PacketKind};
use crate::FlowClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordState {
    PresumedMice,
    ClassifiedElephant,
    Preclassified(FlowClass),
    Closed,
}

/// Per-direction record. `key` is the data direction (sender -> receiver).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    /// Sequence number of the first data byte (ISN + 1).
    pub t_f: u32,
    /// Highest cumulative ACK seen so far.
    pub t_c: u32,
    pub state: RecordState,
    pub classified_at_ns: Option<u64>,
    /// Edge rules stop capturing this flow's ACKs after this instant.
    pub suppress_after_ns: Option<u64>,
}

impl FlowRecord {
    pub fn new(key: FlowKey, t_f: u32) -> Self {
        FlowRecord {
            key,
            t_f,
            t_c: t_f,
            state: RecordState::PresumedMice,
            classified_at_ns: None,
            suppress_after_ns: None,
        }
    }

    pub fn bytes_acked(&self) -> u32 {
        self.t_c.wrapping_sub(self.t_f)
    }

    /// Advance `t_c` if `ack` is ahead of it in sequence space.
    fn advance(&mut self, ack: u32) {
        if (ack.wrapping_sub(self.t_c) as i32) > 0 {
            self.t_c = ack;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardStats {
    pub lookups: u64,
    pub inserts: u64,
}

#[derive(Debug, Default, Clone)]
struct Shard {
    records: FnvHashMap<FlowKey, FlowRecord>,
    stats: ShardStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounters {
    /// ACKs for flows without a record.
    pub misses: u64,
    /// FIN/RST for flows without a record.
    pub orphans: u64,
    pub duplicate_synacks: u64,
    pub closed: u64,
}

/// Records sharded by the data sender's /24 subnet.
#[derive(Debug, Default, Clone)]
pub struct FlowTable {
    shards: BTreeMap<u32, Shard>,
    pub counters: TableCounters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Created,
    Duplicate,
    Closed(usize),
    Orphan,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckOutcome {
    StillMice,
    NewlyElephant { at_ns: u64 },
    Ignored,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shard_of(key: &FlowKey) -> u32 {
        key.subnet()
    }

    pub fn len(&self) -> usize {
        self.shards.values().map(|s| s.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shard_stats(&self) -> Vec<(u32, ShardStats, usize)> {
        self.shards
            .iter()
            .map(|(id, s)| (*id, s.stats, s.records.len()))
            .collect()
    }

    pub fn get(&self, key: &FlowKey) -> Option<&FlowRecord> {
        self.shards.get(&Self::shard_of(key))?.records.get(key)
    }

    pub fn get_mut(&mut self, key: &FlowKey) -> Option<&mut FlowRecord> {
        let shard = self.shards.get_mut(&Self::shard_of(key))?;
        shard.stats.lookups += 1;
        shard.records.get_mut(key)
    }

    /// Insert unless present. Returns false for a duplicate.
    pub fn insert(&mut self, record: FlowRecord) -> bool {
        let shard = self.shards.entry(Self::shard_of(&record.key)).or_default();
        shard.stats.lookups += 1;
        if shard.records.contains_key(&record.key) {
            return false;
        }
        shard.stats.inserts += 1;
        shard.records.insert(record.key, record);
        true
    }

    pub fn remove(&mut self, key: &FlowKey) -> Option<FlowRecord> {
        let shard = self.shards.get_mut(&Self::shard_of(key))?;
        shard.stats.lookups += 1;
        shard.records.remove(key)
    }

    pub fn records(&self) -> impl Iterator<Item = &FlowRecord> {
        self.shards.values().flat_map(|s| s.records.values())
    }

    /// Collector: SYN+ACK creates the data-direction record, FIN/RST evicts.
    ///
    /// The SYN+ACK travels receiver -> sender, so the data direction is its
    /// reverse and `t_f` is its ack field. With `bidirectional`, the
    /// receiver's own direction gets a record starting at its ISN + 1.
    pub fn collector_ingest(&mut self, ev: &PacketEvent, bidirectional: bool) -> IngestOutcome {
        match ev.kind {
            PacketKind::SynAck => {
                let created = self.insert(FlowRecord::new(ev.key.reversed(), ev.ack));
                if bidirectional {
                    self.insert(FlowRecord::new(ev.key, ev.seq.wrapping_add(1)));
                }
                if created {
                    IngestOutcome::Created
                } else {
                    self.counters.duplicate_synacks += 1;
                    IngestOutcome::Duplicate
                }
            }
            PacketKind::Fin | PacketKind::Rst => {
                let mut closed = 0;
                for key in [ev.key, ev.key.reversed()] {
                    if self.remove(&key).is_some() {
                        closed += 1;
                    }
                }
                if closed == 0 {
                    self.counters.orphans += 1;
                    IngestOutcome::Orphan
                } else {
                    self.counters.closed += closed as u64;
                    IngestOutcome::Closed(closed)
                }
            }
            _ => IngestOutcome::Ignored,
        }
    }

    /// Classifier: difference the cumulative ACK against `t_f`.
    ///
    /// An ACK travels receiver -> sender; its record is the reverse key.
    pub fn classify_ack(&mut self, ev: &PacketEvent, threshold: u64, at_ns: u64) -> AckOutcome {
        if ev.kind != PacketKind::Ack {
            return AckOutcome::Ignored;
        }
        let Some(r) = self.get_mut(&ev.key.reversed()) else {
            self.counters.misses += 1;
            return AckOutcome::Ignored;
        };
        r.advance(ev.ack);
        if r.state != RecordState::PresumedMice {
            return AckOutcome::Ignored;
        }
        if u64::from(r.bytes_acked()) > threshold {
            r.state = RecordState::ClassifiedElephant;
            r.classified_at_ns = Some(at_ns);
            AckOutcome::NewlyElephant { at_ns }
        } else {
            AckOutcome::StillMice
        }
    }
}
