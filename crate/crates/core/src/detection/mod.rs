//! TCP-ACK based elephant-flow detection.
//!
//! A collector captures each flow's starting sequence number from the
//! SYN+ACK; a classifier differences later cumulative ACK numbers against
//! it and declares the flow an elephant once more than `th` bytes have been
//! acknowledged. The detector runs either in-network (inside the sender's
//! hypervisor, zero latency) or centralized (edge switches forward
//! indicative packets to a central unit after a notification delay).
//!
//! Centralized overhead is reduced by sampling only ACKs (1-in-S on an
//! ACK-only interface), by suppressing ACKs of already classified flows, and
//! by pre-classifying well-known application ports.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::FlowClass;

pub mod sampling;
pub mod table;
pub mod trace;

pub use sampling::{SamplingBaseline, SamplingConfig};
pub use table::{AckOutcome, FlowRecord, FlowTable, IngestOutcome, RecordState};

pub const DEFAULT_THRESHOLD_BYTES: u64 = 1 << 20;
pub const DEFAULT_NOTIFICATION_DELAY_NS: u64 = 200_000;
pub const DEFAULT_ACK_SAMPLE_RATE: u32 = 100;
pub const PROTO_TCP: u8 = 6;

/// TCP 5-tuple in sending direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: Ipv4Addr,
    pub sport: u16,
    pub dst: Ipv4Addr,
    pub dport: u16,
    pub proto: u8,
}

impl FlowKey {
    pub fn tcp(src: Ipv4Addr, sport: u16, dst: Ipv4Addr, dport: u16) -> Self {
        FlowKey {
            src,
            sport,
            dst,
            dport,
            proto: PROTO_TCP,
        }
    }

    pub fn reversed(&self) -> Self {
        FlowKey {
            src: self.dst,
            sport: self.dport,
            dst: self.src,
            dport: self.sport,
            proto: self.proto,
        }
    }

    /// /24 subnet of the source address.
    pub fn subnet(&self) -> u32 {
        u32::from(self.src) >> 8
    }

    /// 13 bytes in network order; input to the ECMP hash.
    pub fn to_bytes(&self) -> [u8; 13] {
        let mut b = [0u8; 13];
        b[0..4].copy_from_slice(&self.src.octets());
        b[4..6].copy_from_slice(&self.sport.to_be_bytes());
        b[6..10].copy_from_slice(&self.dst.octets());
        b[10..12].copy_from_slice(&self.dport.to_be_bytes());
        b[12] = self.proto;
        b
    }
}

// Packed into 13 bytes; the derived impl feeds length prefixes too.
impl Hash for FlowKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(u64::from(u32::from(self.src)) << 32 | u64::from(u32::from(self.dst)));
        state.write_u32(u32::from(self.sport) << 16 | u32::from(self.dport));
        state.write_u8(self.proto);
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{}",
            self.src, self.sport, self.dst, self.dport
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketKind {
    #[serde(rename = "SYN")]
    Syn,
    #[serde(rename = "SYNACK")]
    SynAck,
    #[serde(rename = "ACK")]
    Ack,
    #[serde(rename = "FIN")]
    Fin,
    #[serde(rename = "RST")]
    Rst,
    #[serde(rename = "DATA")]
    Data,
}

impl PacketKind {
    pub fn token(self) -> &'static str {
        match self {
            PacketKind::Syn => "SYN",
            PacketKind::SynAck => "SYNACK",
            PacketKind::Ack => "ACK",
            PacketKind::Fin => "FIN",
            PacketKind::Rst => "RST",
            PacketKind::Data => "DATA",
        }
    }
}

impl FromStr for PacketKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "SYN" => PacketKind::Syn,
            "SYNACK" | "SYN+ACK" => PacketKind::SynAck,
            "ACK" => PacketKind::Ack,
            "FIN" => PacketKind::Fin,
            "RST" => PacketKind::Rst,
            "DATA" => PacketKind::Data,
            other => return Err(format!("unknown flag token `{other}`")),
        })
    }
}

/// One TCP header as seen at the sender's edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketEvent {
    pub ts_ns: u64,
    pub key: FlowKey,
    pub kind: PacketKind,
    pub seq: u32,
    pub ack: u32,
    pub len: u32,
    /// Edge switch or hypervisor that saw the packet.
    pub observer: u32,
}

impl PacketEvent {
    /// Observer defaults to the source subnet (the sender's edge switch).
    pub fn new(ts_ns: u64, key: FlowKey, kind: PacketKind, seq: u32, ack: u32, len: u32) -> Self {
        PacketEvent {
            ts_ns,
            key,
            kind,
            seq,
            ack,
            len,
            observer: key.subnet(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorMode {
    #[default]
    InNetwork,
    Centralized,
}

impl FromStr for DetectorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "in-network" => Ok(DetectorMode::InNetwork),
            "centralized" => Ok(DetectorMode::Centralized),
            other => Err(format!(
                "unknown mode `{other}` (expected in-network or centralized)"
            )),
        }
    }
}

impl fmt::Display for DetectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorMode::InNetwork => "in-network",
            DetectorMode::Centralized => "centralized",
        })
    }
}

pub fn default_port_classes() -> BTreeMap<u16, FlowClass> {
    BTreeMap::from([
        (20, FlowClass::Elephant),
        (123, FlowClass::Mice),
        (514, FlowClass::Mice),
    ])
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectorConfigError {
    #[error("detection threshold must be positive")]
    ZeroThreshold,
    #[error("ACK sampling rate must be at least 1")]
    ZeroSampleRate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub threshold_bytes: u64,
    pub mode: DetectorMode,
    /// Central-unit notification delay; also the edge reconfiguration delay.
    pub notification_delay_ns: u64,
    /// Forward one of every S ACKs per edge switch (centralized only).
    pub ack_sample_rate: u32,
    pub stop_useless: bool,
    pub preclassify: bool,
    pub port_classes: BTreeMap<u16, FlowClass>,
    /// Track the reverse direction of every connection as its own flow.
    pub bidirectional: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            threshold_bytes: DEFAULT_THRESHOLD_BYTES,
            mode: DetectorMode::InNetwork,
            notification_delay_ns: DEFAULT_NOTIFICATION_DELAY_NS,
            ack_sample_rate: DEFAULT_ACK_SAMPLE_RATE,
            stop_useless: true,
            preclassify: true,
            port_classes: default_port_classes(),
            bidirectional: false,
        }
    }
}

impl DetectorConfig {
    pub fn in_network() -> Self {
        Self::default()
    }

    pub fn centralized() -> Self {
        DetectorConfig {
            mode: DetectorMode::Centralized,
            ..Self::default()
        }
    }

    /// Every overhead reduction disabled: every ACK is forwarded.
    pub fn without_minimization(mut self) -> Self {
        self.ack_sample_rate = 1;
        self.stop_useless = false;
        self.preclassify = false;
        self
    }

    pub fn validate(&self) -> Result<(), DetectorConfigError> {
        if self.threshold_bytes == 0 {
            return Err(DetectorConfigError::ZeroThreshold);
        }
        if self.ack_sample_rate == 0 {
            return Err(DetectorConfigError::ZeroSampleRate);
        }
        Ok(())
    }

    /// Delay between an edge observation and the classifier acting on it.
    pub fn effective_delay_ns(&self) -> u64 {
        match self.mode {
            DetectorMode::InNetwork => 0,
            DetectorMode::Centralized => self.notification_delay_ns,
        }
    }

    pub fn preclassify(&self, key: &FlowKey) -> Option<FlowClass> {
        if !self.preclassify {
            return None;
        }
        self.port_classes.get(&key.dport).copied()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorStats {
    /// Every packet presented to the detector.
    pub packets_total: u64,
    /// Packets read by the hypervisor module (in-network) or forwarded by an
    /// edge switch to the central unit (centralized).
    pub packets_captured: u64,
    /// Messages sent to the central unit: flow notifications (centralized)
    /// or elephant reports (in-network).
    pub notifications: u64,
    pub elephants_detected: u64,
    pub preclassified: u64,
    /// ACKs dropped by stop-capture rules.
    pub suppressed: u64,
}

/// A class decision on a flow's data direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub key: FlowKey,
    pub class: FlowClass,
    pub at_ns: u64,
    pub preclassified: bool,
}

/// What happened to one packet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Observation {
    pub captured: bool,
    pub notified: bool,
    pub classification: Option<Classification>,
}

/// Collector + classifier with the configured placement and edge filter.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    table: FlowTable,
    stats: DetectorStats,
    /// Per-observer ACK counters for 1-in-S forwarding.
    ack_counters: BTreeMap<u32, u64>,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self, DetectorConfigError> {
        config.validate()?;
        Ok(Detector {
            config,
            table: FlowTable::new(),
            stats: DetectorStats::default(),
            ack_counters: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn stats(&self) -> DetectorStats {
        self.stats
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    fn suppressed(&self, ev: &PacketEvent) -> bool {
        self.table
            .get(&ev.key.reversed())
            .and_then(|r| r.suppress_after_ns)
            .is_some_and(|t| ev.ts_ns > t)
    }

    /// Edge stage: does this packet reach the classifier?
    fn capture(&mut self, ev: &PacketEvent) -> bool {
        match ev.kind {
            PacketKind::SynAck | PacketKind::Fin | PacketKind::Rst => true,
            PacketKind::Ack => {
                if self.suppressed(ev) {
                    self.stats.suppressed += 1;
                    return false;
                }
                match self.config.mode {
                    DetectorMode::InNetwork => true,
                    DetectorMode::Centralized => {
                        let n = self.ack_counters.entry(ev.observer).or_insert(0);
                        let forward = *n % u64::from(self.config.ack_sample_rate) == 0;
                        *n += 1;
                        forward
                    }
                }
            }
            PacketKind::Syn | PacketKind::Data => false,
        }
    }

    pub fn observe(&mut self, ev: &PacketEvent) -> Observation {
        self.stats.packets_total += 1;
        if !self.capture(ev) {
            return Observation::default();
        }
        self.stats.packets_captured += 1;
        let mut obs = Observation {
            captured: true,
            ..Observation::default()
        };
        let centralized = self.config.mode == DetectorMode::Centralized;
        if centralized {
            self.stats.notifications += 1;
            obs.notified = true;
        }
        let delay = self.config.effective_delay_ns();
        let at = ev.ts_ns + delay;
        match ev.kind {
            PacketKind::SynAck => {
                if self.table.collector_ingest(ev, self.config.bidirectional)
                    == IngestOutcome::Created
                {
                    let key = ev.key.reversed();
                    if let Some(class) = self.config.preclassify(&key) {
                        let r = self.table.get_mut(&key).expect("just created");
                        r.state = RecordState::Preclassified(class);
                        r.classified_at_ns = Some(at);
                        r.suppress_after_ns = Some(at + delay);
                        self.stats.preclassified += 1;
                        obs.classification = Some(Classification {
                            key,
                            class,
                            at_ns: at,
                            preclassified: true,
                        });
                    }
                }
            }
            PacketKind::Fin | PacketKind::Rst => {
                self.table.collector_ingest(ev, self.config.bidirectional);
            }
            PacketKind::Ack => {
                if let AckOutcome::NewlyElephant { at_ns } =
                    self.table.classify_ack(ev, self.config.threshold_bytes, at)
                {
                    let key = ev.key.reversed();
                    if self.config.stop_useless {
                        if let Some(r) = self.table.get_mut(&key) {
                            r.suppress_after_ns = Some(at_ns + delay);
                        }
                    }
                    self.stats.elephants_detected += 1;
                    if !centralized {
                        self.stats.notifications += 1;
                        obs.notified = true;
                    }
                    obs.classification = Some(Classification {
                        key,
                        class: FlowClass::Elephant,
                        at_ns,
                        preclassified: false,
                    });
                }
            }
            PacketKind::Syn | PacketKind::Data => unreachable!("never captured"),
        }
        obs
    }
}

/// Per-run detection quality against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub flows: u64,
    pub elephants: u64,
    pub mice: u64,
    /// Elephants not classified before their last packet.
    pub true_negatives: u64,
    /// Mice classified as elephants.
    pub false_positives: u64,
    pub accuracy: f64,
    pub mean_latency_ns: f64,
}

/// Outcome for one flow, as needed by [`detection_metrics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowVerdict {
    pub true_class: FlowClass,
    pub start_ns: u64,
    pub last_packet_ns: u64,
    /// Time the flow was declared an elephant, if ever.
    pub elephant_at_ns: Option<u64>,
}

impl FlowVerdict {
    pub fn timely_elephant(&self) -> bool {
        self.elephant_at_ns
            .is_some_and(|t| t <= self.last_packet_ns)
    }
}

pub fn detection_metrics(verdicts: &[FlowVerdict]) -> DetectionMetrics {
    let mut m = DetectionMetrics::default();
    let mut latency = 0u128;
    let mut timed = 0u64;
    let mut correct = 0u64;
    for v in verdicts {
        m.flows += 1;
        match v.true_class {
            FlowClass::Elephant => {
                m.elephants += 1;
                if v.timely_elephant() {
                    correct += 1;
                } else {
                    m.true_negatives += 1;
                }
            }
            FlowClass::Mice => {
                m.mice += 1;
                if v.elephant_at_ns.is_some() {
                    m.false_positives += 1;
                } else {
                    correct += 1;
                }
            }
        }
        if let Some(t) = v.elephant_at_ns {
            latency += u128::from(t.saturating_sub(v.start_ns));
            timed += 1;
        }
    }
    m.accuracy = if m.flows == 0 {
        1.0
    } else {
        correct as f64 / m.flows as f64
    };
    m.mean_latency_ns = if timed == 0 {
        0.0
    } else {
        latency as f64 / timed as f64
    };
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(port: u16) -> FlowKey {
        FlowKey::tcp(
            Ipv4Addr::new(10, 0, 0, 2),
            40000,
            Ipv4Addr::new(10, 0, 1, 2),
            port,
        )
    }

    fn synack(k: FlowKey, ts: u64) -> PacketEvent {
        PacketEvent::new(ts, k.reversed(), PacketKind::SynAck, 9, 1, 0)
    }

    fn ack(k: FlowKey, ts: u64, n: u32) -> PacketEvent {
        let mut e = PacketEvent::new(ts, k.reversed(), PacketKind::Ack, 10, 1 + n, 0);
        // ACKs are observed at the sender's edge.
        e.observer = k.subnet();
        e
    }

    #[test]
    fn in_network_classifies_at_ack_time() {
        let k = key(8080);
        let mut d = Detector::new(DetectorConfig::in_network()).unwrap();
        d.observe(&synack(k, 0));
        assert!(d.observe(&ack(k, 10, 1 << 20)).classification.is_none());
        let obs = d.observe(&ack(k, 20, (1 << 20) + 1));
        assert_eq!(obs.classification.unwrap().at_ns, 20);
        assert_eq!(d.stats().notifications, 1);
        // Stop-useless: later ACKs are no longer read.
        assert!(!d.observe(&ack(k, 21, (1 << 20) + 5000)).captured);
        assert_eq!(d.stats().suppressed, 1);
    }

    #[test]
    fn centralized_adds_delay_and_suppresses_after_reconfiguration() {
        let k = key(8080);
        let mut cfg = DetectorConfig::centralized();
        cfg.ack_sample_rate = 1;
        let d_ns = cfg.notification_delay_ns;
        let mut d = Detector::new(cfg).unwrap();
        d.observe(&synack(k, 0));
        let c = d
            .observe(&ack(k, 100, (1 << 20) + 1))
            .classification
            .unwrap();
        assert_eq!(c.at_ns, 100 + d_ns);
        // Still forwarded until T + d.
        assert!(d.observe(&ack(k, 100 + 2 * d_ns, 2 << 20)).captured);
        assert!(!d.observe(&ack(k, 101 + 2 * d_ns, 3 << 20)).captured);
    }

    #[test]
    fn data_never_forwarded() {
        let k = key(80);
        let mut cfg = DetectorConfig::centralized().without_minimization();
        cfg.ack_sample_rate = 1;
        let mut d = Detector::new(cfg).unwrap();
        d.observe(&synack(k, 0));
        for i in 0..10 {
            d.observe(&PacketEvent::new(i, k, PacketKind::Data, 1, 0, 1460));
            d.observe(&ack(k, i, 1460 * (i as u32 + 1)));
        }
        let s = d.stats();
        assert_eq!(s.packets_total, 21);
        assert_eq!(s.packets_captured, 11);
    }

    #[test]
    fn one_in_s_counter() {
        let k = key(80);
        let mut d = Detector::new(DetectorConfig::centralized()).unwrap();
        d.observe(&synack(k, 0));
        for i in 0..10_000u32 {
            d.observe(&ack(k, u64::from(i), i));
        }
        // 1 SYN+ACK + exactly 100 sampled ACKs
        assert_eq!(d.stats().packets_captured, 101);
    }

    #[test]
    fn port_preclassification() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.preclassify(&key(20)), Some(FlowClass::Elephant));
        assert_eq!(cfg.preclassify(&key(123)), Some(FlowClass::Mice));
        assert_eq!(cfg.preclassify(&key(514)), Some(FlowClass::Mice));
        assert_eq!(cfg.preclassify(&key(50123)), None);

        let mut d = Detector::new(DetectorConfig::in_network()).unwrap();
        let c = d.observe(&synack(key(20), 5)).classification.unwrap();
        assert!(c.preclassified && c.class == FlowClass::Elephant);
        // No further reads or reports for the flow.
        assert!(!d.observe(&ack(key(20), 6, 2 << 20)).captured);
        assert_eq!(d.stats().notifications, 0);
    }

    #[test]
    fn minimization_never_adds_overhead() {
        let mut on = Detector::new(DetectorConfig::centralized()).unwrap();
        let mut off = Detector::new(DetectorConfig::centralized().without_minimization()).unwrap();
        for (i, port) in [80u16, 20, 123, 81].into_iter().enumerate() {
            let mut k = key(port);
            k.sport += i as u16;
            for d in [&mut on, &mut off] {
                d.observe(&synack(k, 0));
                for n in 0..2000u32 {
                    d.observe(&ack(k, u64::from(n) * 1000, n * 2920));
                }
            }
        }
        let (a, b) = (on.stats(), off.stats());
        assert!(a.packets_captured <= b.packets_captured);
        assert!(a.notifications < b.notifications);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DetectorConfig {
            ack_sample_rate: 0,
            ..DetectorConfig::default()
        };
        assert_eq!(
            Detector::new(cfg).unwrap_err(),
            DetectorConfigError::ZeroSampleRate
        );
        let cfg = DetectorConfig {
            threshold_bytes: 0,
            ..DetectorConfig::default()
        };
        assert!(cfg.validate().is_err());
        let json = r#"{"mode":"centralized","ack_sample_rate":10}"#;
        let cfg: DetectorConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.mode, DetectorMode::Centralized);
        assert_eq!(cfg.threshold_bytes, DEFAULT_THRESHOLD_BYTES);
    }

    #[test]
    fn metrics_definitions() {
        let v = |class, last, at| FlowVerdict {
            true_class: class,
            start_ns: 0,
            last_packet_ns: last,
            elephant_at_ns: at,
        };
        let m = detection_metrics(&[
            v(FlowClass::Elephant, 100, Some(50)),
            v(FlowClass::Elephant, 100, Some(150)),
            v(FlowClass::Elephant, 100, None),
            v(FlowClass::Mice, 100, None),
        ]);
        assert_eq!((m.true_negatives, m.false_positives), (2, 0));
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.mean_latency_ns, 100.0);
        assert_eq!(detection_metrics(&[]).accuracy, 1.0);
    }
}
