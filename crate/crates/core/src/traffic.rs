//! Scenario description, synthetic workloads and TCP packet synthesis.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectorConfig, FlowKey, PacketEvent, PacketKind, DEFAULT_THRESHOLD_BYTES};
use crate::engine::Policy;
use crate::grooming::{
    demand_matrix_from_aggregates, groom_three_step, FlowDescriptor, GroomingError, RackMap,
};
use crate::optics::{ChannelGain, OpticalParams, OpticsError};
use crate::provisioning::{ClassProfile, DemandMatrix, ProvisionError, DEFAULT_K_PATHS};
use crate::topology::{PhysicalTopology, TopologyError};
use crate::FlowClass;

pub const DEFAULT_MSS: u32 = 1460;
pub const DEFAULT_DPORT: u16 = 5001;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario JSON, line {line} column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Grooming(#[from] GroomingError),
    #[error(transparent)]
    Provision(#[from] ProvisionError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

/// Flow size in bytes: fixed or uniform over an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SizeSpec {
    Fixed(u64),
    Uniform { min: u64, max: u64 },
}

impl SizeSpec {
    pub fn min(&self) -> u64 {
        match *self {
            SizeSpec::Fixed(s) => s,
            SizeSpec::Uniform { min, .. } => min,
        }
    }

    pub fn max(&self) -> u64 {
        match *self {
            SizeSpec::Fixed(s) => s,
            SizeSpec::Uniform { max, .. } => max,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            SizeSpec::Fixed(s) => s,
            SizeSpec::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    PureMice,
    PureElephant,
    Mix,
    Shuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShuffleConfig {
    /// Senders per rack, each talking to one receiver in the peer rack.
    pub k: usize,
    pub ef_fraction: f64,
    /// Rack i sends to rack (i + ring_offset) mod N.
    pub ring_offset: usize,
    /// When set, every run of this many consecutive senders holds exactly
    /// one elephant and `ef_fraction` is ignored.
    pub group_size: Option<usize>,
    /// Per-sender flow arrival rate (flows/s); each sender's flow starts
    /// after an exponential delay with this rate.
    pub sender_rate: f64,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        ShuffleConfig {
            k: 20,
            ef_fraction: 0.1,
            ring_offset: 1,
            group_size: None,
            sender_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketConfig {
    pub mss: u32,
    /// One cumulative ACK per this many data segments (plus a final ACK).
    pub ack_every: u32,
    pub handshake_gap_ns: u64,
}

impl Default for PacketConfig {
    fn default() -> Self {
        PacketConfig {
            mss: DEFAULT_MSS,
            ack_every: 2,
            handshake_gap_ns: 1_000,
        }
    }
}

/// How the provisioning demand matrix is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemandSpec {
    /// Groom the generated flows and use their composite arrival rates.
    Groomed,
    /// Same composite rate on every ordered rack pair.
    Uniform { mice_rate: f64, elephant_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandOverride {
    pub src: usize,
    pub dst: usize,
    pub class: FlowClass,
    pub bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub leaf_count: usize,
    pub spine_ratio: f64,
    pub wavelengths: usize,
    /// Per-wavelength bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// Intensity budget per transmitter per link.
    pub intensity_budget: f64,
    pub gain: ChannelGain,
    /// Nominal FSO link rate; ECMP-FSO splits it evenly over the wavelengths.
    pub fso_link_bps: f64,
    /// Cabled link rate as a fraction of `fso_link_bps` (ECMP baseline).
    pub cable_ratio: f64,
    pub hosts_per_rack: usize,
    pub kind: ScenarioKind,
    /// Flow count for the pure and mix scenarios.
    pub flows: usize,
    pub mice_fraction: f64,
    /// Aggregate arrival rate (flows/s) for the pure and mix scenarios.
    pub arrival_rate: f64,
    pub shuffle: ShuffleConfig,
    pub mice_size: SizeSpec,
    pub elephant_size: SizeSpec,
    pub threshold_bytes: u64,
    pub mice_deadline_s: f64,
    pub elephant_deadline_s: f64,
    pub k_paths: usize,
    pub demand: DemandSpec,
    pub demand_overrides: Vec<DemandOverride>,
    pub detector: DetectorConfig,
    pub packets: PacketConfig,
    /// Byte quantum between synthesized ACKs while a flow is presumed mice.
    pub ack_quantum_bytes: u64,
    /// Pause added to a flow's service when it is moved to the EF lightpath.
    pub reroute_pause_ns: u64,
    pub policies: Vec<Policy>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            leaf_count: 8,
            spine_ratio: 0.5,
            wavelengths: 4,
            bandwidth_hz: 20e9,
            intensity_budget: 8.0,
            gain: ChannelGain::unit(),
            fso_link_bps: 10e9,
            cable_ratio: 0.1,
            hosts_per_rack: 40,
            kind: ScenarioKind::Shuffle,
            flows: 1000,
            mice_fraction: 0.9,
            arrival_rate: 1000.0,
            shuffle: ShuffleConfig::default(),
            mice_size: SizeSpec::Fixed(50_000),
            elephant_size: SizeSpec::Fixed(128_000_000),
            threshold_bytes: DEFAULT_THRESHOLD_BYTES,
            mice_deadline_s: 1e-3,
            elephant_deadline_s: 0.1,
            k_paths: DEFAULT_K_PATHS,
            demand: DemandSpec::Groomed,
            demand_overrides: Vec::new(),
            detector: DetectorConfig::default(),
            packets: PacketConfig::default(),
            ack_quantum_bytes: 64 * 1024,
            reroute_pause_ns: 0,
            policies: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.optical_params()?;
        if self.leaf_count < 2 {
            return invalid("leaf_count must be at least 2");
        }
        if !(1..=254).contains(&self.hosts_per_rack) {
            return invalid("hosts_per_rack must be in 1..=254");
        }
        if self.leaf_count > 1 << 16 {
            return invalid("leaf_count too large for the 10.x.y.0/24 rack addressing");
        }
        for (name, f) in [
            ("mice_fraction", self.mice_fraction),
            ("shuffle.ef_fraction", self.shuffle.ef_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return invalid(format!("{name} must be in [0, 1], got {f}"));
            }
        }
        for (name, s) in [
            ("mice_size", self.mice_size),
            ("elephant_size", self.elephant_size),
        ] {
            if s.min() == 0 || s.min() > s.max() {
                return invalid(format!(
                    "{name} must be a positive size or a non-empty range"
                ));
            }
        }
        if self.threshold_bytes == 0 {
            return invalid("threshold_bytes must be positive");
        }
        if self.mice_size.max() > self.threshold_bytes {
            return invalid(format!(
                "mice_size up to {} crosses the {}-byte threshold",
                self.mice_size.max(),
                self.threshold_bytes
            ));
        }
        if self.elephant_size.min() <= self.threshold_bytes {
            return invalid(format!(
                "elephant_size from {} does not exceed the {}-byte threshold",
                self.elephant_size.min(),
                self.threshold_bytes
            ));
        }
        for (name, v) in [
            ("mice_deadline_s", self.mice_deadline_s),
            ("elephant_deadline_s", self.elephant_deadline_s),
            ("arrival_rate", self.arrival_rate),
            ("shuffle.sender_rate", self.shuffle.sender_rate),
            ("fso_link_bps", self.fso_link_bps),
            ("cable_ratio", self.cable_ratio),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if self.kind == ScenarioKind::Shuffle {
            let s = &self.shuffle;
            if s.k == 0 || 2 * s.k > self.hosts_per_rack {
                return invalid(format!(
                    "shuffle k = {} needs two disjoint sets of k hosts per rack ({} hosts)",
                    s.k, self.hosts_per_rack
                ));
            }
            if s.ring_offset % self.leaf_count == 0 {
                return invalid("shuffle ring_offset must not map a rack onto itself");
            }
            if s.group_size == Some(0) {
                return invalid("shuffle group_size must be positive");
            }
        }
        if self.k_paths == 0 {
            return invalid("k_paths must be at least 1");
        }
        if self.packets.mss == 0 || self.packets.ack_every == 0 {
            return invalid("packets.mss and packets.ack_every must be positive");
        }
        if self.ack_quantum_bytes == 0 {
            return invalid("ack_quantum_bytes must be positive");
        }
        self.detector
            .validate()
            .map_err(|e| ScenarioError::Invalid(format!("detector: {e}")))?;
        Ok(())
    }

    pub fn optical_params(&self) -> Result<OpticalParams, ScenarioError> {
        Ok(OpticalParams::new(
            self.bandwidth_hz,
            self.intensity_budget,
            self.wavelengths,
        )?)
    }

    pub fn topology(&self) -> Result<PhysicalTopology, ScenarioError> {
        Ok(PhysicalTopology::spine_leaf(
            self.leaf_count,
            self.spine_ratio,
            self.optical_params()?,
            self.gain,
        )?)
    }

    pub fn rack_map(&self) -> RackMap {
        RackMap::uniform(self.leaf_count, self.hosts_per_rack)
    }

    pub fn profile(&self, class: FlowClass) -> ClassProfile {
        match class {
            FlowClass::Mice => ClassProfile {
                flow_size_bits: self.mice_size.max() as f64 * 8.0,
                deadline_s: self.mice_deadline_s,
            },
            FlowClass::Elephant => ClassProfile {
                flow_size_bits: self.elephant_size.max() as f64 * 8.0,
                deadline_s: self.elephant_deadline_s,
            },
        }
    }

    /// Demand matrix for provisioning, built from `flows` when groomed.
    pub fn demand_matrix(&self, flows: &[Flow]) -> Result<DemandMatrix, ScenarioError> {
        let (m, e) = (
            self.profile(FlowClass::Mice),
            self.profile(FlowClass::Elephant),
        );
        let mut d = match self.demand {
            DemandSpec::Groomed => {
                let descriptors: Vec<FlowDescriptor> = flows.iter().map(Flow::descriptor).collect();
                let g = groom_three_step(&descriptors, &self.rack_map())?;
                demand_matrix_from_aggregates(&g.r2r, self.leaf_count, m, e)?
            }
            DemandSpec::Uniform {
                mice_rate,
                elephant_rate,
            } => {
                let mut d = DemandMatrix::new(self.leaf_count, m, e)?;
                for i in 0..self.leaf_count {
                    for j in 0..self.leaf_count {
                        if i != j {
                            d.set_rate(i, j, FlowClass::Mice, mice_rate)?;
                            d.set_rate(i, j, FlowClass::Elephant, elephant_rate)?;
                        }
                    }
                }
                d
            }
        };
        for o in &self.demand_overrides {
            d.set_capacity_override(o.src, o.dst, o.class, o.bps)?;
        }
        Ok(d)
    }
}

/// A generated flow with ground truth and addressing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: u64,
    pub class: FlowClass,
    pub src_server: usize,
    pub dst_server: usize,
    pub src_rack: usize,
    pub dst_rack: usize,
    pub size_bytes: u64,
    pub start_ns: u64,
    /// Poisson arrival rate this flow contributes (flows/s).
    pub rate: f64,
    pub key: FlowKey,
    pub client_isn: u32,
    pub server_isn: u32,
}

impl Flow {
    pub fn descriptor(&self) -> FlowDescriptor {
        FlowDescriptor {
            id: self.id,
            class: Some(self.class),
            src_server: self.src_server,
            dst_server: self.dst_server,
            rate: self.rate,
            size_bytes: self.size_bytes,
            arrival_s: self.start_ns as f64 * 1e-9,
        }
    }
}

/// Address of server `host` in `rack`: 10.(rack >> 8).(rack & 255).(host + 1).
pub fn server_addr(rack: usize, host: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, (rack >> 8) as u8, (rack & 0xff) as u8, host as u8 + 1)
}

struct Builder<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    flows: Vec<Flow>,
}

impl Builder<'_> {
    fn push(
        &mut self,
        class: FlowClass,
        src: usize,
        dst: usize,
        start_ns: u64,
        rate: f64,
        dport: u16,
    ) {
        let hosts = self.cfg.hosts_per_rack;
        let size = match class {
            FlowClass::Mice => self.cfg.mice_size.sample(&mut self.rng),
            FlowClass::Elephant => self.cfg.elephant_size.sample(&mut self.rng),
        };
        let id = self.flows.len() as u64;
        let (sr, dr) = (src / hosts, dst / hosts);
        let key = FlowKey::tcp(
            server_addr(sr, src % hosts),
            (1024 + id % 64_000) as u16,
            server_addr(dr, dst % hosts),
            dport,
        );
        let (client_isn, server_isn) = (self.rng.random(), self.rng.random());
        debug_assert_eq!(FlowClass::from_size(size, self.cfg.threshold_bytes), class);
        self.flows.push(Flow {
            id,
            class,
            src_server: src,
            dst_server: dst,
            src_rack: sr,
            dst_rack: dr,
            size_bytes: size,
            start_ns,
            rate,
            key,
            client_isn,
            server_isn,
        });
    }
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

/// Generate the scenario's flows (pure, mix or shuffle). Deterministic in
/// `cfg.seed`; flow ids follow start order for pure/mix and sender order for
/// shuffle.
pub fn generate_flows(cfg: &ScenarioConfig) -> Result<Vec<Flow>, ScenarioError> {
    cfg.validate()?;
    if cfg.kind == ScenarioKind::Shuffle {
        return shuffle_pattern(cfg);
    }
    let mut b = Builder {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        flows: Vec::with_capacity(cfg.flows),
    };
    let n = cfg.flows;
    let n_mice = match cfg.kind {
        ScenarioKind::PureMice => n,
        ScenarioKind::PureElephant => 0,
        _ => (cfg.mice_fraction * n as f64).round() as usize,
    };
    let mut classes: Vec<FlowClass> = (0..n)
        .map(|i| {
            if i < n_mice {
                FlowClass::Mice
            } else {
                FlowClass::Elephant
            }
        })
        .collect();
    classes.shuffle(&mut b.rng);

    let servers = cfg.leaf_count * cfg.hosts_per_rack;
    let gap = Exp::new(cfg.arrival_rate).expect("validated positive");
    let per_flow = cfg.arrival_rate / n.max(1) as f64;
    let mut t = 0.0;
    for class in classes {
        t += gap.sample(&mut b.rng);
        let (src, dst) = loop {
            let s = b.rng.random_range(0..servers);
            let d = b.rng.random_range(0..servers);
            if s / cfg.hosts_per_rack != d / cfg.hosts_per_rack {
                break (s, d);
            }
        };
        b.push(class, src, dst, secs_to_ns(t), per_flow, DEFAULT_DPORT);
    }
    Ok(b.flows)
}

/// Shuffle pattern: for every rack i, sender p (host p, p < k) opens one
/// flow to receiver p in rack i + offset (host k + p).
pub fn shuffle_pattern(cfg: &ScenarioConfig) -> Result<Vec<Flow>, ScenarioError> {
    cfg.validate()?;
    let s = cfg.shuffle;
    let hosts = cfg.hosts_per_rack;
    let mut b = Builder {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        flows: Vec::new(),
    };
    let start = Exp::new(s.sender_rate).expect("validated positive");
    for i in 0..cfg.leaf_count {
        let j = (i + s.ring_offset) % cfg.leaf_count;
        let mut classes = vec![FlowClass::Mice; s.k];
        match s.group_size {
            Some(g) => {
                for chunk in classes.chunks_mut(g) {
                    let pick = b.rng.random_range(0..chunk.len());
                    chunk[pick] = FlowClass::Elephant;
                }
            }
            None => {
                let n_ef = (s.ef_fraction * s.k as f64).round() as usize;
                classes[..n_ef].fill(FlowClass::Elephant);
                classes.shuffle(&mut b.rng);
            }
        }
        for (p, class) in classes.into_iter().enumerate() {
            let t = start.sample(&mut b.rng);
            b.push(
                class,
                i * hosts + p,
                j * hosts + s.k + p,
                secs_to_ns(t),
                s.sender_rate,
                DEFAULT_DPORT,
            );
        }
    }
    Ok(b.flows)
}

/// Lazily synthesized packet events of one flow sent at a constant rate.
///
/// Handshake (SYN, SYN+ACK, ACK) spaced by the handshake gap, then MSS-sized
/// DATA segments back to back at `rate_bps`, a cumulative ACK at the end of
/// every `ack_every`-th segment and of the last one, and FIN at completion.
/// All events are attributed to the sender's edge.
#[derive(Debug, Clone)]
pub struct FlowPackets {
    key: FlowKey,
    observer: u32,
    c: u32,
    s: u32,
    size: u64,
    mss: u64,
    ack_every: u64,
    t0: u64,
    gap: u64,
    ns_per_byte: f64,
    segments: u64,
    /// Next item in the emission order, see `next`.
    step: u64,
}

impl FlowPackets {
    pub fn new(flow: &Flow, packets: &PacketConfig, rate_bps: f64) -> Self {
        assert!(rate_bps > 0.0, "replay rate must be positive");
        let mss = u64::from(packets.mss);
        FlowPackets {
            key: flow.key,
            observer: flow.key.subnet(),
            c: flow.client_isn,
            s: flow.server_isn,
            size: flow.size_bytes,
            mss,
            ack_every: u64::from(packets.ack_every),
            t0: flow.start_ns,
            gap: packets.handshake_gap_ns,
            ns_per_byte: 8e9 / rate_bps,
            segments: flow.size_bytes.div_ceil(mss),
            step: 0,
        }
    }

    /// Number of events the iterator yields in total.
    pub fn event_count(&self) -> u64 {
        let acks = self.segments / self.ack_every + u64::from(self.segments % self.ack_every != 0);
        4 + self.segments + acks
    }

    fn data_start(&self) -> u64 {
        self.t0 + 2 * self.gap
    }

    /// Time the first `bytes` bytes have been sent.
    fn sent_at(&self, bytes: u64) -> u64 {
        // Manual ceil: `f64::ceil` is a libm call on baseline x86-64.
        let x = bytes as f64 * self.ns_per_byte;
        let t = x as u64;
        self.data_start() + t + u64::from((t as f64) < x)
    }

    fn ev(
        &self,
        ts: u64,
        forward: bool,
        kind: PacketKind,
        seq: u32,
        ack: u32,
        len: u32,
    ) -> PacketEvent {
        let key = if forward {
            self.key
        } else {
            self.key.reversed()
        };
        PacketEvent {
            ts_ns: ts,
            key,
            kind,
            seq,
            ack,
            len,
            observer: self.observer,
        }
    }

    pub fn completion_ns(&self) -> u64 {
        self.sent_at(self.size)
    }
}

impl Iterator for FlowPackets {
    type Item = PacketEvent;

    fn next(&mut self) -> Option<PacketEvent> {
        let (c1, s1) = (self.c.wrapping_add(1), self.s.wrapping_add(1));
        let step = self.step;
        self.step = step.saturating_add(1);
        match step {
            0 => return Some(self.ev(self.t0, true, PacketKind::Syn, self.c, 0, 0)),
            1 => {
                return Some(self.ev(self.t0 + self.gap, false, PacketKind::SynAck, self.s, c1, 0))
            }
            2 => return Some(self.ev(self.data_start(), true, PacketKind::Ack, c1, s1, 0)),
            _ => {}
        }
        // Steps from 3 walk segments; each segment is a DATA step and,
        // when due, an ACK step. `step` encodes (segment, phase) as
        // 3 + 2*seg + phase; skipped ACK phases are jumped over.
        let rel = step - 3;
        let seg = rel / 2;
        if seg >= self.segments {
            if rel == 2 * self.segments {
                self.step = u64::MAX;
                let end = self.completion_ns();
                return Some(self.ev(
                    end,
                    true,
                    PacketKind::Fin,
                    c1.wrapping_add(self.size as u32),
                    s1,
                    0,
                ));
            }
            return None;
        }
        let from = seg * self.mss;
        let to = (from + self.mss).min(self.size);
        if rel % 2 == 0 {
            let due = (seg + 1) % self.ack_every == 0 || seg + 1 == self.segments;
            if !due {
                self.step += 1;
            }
            Some(self.ev(
                self.sent_at(from),
                true,
                PacketKind::Data,
                c1.wrapping_add(from as u32),
                s1,
                (to - from) as u32,
            ))
        } else {
            Some(self.ev(
                self.sent_at(to),
                false,
                PacketKind::Ack,
                s1,
                c1.wrapping_add(to as u32),
                0,
            ))
        }
    }
}

/// Packet events of many flows merged in (timestamp, flow, order) order.
pub struct MergedPackets {
    heap: BinaryHeap<Reverse<(u64, usize, u64, HeapEvent)>>,
    sources: Vec<FlowPackets>,
    emitted: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HeapEvent(PacketEvent);

impl PartialOrd for HeapEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEvent {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl MergedPackets {
    pub fn new(sources: Vec<FlowPackets>) -> Self {
        let mut m = MergedPackets {
            heap: BinaryHeap::with_capacity(sources.len()),
            emitted: vec![0; sources.len()],
            sources,
        };
        for i in 0..m.sources.len() {
            m.refill(i);
        }
        m
    }

    fn refill(&mut self, i: usize) {
        if let Some(ev) = self.sources[i].next() {
            let n = self.emitted[i];
            self.emitted[i] += 1;
            self.heap.push(Reverse((ev.ts_ns, i, n, HeapEvent(ev))));
        }
    }
}

impl Iterator for MergedPackets {
    type Item = PacketEvent;

    fn next(&mut self) -> Option<PacketEvent> {
        let Reverse((_, i, _, HeapEvent(ev))) = self.heap.pop()?;
        self.refill(i);
        Some(ev)
    }
}

/// Merged trace of `flows`, each replayed at `rate_bps`.
pub fn flows_to_packet_events(
    flows: &[Flow],
    packets: &PacketConfig,
    rate_bps: f64,
) -> MergedPackets {
    MergedPackets::new(
        flows
            .iter()
            .map(|f| FlowPackets::new(f, packets, rate_bps))
            .collect(),
    )
}
