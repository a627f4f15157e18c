//! Flow-level discrete-event simulator.
//!
//! Flows are fluids: every resource (a lightpath, a cabled link or one
//! wavelength of an FSO link) divides its capacity max-min fairly among
//! the flows routed over it, and rates stay constant between events.
//! Events are arrivals, completions, detector-driven reroutes, and, under
//! LightFDG, synthesized ACKs every `ack_quantum_bytes` of delivered data.

use std::fmt;
use std::hash::Hasher;
use std::io::Write;
use std::str::FromStr;

use fnv::{FnvHashMap, FnvHasher};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{
    detection_metrics, DetectionMetrics, Detector, DetectorConfigError, DetectorStats, FlowKey,
    FlowVerdict, PacketEvent, PacketKind,
};
use crate::provisioning::{
    provision_all_with, ProvisionError, ProvisionOptions, ProvisioningResult,
};
use crate::topology::{LinkId, PhysicalTopology};
use crate::traffic::{generate_flows, Flow, ScenarioConfig, ScenarioError};
use crate::FlowClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Hash-based spine selection over cabled links.
    Ecmp,
    /// Hash-based spine selection; one fixed-rate wavelength per flow.
    EcmpFso,
    /// Per-class lightpaths with a-priori flow classes.
    FgFso,
    /// Per-class lightpaths; flows start as mice and move on detection.
    #[serde(rename = "lightfdg")]
    LightFdg,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::Ecmp,
        Policy::EcmpFso,
        Policy::FgFso,
        Policy::LightFdg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Ecmp => "ecmp",
            Policy::EcmpFso => "ecmp-fso",
            Policy::FgFso => "fg-fso",
            Policy::LightFdg => "lightfdg",
        }
    }

    pub fn uses_lightpaths(self) -> bool {
        matches!(self, Policy::FgFso | Policy::LightFdg)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                format!("unknown policy `{s}` (valid: ecmp, ecmp-fso, fg-fso, lightfdg)")
            })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Provision(#[from] ProvisionError),
    #[error("detector: {0}")]
    Detector(#[from] DetectorConfigError),
    #[error("no {class} lightpath provisioned for rack pair {src} -> {dst}")]
    Unprovisioned {
        src: usize,
        dst: usize,
        class: FlowClass,
    },
    #[error("flow {id}: racks {src} -> {dst} outside the {racks}-rack fabric or intra-rack")]
    BadFlow {
        id: u64,
        src: usize,
        dst: usize,
        racks: usize,
    },
}

/// Spine index for a flow: FNV-1a over the 5-tuple, folded to 32 bits,
/// modulo `count`. Every packet of a flow maps to the same path.
pub fn ecmp_route(key: &FlowKey, count: usize) -> usize {
    assert!(count > 0, "ECMP needs at least one candidate path");
    let mut h = FnvHasher::default();
    h.write(&key.to_bytes());
    let h = h.finish();
    ((h ^ (h >> 32)) as u32 as usize) % count
}

/// Max-min fair rates by progressive filling. `routes[f]` lists the
/// resources flow `f` crosses; a flow with an empty route gets rate 0.
pub fn max_min_rates(capacities: &[f64], routes: &[Vec<usize>]) -> Vec<f64> {
    let mut rates = vec![0.0; routes.len()];
    let mut left = capacities.to_vec();
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); capacities.len()];
    for (f, route) in routes.iter().enumerate() {
        for &r in route {
            users[r].push(f);
        }
    }
    let mut unfrozen: Vec<usize> = users.iter().map(Vec::len).collect();
    let mut frozen: Vec<bool> = routes.iter().map(Vec::is_empty).collect();
    loop {
        let mut best: Option<(f64, usize)> = None;
        for r in 0..capacities.len() {
            if unfrozen[r] > 0 {
                let share = left[r].max(0.0) / unfrozen[r] as f64;
                if best.is_none_or(|(s, _)| share < s) {
                    best = Some((share, r));
                }
            }
        }
        let Some((share, r)) = best else { break };
        for &f in &users[r] {
            if frozen[f] {
                continue;
            }
            frozen[f] = true;
            rates[f] = share;
            for &q in &routes[f] {
                left[q] -= share;
                unfrozen[q] -= 1;
            }
        }
    }
    rates
}

/// Outcome of one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub flow_id: u64,
    pub class_true: FlowClass,
    /// Final class belief; `None` for policies without classification.
    pub class_detected: Option<FlowClass>,
    pub size_bytes: u64,
    pub start_ns: u64,
    pub fct_ns: u64,
    pub deadline_met: bool,
    /// Classification instant (LightFDG only).
    pub detect_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: FlowClass,
    pub flows: u64,
    pub bytes: u64,
    /// Last finish minus first start over the class.
    pub makespan_ns: u64,
    pub throughput_bps: f64,
    pub mean_fct_ns: f64,
    pub max_fct_ns: u64,
    pub deadline_met: u64,
    pub deadline_satisfaction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    pub rate_updates: u64,
    pub reroutes: u64,
    /// Largest (sum of rates / capacity) seen on any resource.
    pub peak_utilization: f64,
    pub provisioned_capacity_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: Policy,
    pub seed: u64,
    pub mice_deadline_s: f64,
    pub elephant_deadline_s: f64,
    pub flows: Vec<FlowOutcome>,
    pub classes: Vec<ClassSummary>,
    pub detection: Option<DetectionMetrics>,
    pub overhead: Option<DetectorStats>,
    pub stats: RunStats,
}

pub const FLOW_CSV_HEADER: [&str; 8] = [
    "flow_id",
    "class_true",
    "class_detected",
    "policy",
    "start_ns",
    "fct_ns",
    "deadline_met",
    "detect_ns",
];

pub const SUMMARY_CSV_HEADER: [&str; 17] = [
    "policy",
    "seed",
    "class",
    "flows",
    "bytes",
    "makespan_ns",
    "throughput_bps",
    "mean_fct_ns",
    "max_fct_ns",
    "deadline_met",
    "deadline_satisfaction",
    "packets_total",
    "packets_captured",
    "notifications",
    "true_negatives",
    "false_positives",
    "reroutes",
];

impl MetricsReport {
    pub fn class(&self, class: FlowClass) -> &ClassSummary {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .expect("both classes summarized")
    }

    pub fn write_flows_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(FLOW_CSV_HEADER)?;
        for f in &self.flows {
            out.write_record([
                f.flow_id.to_string(),
                f.class_true.to_string(),
                f.class_detected.map(|c| c.to_string()).unwrap_or_default(),
                self.policy.to_string(),
                f.start_ns.to_string(),
                f.fct_ns.to_string(),
                f.deadline_met.to_string(),
                f.detect_ns.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    fn summary_rows(&self) -> impl Iterator<Item = [String; 17]> + '_ {
        let o = self.overhead.unwrap_or_default();
        let d = self.detection.unwrap_or_default();
        self.classes.iter().map(move |c| {
            [
                self.policy.to_string(),
                self.seed.to_string(),
                c.class.to_string(),
                c.flows.to_string(),
                c.bytes.to_string(),
                c.makespan_ns.to_string(),
                format!("{:.6e}", c.throughput_bps),
                format!("{:.3}", c.mean_fct_ns),
                c.max_fct_ns.to_string(),
                c.deadline_met.to_string(),
                format!("{:.6}", c.deadline_satisfaction),
                o.packets_total.to_string(),
                o.packets_captured.to_string(),
                o.notifications.to_string(),
                d.true_negatives.to_string(),
                d.false_positives.to_string(),
                self.stats.reroutes.to_string(),
            ]
        })
    }
}

/// Cross-run summary: one row per (policy, seed, class).
pub fn write_summary_csv<W: Write>(reports: &[MetricsReport], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_CSV_HEADER)?;
    for r in reports {
        for row in r.summary_rows() {
            out.write_record(row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Provision lightpaths for the scenario's demand (seeded by `cfg.seed`).
pub fn provision(cfg: &ScenarioConfig, flows: &[Flow]) -> Result<ProvisioningResult, EngineError> {
    let topology = cfg.topology()?;
    let demand = cfg.demand_matrix(flows)?;
    Ok(provision_all_with(
        &topology,
        &demand,
        ProvisionOptions {
            k_paths: cfg.k_paths,
            seed: cfg.seed,
            ..ProvisionOptions::default()
        },
    )?)
}

/// Generate the scenario with `seed`, provision if the policy needs it,
/// and simulate.
pub fn run(cfg: &ScenarioConfig, policy: Policy, seed: u64) -> Result<MetricsReport, EngineError> {
    let cfg = ScenarioConfig {
        seed,
        ..cfg.clone()
    };
    let flows = generate_flows(&cfg)?;
    let prov = if policy.uses_lightpaths() {
        Some(provision(&cfg, &flows)?)
    } else {
        None
    };
    simulate(&cfg, policy, &flows, prov.as_ref())
}

#[derive(Debug, Clone)]
struct Resource {
    capacity_bpns: f64,
}

#[derive(Debug, Clone)]
struct Active {
    flow: usize,
    size_bits: f64,
    delivered_bits: f64,
    route: Vec<usize>,
    rate_bpns: f64,
    /// LightFDG: next ACK boundary in bytes.
    next_ack: u64,
    on_ef: bool,
    reroute_at: Option<f64>,
    resume_at: Option<f64>,
    detect_ns: Option<u64>,
    /// ECMP-FSO: waiting for a wavelength on this (uplink, downlink).
    waiting: Option<(LinkId, LinkId)>,
}

impl Active {
    fn eps(&self) -> f64 {
        1e-9 * self.size_bits.max(1.0)
    }

    fn done(&self) -> bool {
        self.size_bits - self.delivered_bits <= self.eps()
    }
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    policy: Policy,
    flows: &'a [Flow],
    resources: Vec<Resource>,
    lightpaths: FnvHashMap<(usize, usize, FlowClass), usize>,
    /// Cabled link resource per physical link (ECMP).
    cable: Vec<usize>,
    /// Wavelength resource per (link, w) (ECMP-FSO).
    wavelength: Vec<Vec<usize>>,
    topology: PhysicalTopology,
    detector: Option<Detector>,
    keys: FnvHashMap<FlowKey, usize>,
    active: Vec<Active>,
    outcomes: Vec<Option<FlowOutcome>>,
    verdicts: Vec<FlowVerdict>,
    stats: RunStats,
    now: f64,
    dirty: bool,
}

/// Simulate `flows` under `policy`. Lightpath policies need `prov`.
pub fn simulate(
    cfg: &ScenarioConfig,
    policy: Policy,
    flows: &[Flow],
    prov: Option<&ProvisioningResult>,
) -> Result<MetricsReport, EngineError> {
    cfg.validate()?;
    let topology = cfg.topology()?;
    for f in flows {
        if f.src_rack == f.dst_rack || f.src_rack >= cfg.leaf_count || f.dst_rack >= cfg.leaf_count
        {
            return Err(EngineError::BadFlow {
                id: f.id,
                src: f.src_rack,
                dst: f.dst_rack,
                racks: cfg.leaf_count,
            });
        }
    }
    let mut sim = Sim {
        cfg,
        policy,
        flows,
        resources: Vec::new(),
        lightpaths: FnvHashMap::default(),
        cable: Vec::new(),
        wavelength: Vec::new(),
        detector: None,
        keys: FnvHashMap::default(),
        active: Vec::new(),
        outcomes: vec![None; flows.len()],
        verdicts: Vec::new(),
        stats: RunStats::default(),
        now: 0.0,
        dirty: false,
        topology,
    };
    sim.build_resources(prov)?;
    if policy.uses_lightpaths() {
        // Contract check up front: every flow's initial lightpath exists.
        for f in flows {
            let class = if policy == Policy::FgFso {
                f.class
            } else {
                FlowClass::Mice
            };
            sim.lightpath(f.src_rack, f.dst_rack, class)?;
        }
    }
    if policy == Policy::LightFdg {
        let det = crate::detection::DetectorConfig {
            threshold_bytes: cfg.threshold_bytes,
            ..cfg.detector.clone()
        };
        sim.detector = Some(Detector::new(det)?);
    }
    sim.run()?;
    Ok(sim.report())
}

impl Sim<'_> {
    fn build_resources(&mut self, prov: Option<&ProvisioningResult>) -> Result<(), EngineError> {
        let links = self.topology.links().len();
        match self.policy {
            Policy::Ecmp => {
                let bpns = self.cfg.fso_link_bps * self.cfg.cable_ratio * 1e-9;
                self.cable = (0..links).collect();
                self.resources = vec![
                    Resource {
                        capacity_bpns: bpns
                    };
                    links
                ];
            }
            Policy::EcmpFso => {
                let w = self.cfg.wavelengths;
                let bpns = self.cfg.fso_link_bps / w as f64 * 1e-9;
                self.wavelength = (0..links)
                    .map(|l| (0..w).map(|i| l * w + i).collect())
                    .collect();
                self.resources = vec![
                    Resource {
                        capacity_bpns: bpns
                    };
                    links * w
                ];
            }
            Policy::FgFso | Policy::LightFdg => {
                let prov = prov.ok_or(EngineError::Unprovisioned {
                    src: 0,
                    dst: 0,
                    class: FlowClass::Mice,
                })?;
                for lp in &prov.lightpaths {
                    self.lightpaths
                        .insert((lp.src_rack, lp.dst_rack, lp.class), self.resources.len());
                    self.resources.push(Resource {
                        capacity_bpns: lp.capacity_bps * 1e-9,
                    });
                }
            }
        }
        self.stats.provisioned_capacity_bps =
            self.resources.iter().map(|r| r.capacity_bpns * 1e9).sum();
        Ok(())
    }

    fn lightpath(&self, src: usize, dst: usize, class: FlowClass) -> Result<usize, EngineError> {
        self.lightpaths
            .get(&(src, dst, class))
            .copied()
            .ok_or(EngineError::Unprovisioned { src, dst, class })
    }

    fn spine_links(&self, f: &Flow) -> (LinkId, LinkId) {
        let spine = self.cfg.leaf_count + ecmp_route(&f.key, self.topology.spine_count());
        let up = self
            .topology
            .link_between(f.src_rack, spine)
            .expect("leaf-spine mesh");
        let down = self
            .topology
            .link_between(spine, f.dst_rack)
            .expect("leaf-spine mesh");
        (up, down)
    }

    fn occupied(&self, r: usize) -> bool {
        self.active.iter().any(|a| a.route.contains(&r))
    }

    /// Lowest wavelength free on both links, if any.
    fn free_wavelength(&self, up: LinkId, down: LinkId) -> Option<Vec<usize>> {
        (0..self.cfg.wavelengths)
            .map(|w| vec![self.wavelength[up.0][w], self.wavelength[down.0][w]])
            .find(|route| !route.iter().any(|&r| self.occupied(r)))
    }

    fn ts(&self) -> u64 {
        self.now.round() as u64
    }

    fn feed(&mut self, i: usize, kind: PacketKind, ack_bytes: u64) {
        let Some(det) = self.detector.as_mut() else {
            return;
        };
        let f = &self.flows[self.active[i].flow];
        let c1 = f.client_isn.wrapping_add(1);
        let s1 = f.server_isn.wrapping_add(1);
        let ts = self.now.round() as u64;
        let (key, seq, ack) = match kind {
            PacketKind::SynAck => (f.key.reversed(), f.server_isn, c1),
            PacketKind::Ack => (f.key.reversed(), s1, c1.wrapping_add(ack_bytes as u32)),
            PacketKind::Fin => (f.key, c1.wrapping_add(f.size_bytes as u32), s1),
            _ => unreachable!("engine synthesizes only SYN+ACK, ACK and FIN"),
        };
        let ev = PacketEvent {
            ts_ns: ts,
            key,
            kind,
            seq,
            ack,
            len: 0,
            observer: f.key.subnet(),
        };
        let obs = det.observe(&ev);
        if let Some(c) = obs.classification {
            if c.class == FlowClass::Elephant {
                if let Some(&j) = self.keys.get(&c.key) {
                    let a = &mut self.active[j];
                    if a.detect_ns.is_none() {
                        a.detect_ns = Some(c.at_ns);
                        if !a.on_ef {
                            a.reroute_at = Some((c.at_ns as f64).max(self.now));
                        }
                    }
                }
            }
        }
    }

    fn admit(&mut self, flow: usize) -> Result<(), EngineError> {
        let f = &self.flows[flow];
        let mut a = Active {
            flow,
            size_bits: f.size_bytes as f64 * 8.0,
            delivered_bits: 0.0,
            route: Vec::new(),
            rate_bpns: 0.0,
            next_ack: self.cfg.ack_quantum_bytes,
            on_ef: false,
            reroute_at: None,
            resume_at: None,
            detect_ns: None,
            waiting: None,
        };
        match self.policy {
            Policy::Ecmp => {
                let (up, down) = self.spine_links(f);
                a.route = vec![self.cable[up.0], self.cable[down.0]];
            }
            Policy::EcmpFso => {
                let (up, down) = self.spine_links(f);
                match self.free_wavelength(up, down) {
                    Some(route) => a.route = route,
                    None => a.waiting = Some((up, down)),
                }
            }
            Policy::FgFso => {
                a.route = vec![self.lightpath(f.src_rack, f.dst_rack, f.class)?];
                a.on_ef = f.class == FlowClass::Elephant;
            }
            Policy::LightFdg => {
                a.route = vec![self.lightpath(f.src_rack, f.dst_rack, FlowClass::Mice)?];
            }
        }
        self.keys.insert(f.key, self.active.len());
        self.active.push(a);
        let i = self.active.len() - 1;
        self.feed(i, PacketKind::SynAck, 0);
        self.feed(i, PacketKind::Ack, 0);
        self.dirty = true;
        Ok(())
    }

    fn finish(&mut self, i: usize) {
        let size = self.flows[self.active[i].flow].size_bytes;
        self.feed(i, PacketKind::Ack, size);
        self.feed(i, PacketKind::Fin, 0);
        let a = &self.active[i];
        let f = &self.flows[a.flow];
        let fct = self.now - f.start_ns as f64;
        let deadline = match f.class {
            FlowClass::Mice => self.cfg.mice_deadline_s,
            FlowClass::Elephant => self.cfg.elephant_deadline_s,
        } * 1e9;
        let detected = match self.policy {
            Policy::LightFdg => Some(if a.detect_ns.is_some() {
                FlowClass::Elephant
            } else {
                FlowClass::Mice
            }),
            Policy::FgFso => Some(f.class),
            _ => None,
        };
        if self.policy == Policy::LightFdg {
            self.verdicts.push(FlowVerdict {
                true_class: f.class,
                start_ns: f.start_ns,
                last_packet_ns: self.ts(),
                elephant_at_ns: a.detect_ns,
            });
        }
        self.outcomes[a.flow] = Some(FlowOutcome {
            flow_id: f.id,
            class_true: f.class,
            class_detected: detected,
            size_bytes: f.size_bytes,
            start_ns: f.start_ns,
            fct_ns: fct.round() as u64,
            deadline_met: fct <= deadline,
            detect_ns: a.detect_ns,
        });
    }

    fn recompute(&mut self) {
        let caps: Vec<f64> = self.resources.iter().map(|r| r.capacity_bpns).collect();
        let routes: Vec<Vec<usize>> = self.active.iter().map(|a| a.route.clone()).collect();
        let rates = max_min_rates(&caps, &routes);
        let mut load = vec![0.0; caps.len()];
        for (a, r) in self.active.iter_mut().zip(rates) {
            a.rate_bpns = r;
            for &q in &a.route {
                load[q] += r;
            }
        }
        for (l, c) in load.iter().zip(&caps) {
            if *c > 0.0 {
                self.stats.peak_utilization = self.stats.peak_utilization.max(l / c);
            }
        }
        self.stats.rate_updates += 1;
        self.dirty = false;
    }

    fn next_event(&self, next_arrival: Option<f64>) -> Option<f64> {
        let mut t = next_arrival;
        let mut consider = |x: f64| {
            if t.is_none_or(|cur| x < cur) {
                t = Some(x);
            }
        };
        let lightfdg = self.detector.is_some();
        for a in &self.active {
            if let Some(x) = a.reroute_at {
                consider(x);
            }
            if let Some(x) = a.resume_at {
                consider(x);
            }
            if a.rate_bpns > 0.0 {
                consider(self.now + ((a.size_bits - a.delivered_bits).max(0.0) / a.rate_bpns));
                if lightfdg && (a.next_ack as f64 * 8.0) < a.size_bits {
                    let gap = (a.next_ack as f64 * 8.0 - a.delivered_bits).max(0.0);
                    consider(self.now + gap / a.rate_bpns);
                }
            } else if a.size_bits <= a.delivered_bits
                && a.waiting.is_none()
                && a.resume_at.is_none()
            {
                consider(self.now);
            }
        }
        t
    }

    fn run(&mut self) -> Result<(), EngineError> {
        let mut order: Vec<usize> = (0..self.flows.len()).collect();
        order.sort_by_key(|&i| (self.flows[i].start_ns, self.flows[i].id));
        let mut next = 0;
        loop {
            let arrival = order.get(next).map(|&i| self.flows[i].start_ns as f64);
            let Some(t) = self.next_event(arrival) else {
                break;
            };
            let dt = t - self.now;
            for a in &mut self.active {
                a.delivered_bits = (a.delivered_bits + a.rate_bpns * dt).min(a.size_bits);
            }
            self.now = t;
            self.stats.events += 1;

            // ACK boundaries crossed.
            if self.detector.is_some() {
                for i in 0..self.active.len() {
                    loop {
                        let a = &self.active[i];
                        let b = a.next_ack as f64 * 8.0;
                        if b >= a.size_bits || a.delivered_bits < b - a.eps() {
                            break;
                        }
                        let bytes = a.next_ack;
                        self.active[i].next_ack += self.cfg.ack_quantum_bytes;
                        self.feed(i, PacketKind::Ack, bytes);
                    }
                }
            }

            // Completions, in flow order.
            let mut i = 0;
            let mut released = false;
            while i < self.active.len() {
                let a = &self.active[i];
                if a.done() && a.waiting.is_none() && a.resume_at.is_none() {
                    self.active[i].delivered_bits = self.active[i].size_bits;
                    self.finish(i);
                    let a = self.active.remove(i);
                    self.keys.remove(&self.flows[a.flow].key);
                    for v in self.keys.values_mut() {
                        if *v > i {
                            *v -= 1;
                        }
                    }
                    released = true;
                    self.dirty = true;
                } else {
                    i += 1;
                }
            }

            // Reroutes and pause ends.
            let eps = 1e-6;
            for i in 0..self.active.len() {
                if self.active[i]
                    .reroute_at
                    .is_some_and(|x| x <= self.now + eps)
                {
                    let f = &self.flows[self.active[i].flow];
                    let ef = self.lightpath(f.src_rack, f.dst_rack, FlowClass::Elephant)?;
                    let pause = self.cfg.reroute_pause_ns as f64;
                    let a = &mut self.active[i];
                    a.reroute_at = None;
                    a.on_ef = true;
                    if pause > 0.0 {
                        a.route = Vec::new();
                        a.resume_at = Some(self.now + pause);
                    } else {
                        a.route = vec![ef];
                    }
                    self.stats.reroutes += 1;
                    self.dirty = true;
                }
                if self.active[i]
                    .resume_at
                    .is_some_and(|x| x <= self.now + eps)
                {
                    let f = &self.flows[self.active[i].flow];
                    let ef = self.lightpath(f.src_rack, f.dst_rack, FlowClass::Elephant)?;
                    let a = &mut self.active[i];
                    a.resume_at = None;
                    a.route = vec![ef];
                    self.dirty = true;
                }
            }

            // Queued ECMP-FSO flows, first come first served.
            if released && self.policy == Policy::EcmpFso {
                for i in 0..self.active.len() {
                    if let Some((up, down)) = self.active[i].waiting {
                        if let Some(route) = self.free_wavelength(up, down) {
                            let a = &mut self.active[i];
                            a.waiting = None;
                            a.route = route;
                        }
                    }
                }
            }

            while let Some(&fi) = order.get(next) {
                if self.flows[fi].start_ns as f64 > self.now {
                    break;
                }
                self.admit(fi)?;
                next += 1;
            }

            if self.dirty {
                self.recompute();
            }
        }
        debug_assert!(
            self.active.is_empty(),
            "all flows complete when events run out"
        );
        Ok(())
    }

    fn report(self) -> MetricsReport {
        let flows: Vec<FlowOutcome> = self
            .outcomes
            .into_iter()
            .map(|o| o.expect("flow completed"))
            .collect();
        let classes = FlowClass::ALL
            .into_iter()
            .map(|class| summarize(&flows, class))
            .collect();
        let (detection, overhead) = match &self.detector {
            Some(d) => (Some(detection_metrics(&self.verdicts)), Some(d.stats())),
            None => (None, None),
        };
        MetricsReport {
            policy: self.policy,
            seed: self.cfg.seed,
            mice_deadline_s: self.cfg.mice_deadline_s,
            elephant_deadline_s: self.cfg.elephant_deadline_s,
            flows,
            classes,
            detection,
            overhead,
            stats: self.stats,
        }
    }
}

fn summarize(flows: &[FlowOutcome], class: FlowClass) -> ClassSummary {
    let of: Vec<&FlowOutcome> = flows.iter().filter(|f| f.class_true == class).collect();
    let bytes: u64 = of.iter().map(|f| f.size_bytes).sum();
    let first = of.iter().map(|f| f.start_ns).min().unwrap_or(0);
    let last = of.iter().map(|f| f.start_ns + f.fct_ns).max().unwrap_or(0);
    let makespan = last - first;
    let met = of.iter().filter(|f| f.deadline_met).count() as u64;
    let n = of.len() as u64;
    ClassSummary {
        class,
        flows: n,
        bytes,
        makespan_ns: makespan,
        throughput_bps: if makespan > 0 {
            bytes as f64 * 8.0 / (makespan as f64 * 1e-9)
        } else {
            0.0
        },
        mean_fct_ns: if n > 0 {
            of.iter().map(|f| f.fct_ns as f64).sum::<f64>() / n as f64
        } else {
            0.0
        },
        max_fct_ns: of.iter().map(|f| f.fct_ns).max().unwrap_or(0),
        deadline_met: met,
        deadline_satisfaction: if n > 0 { met as f64 / n as f64 } else { 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::DetectorMode;
    use crate::traffic::{server_addr, DemandOverride, DemandSpec, DEFAULT_DPORT};
    use proptest::prelude::*;
    use std::net::Ipv4Addr;

    fn flow(id: u64, class: FlowClass, size: u64, start_ns: u64) -> Flow {
        Flow {
            id,
            class,
            src_server: 0,
            dst_server: 40,
            src_rack: 0,
            dst_rack: 1,
            size_bytes: size,
            start_ns,
            rate: 1.0,
            key: FlowKey::tcp(
                server_addr(0, 0),
                1024 + id as u16,
                server_addr(1, 0),
                DEFAULT_DPORT,
            ),
            client_isn: 1000 * id as u32,
            server_isn: 5,
        }
    }

    /// Scenario with fixed 10 Gb/s MF and 20 Gb/s EF lightpaths on 0 -> 1.
    fn fixed_cfg() -> ScenarioConfig {
        ScenarioConfig {
            demand: DemandSpec::Uniform {
                mice_rate: 0.0,
                elephant_rate: 0.0,
            },
            demand_overrides: vec![
                DemandOverride {
                    src: 0,
                    dst: 1,
                    class: FlowClass::Mice,
                    bps: 10e9,
                },
                DemandOverride {
                    src: 0,
                    dst: 1,
                    class: FlowClass::Elephant,
                    bps: 20e9,
                },
            ],
            ..ScenarioConfig::default()
        }
    }

    fn sim(cfg: &ScenarioConfig, policy: Policy, flows: &[Flow]) -> MetricsReport {
        let prov = provision(cfg, flows).unwrap();
        simulate(cfg, policy, flows, Some(&prov)).unwrap()
    }

    #[test]
    fn lone_mouse_on_ten_gig_lightpath() {
        let cfg = fixed_cfg();
        let r = sim(&cfg, Policy::FgFso, &[flow(0, FlowClass::Mice, 50_000, 0)]);
        assert_eq!(r.flows[0].fct_ns, 40_000);
        assert!(r.flows[0].deadline_met);
        assert_eq!(r.class(FlowClass::Mice).deadline_satisfaction, 1.0);
    }

    #[test]
    fn elephant_reroutes_after_threshold() {
        let cfg = fixed_cfg();
        let size = 128_000_000;
        let r = sim(
            &cfg,
            Policy::LightFdg,
            &[flow(0, FlowClass::Elephant, size, 1_000)],
        );
        let f = &r.flows[0];
        // 17 quanta of 64 KiB is the first boundary above 1 MiB.
        let boundary_bits: f64 = 17.0 * 65536.0 * 8.0;
        let detect = 1_000.0 + boundary_bits / 10.0;
        assert_eq!(f.detect_ns, Some(detect.round() as u64));
        assert_eq!(f.class_detected, Some(FlowClass::Elephant));
        let rest = (size as f64 * 8.0 - boundary_bits) / 20.0;
        assert!((f.fct_ns as f64 - (boundary_bits / 10.0 + rest)).abs() <= 1.0);
        assert_eq!(r.stats.reroutes, 1);
        assert_eq!(r.detection.unwrap().true_negatives, 0);
    }

    #[test]
    fn centralized_detection_moves_later() {
        let mut cfg = fixed_cfg();
        cfg.detector = crate::detection::DetectorConfig {
            ack_sample_rate: 1,
            ..crate::detection::DetectorConfig::centralized()
        };
        assert_eq!(cfg.detector.mode, DetectorMode::Centralized);
        let r = sim(
            &cfg,
            Policy::LightFdg,
            &[flow(0, FlowClass::Elephant, 4 << 20, 0)],
        );
        let boundary_bits: f64 = 17.0 * 65536.0 * 8.0;
        let expected = boundary_bits / 10.0 + cfg.detector.notification_delay_ns as f64;
        assert_eq!(r.flows[0].detect_ns, Some(expected.round() as u64));
    }

    #[test]
    fn zero_flows_empty_report() {
        let cfg = fixed_cfg();
        let r = sim(&cfg, Policy::LightFdg, &[]);
        assert!(r.flows.is_empty());
        assert_eq!(r.stats.events, 0);
        assert_eq!(r.class(FlowClass::Mice).deadline_satisfaction, 1.0);
    }

    #[test]
    fn deadline_fraction_half() {
        let mut cfg = fixed_cfg();
        cfg.demand_overrides[0].bps = 5e9;
        // Two mice share 5 Gb/s; only the small one meets 1 ms.
        let flows = [
            flow(0, FlowClass::Mice, 50_000, 0),
            flow(1, FlowClass::Mice, 1_000_000, 0),
        ];
        let r = sim(&cfg, Policy::FgFso, &flows);
        assert!(r.flows[0].deadline_met);
        assert!(!r.flows[1].deadline_met);
        assert_eq!(r.class(FlowClass::Mice).deadline_satisfaction, 0.5);
    }

    #[test]
    fn isolated_elephant_throughput_is_lightpath_capacity() {
        let cfg = fixed_cfg();
        let flows = [flow(0, FlowClass::Elephant, 128_000_000, 0)];
        let prov = provision(&cfg, &flows).unwrap();
        let cap = prov
            .lightpath(0, 1, FlowClass::Elephant)
            .unwrap()
            .capacity_bps;
        let r = simulate(&cfg, Policy::FgFso, &flows, Some(&prov)).unwrap();
        let tp = r.class(FlowClass::Elephant).throughput_bps;
        assert!((tp - cap).abs() / cap < 1e-6, "{tp} vs {cap}");
    }

    #[test]
    fn ecmp_fso_fifo_wavelengths() {
        let cfg = ScenarioConfig::default();
        // Five flows with the same hashed spine: same key except dport kept.
        let mut flows: Vec<Flow> = Vec::new();
        let mut port = 0u16;
        let base = flow(0, FlowClass::Mice, 250_000, 0);
        let target = ecmp_route(&base.key, 4);
        while flows.len() < 5 {
            let mut f = flow(flows.len() as u64, FlowClass::Mice, 250_000, 0);
            f.key.sport = 2000 + port;
            port += 1;
            if ecmp_route(&f.key, 4) == target {
                flows.push(f);
            }
        }
        let r = simulate(&cfg, Policy::EcmpFso, &flows, None).unwrap();
        // 2 Mb at 2.5 Gb/s = 800 us; the fifth waits one service time.
        let fcts: Vec<u64> = r.flows.iter().map(|f| f.fct_ns).collect();
        assert_eq!(&fcts[..4], &[800_000; 4]);
        assert_eq!(fcts[4], 1_600_000);
        assert!(r.stats.peak_utilization <= 1.0 + 1e-12);
    }

    #[test]
    fn ecmp_single_flow_uses_cable_rate() {
        let cfg = ScenarioConfig::default();
        let r = simulate(
            &cfg,
            Policy::Ecmp,
            &[flow(0, FlowClass::Mice, 50_000, 0)],
            None,
        )
        .unwrap();
        assert_eq!(r.flows[0].fct_ns, 400_000);
    }

    #[test]
    fn unprovisioned_pair_is_contract_error() {
        let cfg = fixed_cfg();
        let prov = provision(&cfg, &[]).unwrap();
        let mut f = flow(0, FlowClass::Mice, 10, 0);
        f.dst_rack = 2;
        assert!(matches!(
            simulate(&cfg, Policy::FgFso, &[f], Some(&prov)),
            Err(EngineError::Unprovisioned { src: 0, dst: 2, .. })
        ));
    }

    #[test]
    fn ecmp_hash_is_stable_and_balanced() {
        let k = FlowKey::tcp(Ipv4Addr::new(10, 0, 0, 1), 5, Ipv4Addr::new(10, 0, 1, 1), 6);
        assert_eq!(ecmp_route(&k, 4), ecmp_route(&k, 4));
        assert_eq!(ecmp_route(&k, 1), 0);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut bins = [0u32; 4];
        for _ in 0..10_000 {
            let k = FlowKey::tcp(
                Ipv4Addr::from(rng.random::<u32>()),
                rng.random(),
                Ipv4Addr::from(rng.random::<u32>()),
                rng.random(),
            );
            bins[ecmp_route(&k, 4)] += 1;
        }
        assert!(bins.iter().all(|&b| (2250..=2750).contains(&b)), "{bins:?}");
    }

    #[test]
    fn shuffle_run_conserves_and_respects_capacity() {
        let cfg = ScenarioConfig::default();
        for policy in Policy::ALL {
            let r = run(&cfg, policy, 1).unwrap();
            assert_eq!(r.flows.len(), 160);
            assert!(
                r.stats.peak_utilization <= 1.0 + 1e-9,
                "{policy}: {}",
                r.stats.peak_utilization
            );
            let total: f64 = r.classes.iter().map(|c| c.throughput_bps).sum();
            assert!(total <= r.stats.provisioned_capacity_bps * (1.0 + 1e-9));
        }
    }

    #[test]
    fn csv_shapes() {
        let cfg = ScenarioConfig {
            shuffle: crate::traffic::ShuffleConfig {
                k: 2,
                ef_fraction: 0.5,
                ..Default::default()
            },
            ..ScenarioConfig::default()
        };
        let r = run(&cfg, Policy::LightFdg, 2).unwrap();
        let mut buf = Vec::new();
        r.write_flows_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with(
            "flow_id,class_true,class_detected,policy,start_ns,fct_ns,deadline_met,detect_ns"
        ));
        let mut buf = Vec::new();
        write_summary_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    proptest! {
        #[test]
        fn max_min_is_feasible_and_bottlenecked(
            caps in prop::collection::vec(0.5f64..10.0, 1..6),
            raw in prop::collection::vec(prop::collection::vec(0usize..6, 0..3), 0..10),
        ) {
            let n = caps.len();
            let routes: Vec<Vec<usize>> = raw
                .into_iter()
                .map(|r| {
                    let mut r: Vec<usize> = r.into_iter().map(|x| x % n).collect();
                    r.sort_unstable();
                    r.dedup();
                    r
                })
                .collect();
            let rates = max_min_rates(&caps, &routes);
            let mut load = vec![0.0; n];
            for (route, rate) in routes.iter().zip(&rates) {
                for &q in route {
                    load[q] += rate;
                }
            }
            for q in 0..n {
                prop_assert!(load[q] <= caps[q] * (1.0 + 1e-9));
            }
            // Every routed flow has a saturated resource on which it is
            // among the largest flows.
            for (f, route) in routes.iter().enumerate() {
                if route.is_empty() {
                    prop_assert_eq!(rates[f], 0.0);
                    continue;
                }
                let ok = route.iter().any(|&q| {
                    (load[q] - caps[q]).abs() <= 1e-9 * caps[q]
                        && routes
                            .iter()
                            .zip(&rates)
                            .filter(|(r, _)| r.contains(&q))
                            .all(|(_, &x)| x <= rates[f] * (1.0 + 1e-9))
                });
                prop_assert!(ok, "flow {} has no bottleneck", f);
            }
        }
    }
}
