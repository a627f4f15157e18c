//! C ABI over the `lightfdg` library.
//!
//! Every function returns an [`LfdgStatus`]. On failure a message is stored
//! per thread; copy it out with [`lfdg_last_error`]. Objects are opaque
//! handles released with the matching `*_free` function, which accepts NULL.
//! Panics never cross the boundary; they surface as `LFDG_STATUS_PANIC`.

// Entry points validate pointers themselves and stay callable from safe Rust.
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};

use lightfdg::detection::{
    Detector, DetectorConfig, DetectorMode, FlowKey, PacketEvent, PacketKind,
};
use lightfdg::engine::{self, EngineError, MetricsReport, Policy};
use lightfdg::optics::{wavelength_capacity, ChannelGain};
use lightfdg::provisioning::{ProvisionError, ProvisioningResult};
use lightfdg::topology::min_wavelengths;
use lightfdg::traffic::{generate_flows, ScenarioConfig};
use lightfdg::FlowClass;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfdgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    /// No lightpath assignment satisfies the demand.
    Infeasible = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfdgClass {
    Mice = 0,
    Elephant = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfdgPolicy {
    Ecmp = 0,
    EcmpFso = 1,
    FgFso = 2,
    Lightfdg = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfdgMode {
    InNetwork = 0,
    Centralized = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfdgPacketKind {
    Syn = 0,
    SynAck = 1,
    Ack = 2,
    Fin = 3,
    Rst = 4,
    Data = 5,
}

/// Scenario parsed from JSON.
pub struct LfdgScenario(ScenarioConfig);

/// Provisioned lightpath table.
pub struct LfdgProvisioning(ProvisioningResult);

/// Metrics of one simulation run.
pub struct LfdgReport(MetricsReport);

/// Streaming ACK-based detector.
pub struct LfdgDetector(Detector);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LfdgClassSummary {
    pub flows: u64,
    pub bytes: u64,
    pub makespan_ns: u64,
    pub throughput_bps: f64,
    pub mean_fct_ns: f64,
    pub max_fct_ns: u64,
    pub deadline_met: u64,
    pub deadline_satisfaction: f64,
}

/// One TCP packet as seen at an edge switch. Addresses are IPv4 in host
/// byte order (10.0.1.2 is 0x0A000102).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LfdgPacket {
    pub ts_ns: u64,
    pub src: u32,
    pub dst: u32,
    pub sport: u16,
    pub dport: u16,
    pub kind: LfdgPacketKind,
    pub seq: u32,
    pub ack: u32,
    pub len: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LfdgDetectorOptions {
    pub mode: LfdgMode,
    pub threshold_bytes: u64,
    pub notification_delay_ns: u64,
    /// Forward one ACK in this many (centralized mode).
    pub ack_sample_rate: u32,
    pub stop_useless: bool,
    pub preclassify: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LfdgClassification {
    /// False when this packet produced no decision; other fields are then zero.
    pub classified: bool,
    pub class: LfdgClass,
    pub at_ns: u64,
    pub preclassified: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LfdgDetectorStats {
    pub packets_total: u64,
    pub packets_captured: u64,
    pub notifications: u64,
    pub elephants_detected: u64,
    pub preclassified: u64,
    pub suppressed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(LfdgStatus, String);

impl Failure {
    fn new(status: LfdgStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LfdgStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (LfdgStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            (LfdgStatus::Panic, format!("internal error: {m}"))
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass pointers obtained from this library or valid C objects.
    unsafe { p.as_ref() }
        .ok_or_else(|| Failure::new(LfdgStatus::NullPointer, format!("{name} is NULL")))
}

fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: as above; the caller owns the output slot.
    unsafe { p.as_mut() }
        .ok_or_else(|| Failure::new(LfdgStatus::NullPointer, format!("{name} is NULL")))
}

fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            LfdgStatus::NullPointer,
            format!("{name} is NULL"),
        ));
    }
    // SAFETY: non-null and NUL-terminated by contract.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|e| {
        Failure::new(
            LfdgStatus::InvalidArgument,
            format!("{name} is not UTF-8: {e}"),
        )
    })
}

/// Copy `text` plus a NUL into `buf`; `needed` receives the full size.
fn copy_out(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let n = text.len() + 1;
    if let Some(slot) = unsafe { needed.as_mut() } {
        *slot = n;
    }
    if buf.is_null() || len < n {
        return Err(Failure::new(
            LfdgStatus::BufferTooSmall,
            format!("buffer of {len} bytes, {n} needed"),
        ));
    }
    // SAFETY: buf holds at least `len >= n` bytes.
    unsafe {
        std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
    }
    Ok(())
}

fn engine_failure(e: EngineError) -> Failure {
    let status = match &e {
        EngineError::Unprovisioned { .. }
        | EngineError::Provision(
            ProvisionError::TooFewWavelengths { .. } | ProvisionError::Infeasible { .. },
        ) => LfdgStatus::Infeasible,
        _ => LfdgStatus::InvalidArgument,
    };
    Failure::new(status, e.to_string())
}

fn class_of(c: LfdgClass) -> FlowClass {
    match c {
        LfdgClass::Mice => FlowClass::Mice,
        LfdgClass::Elephant => FlowClass::Elephant,
    }
}

fn into_box<T>(v: T, out: *mut *mut T) {
    // SAFETY: `out` checked non-null by callers.
    unsafe { *out = Box::into_raw(Box::new(v)) };
}

fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: handle came from `into_box` and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lfdg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message (empty after success).
/// `needed` (nullable) receives the size including the NUL.
#[no_mangle]
pub extern "C" fn lfdg_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> LfdgStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match copy_out(&msg, buf, len, needed) {
        Ok(()) => LfdgStatus::Ok,
        Err(Failure(s, _)) => s,
    }
}

/// Smallest wavelength count that fits one MF and one EF lightpath per rack pair.
#[no_mangle]
pub extern "C" fn lfdg_min_wavelengths(
    leaf_count: usize,
    spine_ratio: f64,
    out: *mut usize,
) -> LfdgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if leaf_count < 2 || !(spine_ratio > 0.0 && spine_ratio <= 1.0) {
            return Err(Failure::new(
                LfdgStatus::InvalidArgument,
                format!("need leaf_count >= 2 and 0 < spine_ratio <= 1, got {leaf_count}, {spine_ratio}"),
            ));
        }
        *out = min_wavelengths(leaf_count, spine_ratio);
        Ok(())
    })
}

/// Achievable bit rate of one wavelength with composite channel gain `gain`.
#[no_mangle]
pub extern "C" fn lfdg_wavelength_capacity(
    gain: f64,
    intensity: f64,
    bandwidth_hz: f64,
    out: *mut f64,
) -> LfdgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inv = |e: lightfdg::optics::OpticsError| {
            Failure::new(LfdgStatus::InvalidArgument, e.to_string())
        };
        let g = ChannelGain::composite_only(gain).map_err(inv)?;
        *out = wavelength_capacity(&g, intensity, bandwidth_hz).map_err(inv)?;
        Ok(())
    })
}

/// Parse and validate a scenario from a JSON string.
#[no_mangle]
pub extern "C" fn lfdg_scenario_from_json(
    json: *const c_char,
    out: *mut *mut LfdgScenario,
) -> LfdgStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = c_str(json, "json")?;
        let cfg = ScenarioConfig::from_json(text)
            .map_err(|e| Failure::new(LfdgStatus::Parse, e.to_string()))?;
        into_box(LfdgScenario(cfg), out);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lfdg_scenario_free(scenario: *mut LfdgScenario) {
    free(scenario);
}

/// Provision MF and EF lightpaths for the scenario's workload with `seed`.
#[no_mangle]
pub extern "C" fn lfdg_provision(
    scenario: *const LfdgScenario,
    seed: u64,
    out: *mut *mut LfdgProvisioning,
) -> LfdgStatus {
    guard(|| {
        let cfg = ScenarioConfig {
            seed,
            ..non_null(scenario, "scenario")?.0.clone()
        };
        out_ptr(out, "out")?;
        let flows = generate_flows(&cfg).map_err(|e| engine_failure(e.into()))?;
        let r = engine::provision(&cfg, &flows).map_err(engine_failure)?;
        into_box(LfdgProvisioning(r), out);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lfdg_provisioning_count(
    p: *const LfdgProvisioning,
    class: LfdgClass,
    out: *mut usize,
) -> LfdgStatus {
    guard(|| {
        let p = non_null(p, "provisioning")?;
        *out_ptr(out, "out")? = p.0.count(class_of(class));
        Ok(())
    })
}

/// Serialize the lightpath table as JSON into `buf`.
#[no_mangle]
pub extern "C" fn lfdg_provisioning_to_json(
    p: *const LfdgProvisioning,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> LfdgStatus {
    guard(|| {
        let p = non_null(p, "provisioning")?;
        let json = serde_json::to_string(&p.0.to_document()).expect("document serializes");
        copy_out(&json, buf, len, needed)
    })
}

#[no_mangle]
pub extern "C" fn lfdg_provisioning_free(p: *mut LfdgProvisioning) {
    free(p);
}

/// Simulate the scenario's workload under `policy` with `seed`.
#[no_mangle]
pub extern "C" fn lfdg_simulate(
    scenario: *const LfdgScenario,
    policy: LfdgPolicy,
    seed: u64,
    out: *mut *mut LfdgReport,
) -> LfdgStatus {
    guard(|| {
        let cfg = &non_null(scenario, "scenario")?.0;
        out_ptr(out, "out")?;
        let policy = match policy {
            LfdgPolicy::Ecmp => Policy::Ecmp,
            LfdgPolicy::EcmpFso => Policy::EcmpFso,
            LfdgPolicy::FgFso => Policy::FgFso,
            LfdgPolicy::Lightfdg => Policy::LightFdg,
        };
        let r = engine::run(cfg, policy, seed).map_err(engine_failure)?;
        into_box(LfdgReport(r), out);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lfdg_report_flow_count(report: *const LfdgReport, out: *mut usize) -> LfdgStatus {
    guard(|| {
        let r = non_null(report, "report")?;
        *out_ptr(out, "out")? = r.0.flows.len();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lfdg_report_class_summary(
    report: *const LfdgReport,
    class: LfdgClass,
    out: *mut LfdgClassSummary,
) -> LfdgStatus {
    guard(|| {
        let r = non_null(report, "report")?;
        let out = out_ptr(out, "out")?;
        let s = r.0.class(class_of(class));
        *out = LfdgClassSummary {
            flows: s.flows,
            bytes: s.bytes,
            makespan_ns: s.makespan_ns,
            throughput_bps: s.throughput_bps,
            mean_fct_ns: s.mean_fct_ns,
            max_fct_ns: s.max_fct_ns,
            deadline_met: s.deadline_met,
            deadline_satisfaction: s.deadline_satisfaction,
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lfdg_report_free(report: *mut LfdgReport) {
    free(report);
}

/// Library defaults for the given mode.
#[no_mangle]
pub extern "C" fn lfdg_detector_options_default(mode: LfdgMode) -> LfdgDetectorOptions {
    let c = match mode {
        LfdgMode::InNetwork => DetectorConfig::in_network(),
        LfdgMode::Centralized => DetectorConfig::centralized(),
    };
    LfdgDetectorOptions {
        mode,
        threshold_bytes: c.threshold_bytes,
        notification_delay_ns: c.notification_delay_ns,
        ack_sample_rate: c.ack_sample_rate,
        stop_useless: c.stop_useless,
        preclassify: c.preclassify,
    }
}

#[no_mangle]
pub extern "C" fn lfdg_detector_new(
    options: *const LfdgDetectorOptions,
    out: *mut *mut LfdgDetector,
) -> LfdgStatus {
    guard(|| {
        let o = non_null(options, "options")?;
        out_ptr(out, "out")?;
        let cfg = DetectorConfig {
            mode: match o.mode {
                LfdgMode::InNetwork => DetectorMode::InNetwork,
                LfdgMode::Centralized => DetectorMode::Centralized,
            },
            threshold_bytes: o.threshold_bytes,
            notification_delay_ns: o.notification_delay_ns,
            ack_sample_rate: o.ack_sample_rate,
            stop_useless: o.stop_useless,
            preclassify: o.preclassify,
            ..DetectorConfig::default()
        };
        let d = Detector::new(cfg)
            .map_err(|e| Failure::new(LfdgStatus::InvalidArgument, e.to_string()))?;
        into_box(LfdgDetector(d), out);
        Ok(())
    })
}

/// Feed one packet; `out` reports whether it produced a classification.
#[no_mangle]
pub extern "C" fn lfdg_detector_observe(
    detector: *mut LfdgDetector,
    packet: *const LfdgPacket,
    out: *mut LfdgClassification,
) -> LfdgStatus {
    guard(|| {
        let d = out_ptr(detector, "detector")?;
        let p = non_null(packet, "packet")?;
        let out = out_ptr(out, "out")?;
        let kind = match p.kind {
            LfdgPacketKind::Syn => PacketKind::Syn,
            LfdgPacketKind::SynAck => PacketKind::SynAck,
            LfdgPacketKind::Ack => PacketKind::Ack,
            LfdgPacketKind::Fin => PacketKind::Fin,
            LfdgPacketKind::Rst => PacketKind::Rst,
            LfdgPacketKind::Data => PacketKind::Data,
        };
        let key = FlowKey::tcp(
            Ipv4Addr::from(p.src),
            p.sport,
            Ipv4Addr::from(p.dst),
            p.dport,
        );
        let ev = PacketEvent::new(p.ts_ns, key, kind, p.seq, p.ack, p.len);
        *out = match d.0.observe(&ev).classification {
            Some(c) => LfdgClassification {
                classified: true,
                class: match c.class {
                    FlowClass::Mice => LfdgClass::Mice,
                    FlowClass::Elephant => LfdgClass::Elephant,
                },
                at_ns: c.at_ns,
                preclassified: c.preclassified,
            },
            None => LfdgClassification {
                classified: false,
                class: LfdgClass::Mice,
                at_ns: 0,
                preclassified: false,
            },
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lfdg_detector_stats(
    detector: *const LfdgDetector,
    out: *mut LfdgDetectorStats,
) -> LfdgStatus {
    guard(|| {
        let s = non_null(detector, "detector")?.0.stats();
        *out_ptr(out, "out")? = LfdgDetectorStats {
            packets_total: s.packets_total,
            packets_captured: s.packets_captured,
            notifications: s.notifications,
            elephants_detected: s.elephants_detected,
            preclassified: s.preclassified,
            suppressed: s.suppressed,
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lfdg_detector_free(detector: *mut LfdgDetector) {
    free(detector);
}
