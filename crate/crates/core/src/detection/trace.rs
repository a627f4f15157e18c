//! Packet-event CSV traces and offline detector replay.
//!
//! Trace schema: `ts_ns,src,sport,dst,dport,flags,seq,ack,len` with flags
//! one of SYN, SYNACK, ACK, FIN, RST, DATA.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::Ipv4Addr;

use fnv::FnvHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    detection_metrics, DetectionMetrics, Detector, DetectorConfig, DetectorConfigError,
    DetectorStats, FlowKey, FlowVerdict, PacketEvent, PacketKind, SamplingBaseline, SamplingConfig,
};
use crate::FlowClass;

pub const TRACE_HEADER: [&str; 9] = [
    "ts_ns", "src", "sport", "dst", "dport", "flags", "seq", "ack", "len",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace row {row}: {message}")]
    Schema { row: u64, message: String },
    #[error("trace header must be `{expected}`, got `{0}`", expected = TRACE_HEADER.join(","))]
    Header(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] DetectorConfigError),
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    ts_ns: u64,
    src: Ipv4Addr,
    sport: u16,
    dst: Ipv4Addr,
    dport: u16,
    flags: String,
    seq: u32,
    ack: u32,
    len: u32,
}

/// Streaming reader. Rows are numbered from 1 after the header.
pub fn read_trace<R: Read>(
    input: R,
) -> Result<impl Iterator<Item = Result<PacketEvent, TraceError>>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != TRACE_HEADER {
        return Err(TraceError::Header(header.join(",")));
    }
    Ok(rdr
        .into_deserialize::<TraceRow>()
        .enumerate()
        .map(|(i, row)| {
            let row_no = i as u64 + 1;
            let row = row.map_err(|e| TraceError::Schema {
                row: row_no,
                message: e.to_string(),
            })?;
            let kind = row
                .flags
                .parse::<PacketKind>()
                .map_err(|message| TraceError::Schema {
                    row: row_no,
                    message,
                })?;
            if matches!(kind, PacketKind::Syn | PacketKind::SynAck) && row.len != 0 {
                return Err(TraceError::Schema {
                    row: row_no,
                    message: "handshake packets carry no payload".into(),
                });
            }
            let key = FlowKey::tcp(row.src, row.sport, row.dst, row.dport);
            Ok(PacketEvent::new(
                row.ts_ns, key, kind, row.seq, row.ack, row.len,
            ))
        }))
}

pub fn write_trace<W: Write, I: IntoIterator<Item = PacketEvent>>(
    out: W,
    events: I,
) -> Result<u64, TraceError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(TRACE_HEADER)?;
    let mut n = 0;
    for ev in events {
        w.serialize(TraceRow {
            ts_ns: ev.ts_ns,
            src: ev.key.src,
            sport: ev.key.sport,
            dst: ev.key.dst,
            dport: ev.key.dport,
            flags: ev.kind.token().to_owned(),
            seq: ev.seq,
            ack: ev.ack,
            len: ev.len,
        })?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

#[derive(Debug, Clone)]
pub enum ReplayDetector {
    Ack(DetectorConfig),
    Sampling(SamplingConfig),
}

enum Engine {
    Ack(Box<Detector>),
    Sampling(Box<SamplingBaseline>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReplay {
    pub flow_id: u64,
    /// Connection as first seen.
    pub key: FlowKey,
    pub true_class: FlowClass,
    pub detected_class: FlowClass,
    pub detect_ts_ns: Option<u64>,
    pub notifications: u64,
    pub start_ns: u64,
    pub last_ns: u64,
    /// Payload bytes per direction: (as first seen, reverse).
    pub data_bytes: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub flows: Vec<FlowReplay>,
    pub stats: DetectorStats,
    pub metrics: DetectionMetrics,
}

impl ReplayReport {
    pub fn write_detection_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "flow_id",
            "true_class",
            "detected_class",
            "detect_ts_ns",
            "notifications",
        ])?;
        for f in &self.flows {
            w.write_record([
                f.flow_id.to_string(),
                f.true_class.to_string(),
                f.detected_class.to_string(),
                f.detect_ts_ns.map(|t| t.to_string()).unwrap_or_default(),
                f.notifications.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_overhead_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "packets_total",
            "packets_captured",
            "notifications",
            "elephants_detected",
            "preclassified",
            "suppressed",
            "true_negatives",
            "false_positives",
            "accuracy",
        ])?;
        let (s, m) = (&self.stats, &self.metrics);
        w.write_record([
            s.packets_total.to_string(),
            s.packets_captured.to_string(),
            s.notifications.to_string(),
            s.elephants_detected.to_string(),
            s.preclassified.to_string(),
            s.suppressed.to_string(),
            m.true_negatives.to_string(),
            m.false_positives.to_string(),
            format!("{:.6}", m.accuracy),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Run one detector over a packet stream and score it per connection.
///
/// Connections are numbered by first appearance. Ground truth is the larger
/// per-direction payload total compared against `threshold_bytes`.
pub fn replay<I>(
    events: I,
    detector: &ReplayDetector,
    threshold_bytes: u64,
) -> Result<ReplayReport, TraceError>
where
    I: IntoIterator<Item = Result<PacketEvent, TraceError>>,
{
    let mut engine = match detector {
        ReplayDetector::Ack(c) => Engine::Ack(Box::new(Detector::new(c.clone())?)),
        ReplayDetector::Sampling(c) => {
            Engine::Sampling(Box::new(SamplingBaseline::new(c.clone())?))
        }
    };
    let mut ids: FnvHashMap<FlowKey, usize> = FnvHashMap::default();
    let mut flows: Vec<FlowReplay> = Vec::new();

    for ev in events {
        let ev = ev?;
        let idx = match ids.get(&ev.key) {
            Some(&i) => i,
            None => {
                let i = flows.len();
                ids.insert(ev.key, i);
                ids.insert(ev.key.reversed(), i);
                flows.push(FlowReplay {
                    flow_id: i as u64,
                    key: ev.key,
                    true_class: FlowClass::Mice,
                    detected_class: FlowClass::Mice,
                    detect_ts_ns: None,
                    notifications: 0,
                    start_ns: ev.ts_ns,
                    last_ns: ev.ts_ns,
                    data_bytes: (0, 0),
                });
                i
            }
        };
        let f = &mut flows[idx];
        f.last_ns = f.last_ns.max(ev.ts_ns);
        if ev.kind == PacketKind::Data {
            if ev.key == f.key {
                f.data_bytes.0 += u64::from(ev.len);
            } else {
                f.data_bytes.1 += u64::from(ev.len);
            }
        }
        let (notified, class) = match &mut engine {
            Engine::Ack(d) => {
                let o = d.observe(&ev);
                (o.notified, o.classification)
            }
            Engine::Sampling(b) => {
                let before = b.stats().notifications;
                let c = b.observe(&ev);
                (b.stats().notifications > before, c)
            }
        };
        if notified {
            f.notifications += 1;
        }
        if let Some(c) = class {
            if c.class == FlowClass::Elephant && f.detect_ts_ns.is_none() {
                f.detected_class = FlowClass::Elephant;
                f.detect_ts_ns = Some(c.at_ns);
            }
        }
    }

    let mut verdicts = Vec::with_capacity(flows.len());
    for f in &mut flows {
        f.true_class = FlowClass::from_size(f.data_bytes.0.max(f.data_bytes.1), threshold_bytes);
        verdicts.push(FlowVerdict {
            true_class: f.true_class,
            start_ns: f.start_ns,
            last_packet_ns: f.last_ns,
            elephant_at_ns: f.detect_ts_ns,
        });
    }
    let stats = match &engine {
        Engine::Ack(d) => d.stats(),
        Engine::Sampling(b) => b.stats(),
    };
    Ok(ReplayReport {
        metrics: detection_metrics(&verdicts),
        flows,
        stats,
    })
}

/// Group replayed flows by (true, detected) class for quick summaries.
pub fn confusion(report: &ReplayReport) -> BTreeMap<(FlowClass, FlowClass), u64> {
    let mut m = BTreeMap::new();
    for f in &report.flows {
        *m.entry((f.true_class, f.detected_class)).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "ts_ns,src,sport,dst,dport,flags,seq,ack,len
0,10.0.0.1,40000,10.0.1.1,80,SYN,99,0,0
1,10.0.1.1,80,10.0.0.1,40000,SYNACK,500,100,0
2,10.0.0.1,40000,10.0.1.1,80,ACK,100,501,0
3,10.0.0.1,40000,10.0.1.1,80,DATA,100,501,2000
4,10.0.1.1,80,10.0.0.1,40000,ACK,501,2100,0
5,10.0.0.1,40000,10.0.1.1,80,FIN,2100,501,0
";

    #[test]
    fn parse_and_round_trip() {
        let events: Vec<_> = read_trace(SAMPLE.as_bytes())
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(events.len(), 6);
        assert_eq!(events[1].kind, PacketKind::SynAck);
        let mut out = Vec::new();
        write_trace(&mut out, events.clone()).unwrap();
        let again: Vec<_> = read_trace(out.as_slice())
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(again, events);
    }

    #[test]
    fn schema_errors_name_the_row() {
        let bad = SAMPLE.replace(
            "4,10.0.1.1,80,10.0.0.1,40000,ACK",
            "4,10.0.1.1,80,10.0.0.1,40000,PSH",
        );
        let err = read_trace(bad.as_bytes())
            .unwrap()
            .find_map(Result::err)
            .unwrap();
        assert!(matches!(err, TraceError::Schema { row: 5, .. }), "{err}");
        let bad = SAMPLE.replace("2,10.0.0.1,40000", "x,10.0.0.1,40000");
        let err = read_trace(bad.as_bytes())
            .unwrap()
            .find_map(Result::err)
            .unwrap();
        assert!(matches!(err, TraceError::Schema { row: 3, .. }), "{err}");
        assert!(matches!(
            read_trace("a,b\n".as_bytes()),
            Err(TraceError::Header(_))
        ));
    }

    #[test]
    fn replay_small_trace() {
        let det = ReplayDetector::Ack(DetectorConfig {
            threshold_bytes: 1000,
            ..DetectorConfig::in_network()
        });
        let r = replay(read_trace(SAMPLE.as_bytes()).unwrap(), &det, 1000).unwrap();
        assert_eq!(r.flows.len(), 1);
        let f = &r.flows[0];
        assert_eq!(
            (f.true_class, f.detected_class, f.detect_ts_ns),
            (FlowClass::Elephant, FlowClass::Elephant, Some(4))
        );
        assert_eq!(r.metrics.true_negatives, 0);
        let mut csv = Vec::new();
        r.write_detection_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "flow_id,true_class,detected_class,detect_ts_ns,notifications\n0,EF,EF,4,1\n"
        );
    }

    #[test]
    fn empty_trace_gives_header_only() {
        let input = format!("{}\n", TRACE_HEADER.join(","));
        let r = replay(
            read_trace(input.as_bytes()).unwrap(),
            &ReplayDetector::Ack(DetectorConfig::default()),
            1 << 20,
        )
        .unwrap();
        let mut csv = Vec::new();
        r.write_detection_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "flow_id,true_class,detected_class,detect_ts_ns,notifications\n"
        );
        assert!(confusion(&r).is_empty());
    }
}
