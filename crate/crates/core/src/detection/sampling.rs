//! Random packet-sampling baseline (sFlow / OpenSample style).
//!
//! Every packet is sampled independently with probability 1/S. A flow's
//! size estimate is S times the payload bytes of its sampled packets; the
//! flow is declared an elephant once the estimate exceeds the threshold.
//! The collector acts on samples once per export interval, so a decision
//! takes effect at the end of the interval in which the estimate crossed.

use fnv::FnvHashMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::{Classification, DetectorConfigError, DetectorStats, FlowKey, PacketEvent};
use crate::FlowClass;

pub const DEFAULT_EXPORT_INTERVAL_NS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub sample_rate: u32,
    pub threshold_bytes: u64,
    pub export_interval_ns: u64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            sample_rate: 1000,
            threshold_bytes: super::DEFAULT_THRESHOLD_BYTES,
            export_interval_ns: DEFAULT_EXPORT_INTERVAL_NS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Estimate {
    sampled_bytes: u64,
    elephant_at_ns: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SamplingBaseline {
    config: SamplingConfig,
    rng: ChaCha8Rng,
    gap: Geometric,
    /// Packets left to skip before the next sample.
    skip: u64,
    flows: FnvHashMap<FlowKey, Estimate>,
    stats: DetectorStats,
}

impl SamplingBaseline {
    pub fn new(config: SamplingConfig) -> Result<Self, DetectorConfigError> {
        if config.sample_rate == 0 {
            return Err(DetectorConfigError::ZeroSampleRate);
        }
        if config.threshold_bytes == 0 {
            return Err(DetectorConfigError::ZeroThreshold);
        }
        // Inter-sample gaps of independent 1/S trials are geometric.
        let gap = Geometric::new(1.0 / f64::from(config.sample_rate)).expect("0 < p <= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let skip = gap.sample(&mut rng);
        Ok(SamplingBaseline {
            config,
            rng,
            gap,
            skip,
            flows: FnvHashMap::default(),
            stats: DetectorStats::default(),
        })
    }

    pub fn stats(&self) -> DetectorStats {
        self.stats
    }

    /// Current size estimate of a flow's data direction.
    pub fn estimate(&self, key: &FlowKey) -> u64 {
        self.flows
            .get(key)
            .map_or(0, |e| e.sampled_bytes * u64::from(self.config.sample_rate))
    }

    pub fn elephant_at(&self, key: &FlowKey) -> Option<u64> {
        self.flows.get(key).and_then(|e| e.elephant_at_ns)
    }

    fn effective(&self, ts: u64) -> u64 {
        match self.config.export_interval_ns {
            0 => ts,
            i => (ts / i + 1) * i,
        }
    }

    pub fn observe(&mut self, ev: &PacketEvent) -> Option<Classification> {
        self.stats.packets_total += 1;
        if self.skip > 0 {
            self.skip -= 1;
            return None;
        }
        self.skip = self.gap.sample(&mut self.rng);
        self.stats.packets_captured += 1;
        self.stats.notifications += 1;
        if ev.len == 0 {
            return None;
        }
        let at = self.effective(ev.ts_ns);
        let (s, th) = (
            u64::from(self.config.sample_rate),
            self.config.threshold_bytes,
        );
        let e = self.flows.entry(ev.key).or_default();
        e.sampled_bytes += u64::from(ev.len);
        if e.elephant_at_ns.is_none() && e.sampled_bytes * s > th {
            e.elephant_at_ns = Some(at);
            self.stats.elephants_detected += 1;
            return Some(Classification {
                key: ev.key,
                class: FlowClass::Elephant,
                at_ns: at,
                preclassified: false,
            });
        }
        None
    }
}
