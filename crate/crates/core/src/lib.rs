//! Flow-level simulator and library for WDM-FSO leaf-spine data center
//! networks.
//!
//! The crate covers the whole LightFDG pipeline:
//!
//! * [`optics`]: IM-DD wavelength capacity and intensity sizing.
//! * [`topology`]: the full-mesh spine-leaf fabric with per-link wavelength
//!   occupancy and residual intensity, plus per-class virtual views.
//! * [`provisioning`]: loop-less k-widest paths and MF-before-EF lightpath
//!   provisioning.
//! * [`grooming`]: S2S, S2R and R2R aggregation of per-class flow demand.
//! * [`detection`]: TCP-ACK based elephant-flow detection (in-network and
//!   centralized) with overhead minimization and a packet-sampling baseline.
//! * [`traffic`]: synthetic workloads and TCP packet-event synthesis.
//! * [`engine`]: the fluid discrete-event simulator and forwarding policies.
//! * [`cli`]: the `lightfdg` command-line front end.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod cli;
pub mod detection;
pub mod engine;
pub mod grooming;
pub mod optics;
pub mod provisioning;
pub mod topology;
pub mod traffic;

/// Flow class. Mice flows are small and delay sensitive; elephant flows are
/// large and bandwidth hungry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowClass {
    #[serde(rename = "MF")]
    Mice,
    #[serde(rename = "EF")]
    Elephant,
}

impl FlowClass {
    pub const ALL: [FlowClass; 2] = [FlowClass::Mice, FlowClass::Elephant];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Mice => "MF",
            FlowClass::Elephant => "EF",
        }
    }

    /// Ground-truth class of a flow of `size` bytes under threshold `th`.
    pub fn from_size(size: u64, threshold: u64) -> FlowClass {
        if size > threshold {
            FlowClass::Elephant
        } else {
            FlowClass::Mice
        }
    }
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlowClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MF" | "mf" | "mice" => Ok(FlowClass::Mice),
            "EF" | "ef" | "elephant" => Ok(FlowClass::Elephant),
            other => Err(format!("unknown flow class `{other}` (expected MF or EF)")),
        }
    }
}
