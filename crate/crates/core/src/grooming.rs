//! Three-step optical grooming: server-to-server (S2S), server-to-rack (S2R)
//! and rack-to-rack (R2R) aggregation of classified flows.
//!
//! Aggregation is bookkeeping only. Each level partitions the flows of the
//! level below and carries the composite Poisson rate of its members.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provisioning::{ClassProfile, DemandMatrix, ProvisionError};
use crate::FlowClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroomingError {
    #[error("flow {0} is unclassified; grooming runs after detection")]
    Unclassified(u64),
    #[error("flow {id}: server {server} is not in the rack map")]
    UnknownServer { id: u64, server: usize },
    #[error("flow {id}: size must be positive")]
    EmptyFlow { id: u64 },
    #[error("arrival rate must be finite and non-negative, got {0}")]
    NegativeRate(f64),
    #[error(transparent)]
    Demand(#[from] ProvisionError),
}

/// Superposition of independent Poisson processes: the left-fold sum.
pub fn compose_rate(rates: &[f64]) -> Result<f64, GroomingError> {
    rates.iter().try_fold(0.0, |acc, &r| {
        if r.is_finite() && r >= 0.0 {
            Ok(acc + r)
        } else {
            Err(GroomingError::NegativeRate(r))
        }
    })
}

/// Server to rack assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RackMap {
    rack_of: Vec<usize>,
    racks: usize,
}

impl RackMap {
    /// `hosts_per_rack` consecutive server ids per rack.
    pub fn uniform(racks: usize, hosts_per_rack: usize) -> Self {
        RackMap {
            rack_of: (0..racks * hosts_per_rack)
                .map(|s| s / hosts_per_rack.max(1))
                .collect(),
            racks,
        }
    }

    pub fn explicit(rack_of: Vec<usize>) -> Self {
        let racks = rack_of.iter().map(|r| r + 1).max().unwrap_or(0);
        RackMap { rack_of, racks }
    }

    pub fn rack(&self, server: usize) -> Option<usize> {
        self.rack_of.get(server).copied()
    }

    pub fn racks(&self) -> usize {
        self.racks
    }

    pub fn servers(&self) -> usize {
        self.rack_of.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDescriptor {
    pub id: u64,
    /// `None` until the flow has been classified.
    pub class: Option<FlowClass>,
    pub src_server: usize,
    pub dst_server: usize,
    /// Arrival rate (flows/s) for synthetic workloads.
    pub rate: f64,
    pub size_bytes: u64,
    pub arrival_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroomLevel {
    S2S,
    S2R,
    R2R,
}

/// Endpoints of an aggregate, interpreted per level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoints {
    /// Source and destination servers.
    Servers { src: usize, dst: usize },
    /// Source server and destination rack.
    ServerRack { src: usize, dst_rack: usize },
    /// Source and destination racks.
    Racks { src_rack: usize, dst_rack: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroomedAggregate {
    pub level: GroomLevel,
    pub class: FlowClass,
    pub endpoints: Endpoints,
    pub rate: f64,
    pub members: Vec<u64>,
}

/// Output of [`groom_three_step`]. Aggregates are sorted by (class, endpoints).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grooming {
    pub s2s: Vec<GroomedAggregate>,
    pub s2r: Vec<GroomedAggregate>,
    pub r2r: Vec<GroomedAggregate>,
    /// Flows whose endpoints share a rack; they never reach the optical fabric.
    pub intra_rack: Vec<u64>,
}

impl Grooming {
    pub fn r2r(
        &self,
        src_rack: usize,
        dst_rack: usize,
        class: FlowClass,
    ) -> Option<&GroomedAggregate> {
        self.r2r
            .iter()
            .find(|a| a.class == class && a.endpoints == Endpoints::Racks { src_rack, dst_rack })
    }

    pub fn level(&self, level: GroomLevel) -> &[GroomedAggregate] {
        match level {
            GroomLevel::S2S => &self.s2s,
            GroomLevel::S2R => &self.s2r,
            GroomLevel::R2R => &self.r2r,
        }
    }
}

fn aggregate(
    level: GroomLevel,
    groups: BTreeMap<(FlowClass, Endpoints), Vec<(u64, f64)>>,
) -> Result<Vec<GroomedAggregate>, GroomingError> {
    groups
        .into_iter()
        .map(|((class, endpoints), members)| {
            let rates: Vec<f64> = members.iter().map(|m| m.1).collect();
            Ok(GroomedAggregate {
                level,
                class,
                endpoints,
                rate: compose_rate(&rates)?,
                members: members.into_iter().map(|m| m.0).collect(),
            })
        })
        .collect()
}

/// Groom classified flows by destination server, destination rack and rack
/// pair. Member lists keep input order.
pub fn groom_three_step(
    flows: &[FlowDescriptor],
    racks: &RackMap,
) -> Result<Grooming, GroomingError> {
    type Groups = BTreeMap<(FlowClass, Endpoints), Vec<(u64, f64)>>;
    let mut s2s: Groups = BTreeMap::new();
    let mut s2r: Groups = BTreeMap::new();
    let mut r2r: Groups = BTreeMap::new();
    let mut intra = Vec::new();

    for f in flows {
        let class = f.class.ok_or(GroomingError::Unclassified(f.id))?;
        if f.size_bytes == 0 {
            return Err(GroomingError::EmptyFlow { id: f.id });
        }
        if !(f.rate.is_finite() && f.rate >= 0.0) {
            return Err(GroomingError::NegativeRate(f.rate));
        }
        let rack = |server| {
            racks
                .rack(server)
                .ok_or(GroomingError::UnknownServer { id: f.id, server })
        };
        let (i, j) = (rack(f.src_server)?, rack(f.dst_server)?);
        if i == j {
            intra.push(f.id);
            continue;
        }
        let m = (f.id, f.rate);
        s2s.entry((
            class,
            Endpoints::Servers {
                src: f.src_server,
                dst: f.dst_server,
            },
        ))
        .or_default()
        .push(m);
        s2r.entry((
            class,
            Endpoints::ServerRack {
                src: f.src_server,
                dst_rack: j,
            },
        ))
        .or_default()
        .push(m);
        r2r.entry((
            class,
            Endpoints::Racks {
                src_rack: i,
                dst_rack: j,
            },
        ))
        .or_default()
        .push(m);
    }
    Ok(Grooming {
        s2s: aggregate(GroomLevel::S2S, s2s)?,
        s2r: aggregate(GroomLevel::S2R, s2r)?,
        r2r: aggregate(GroomLevel::R2R, r2r)?,
        intra_rack: intra,
    })
}

/// Fill the composite rates of a [`DemandMatrix`] from R2R aggregates.
pub fn demand_matrix_from_aggregates(
    r2r: &[GroomedAggregate],
    racks: usize,
    mice: ClassProfile,
    elephant: ClassProfile,
) -> Result<DemandMatrix, GroomingError> {
    let mut d = DemandMatrix::new(racks, mice, elephant)?;
    for a in r2r {
        if let Endpoints::Racks { src_rack, dst_rack } = a.endpoints {
            let prev = d.rate(src_rack, dst_rack, a.class);
            d.set_rate(src_rack, dst_rack, a.class, prev + a.rate)?;
        }
    }
    Ok(d)
}
