//! Physical spine-leaf fabric and per-class virtual topology views.
//!
//! Nodes `0..leaf_count` are leaf edge switches (one per rack) and nodes
//! `leaf_count..leaf_count + spine_count` are spine core switches. Every
//! leaf has a directed link to and from every spine. Each directed link
//! carries `W` wavelength slots and a residual intensity budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{ChannelGain, OpticalParams, OpticsError};
use crate::FlowClass;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

/// Dense lightpath id, assigned in provisioning order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LightpathId(pub u32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("spine/leaf ratio {ratio} with {leaves} leaves gives {spines} spines, which is not a positive integer")]
    FractionalSpines {
        leaves: usize,
        ratio: f64,
        spines: f64,
    },
    #[error("a spine-leaf fabric needs at least 2 leaves, got {0}")]
    TooFewLeaves(usize),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("no link {0:?}")]
    UnknownLink(LinkId),
    #[error("wavelength {wavelength} out of range on link {link:?} ({wavelengths} wavelengths)")]
    WavelengthOutOfRange {
        link: LinkId,
        wavelength: usize,
        wavelengths: usize,
    },
    #[error("wavelength {wavelength} on link {link:?} is already owned by lightpath {owner:?}")]
    Collision {
        link: LinkId,
        wavelength: usize,
        owner: LightpathId,
    },
    #[error("link {link:?} has residual intensity {residual} < requested {requested}")]
    InsufficientBudget {
        link: LinkId,
        residual: f64,
        requested: f64,
    },
    #[error("invalid intensity {0}")]
    InvalidIntensity(f64),
    #[error("wavelength {wavelength} on link {link:?} is not owned by lightpath {owner:?}")]
    NotOwner {
        link: LinkId,
        wavelength: usize,
        owner: LightpathId,
    },
    #[error("malformed topology document: {0}")]
    Malformed(String),
}

/// Least number of wavelengths per link that leaves room for one MF and one
/// EF lightpath between every ordered rack pair: `ceil(2(N-1) / (eta*N))`.
pub fn min_wavelengths(leaf_count: usize, spine_ratio: f64) -> usize {
    let spines = spine_ratio * leaf_count as f64;
    let needed = 2.0 * (leaf_count as f64 - 1.0) / spines;
    // Absorb representation error of ratios such as 1/3 before rounding up.
    (needed - 1e-9).ceil().max(0.0) as usize
}

/// Integral spine count for `leaf_count * spine_ratio`.
pub fn spine_count(leaf_count: usize, spine_ratio: f64) -> Result<usize, TopologyError> {
    let spines = spine_ratio * leaf_count as f64;
    let rounded = spines.round();
    if !spines.is_finite() || rounded < 1.0 || (spines - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(TopologyError::FractionalSpines {
            leaves: leaf_count,
            ratio: spine_ratio,
            spines,
        });
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub owner: LightpathId,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub gain: ChannelGain,
    slots: Vec<Option<Reservation>>,
}

impl Link {
    pub fn slots(&self) -> &[Option<Reservation>] {
        &self.slots
    }

    pub fn free_wavelengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(w, s)| s.is_none().then_some(w))
    }

    pub fn reserved_intensity(&self) -> f64 {
        self.slots.iter().flatten().map(|r| r.intensity).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalTopology {
    leaf_count: usize,
    spine_count: usize,
    spine_ratio: f64,
    params: OpticalParams,
    links: Vec<Link>,
    index: BTreeMap<(NodeId, NodeId), LinkId>,
}

impl PhysicalTopology {
    /// Full-mesh spine-leaf fabric with `leaf_count * spine_ratio` spines.
    pub fn spine_leaf(
        leaf_count: usize,
        spine_ratio: f64,
        params: OpticalParams,
        gain: ChannelGain,
    ) -> Result<Self, TopologyError> {
        if leaf_count < 2 {
            return Err(TopologyError::TooFewLeaves(leaf_count));
        }
        let spines = spine_count(leaf_count, spine_ratio)?;
        params.validate()?;
        let mut links = Vec::with_capacity(2 * leaf_count * spines);
        for leaf in 0..leaf_count {
            for s in 0..spines {
                let spine = leaf_count + s;
                for (from, to) in [(leaf, spine), (spine, leaf)] {
                    links.push(Link {
                        id: LinkId(links.len()),
                        from,
                        to,
                        gain,
                        slots: vec![None; params.wavelengths],
                    });
                }
            }
        }
        Ok(Self::assemble(
            leaf_count,
            spines,
            spine_ratio,
            params,
            links,
        ))
    }

    fn assemble(
        leaf_count: usize,
        spine_count: usize,
        spine_ratio: f64,
        params: OpticalParams,
        links: Vec<Link>,
    ) -> Self {
        let index = links.iter().map(|l| ((l.from, l.to), l.id)).collect();
        PhysicalTopology {
            leaf_count,
            spine_count,
            spine_ratio,
            params,
            links,
            index,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn spine_count(&self) -> usize {
        self.spine_count
    }

    pub fn spine_ratio(&self) -> f64 {
        self.spine_ratio
    }

    pub fn node_count(&self) -> usize {
        self.leaf_count + self.spine_count
    }

    pub fn params(&self) -> &OpticalParams {
        &self.params
    }

    pub fn wavelengths(&self) -> usize {
        self.params.wavelengths
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        node < self.leaf_count
    }

    pub fn spines(&self) -> impl Iterator<Item = NodeId> {
        self.leaf_count..self.leaf_count + self.spine_count
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Result<&Link, TopologyError> {
        self.links.get(id.0).ok_or(TopologyError::UnknownLink(id))
    }

    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.index.get(&(from, to)).copied()
    }

    /// Intensity still available on a link.
    pub fn residual(&self, id: LinkId) -> Result<f64, TopologyError> {
        let link = self.link(id)?;
        Ok(self.params.intensity_budget - link.reserved_intensity())
    }

    /// Give wavelength `wavelength` of `link` to `owner`, consuming `intensity`.
    /// On error the topology is unchanged.
    pub fn reserve(
        &mut self,
        link: LinkId,
        wavelength: usize,
        intensity: f64,
        owner: LightpathId,
    ) -> Result<(), TopologyError> {
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(TopologyError::InvalidIntensity(intensity));
        }
        let residual = self.residual(link)?;
        let wavelengths = self.params.wavelengths;
        let slot = self.links[link.0].slots.get_mut(wavelength).ok_or(
            TopologyError::WavelengthOutOfRange {
                link,
                wavelength,
                wavelengths,
            },
        )?;
        if let Some(existing) = slot {
            return Err(TopologyError::Collision {
                link,
                wavelength,
                owner: existing.owner,
            });
        }
        if intensity > residual {
            return Err(TopologyError::InsufficientBudget {
                link,
                residual,
                requested: intensity,
            });
        }
        *slot = Some(Reservation { owner, intensity });
        Ok(())
    }

    /// Undo a reservation made by `owner`.
    pub fn release(
        &mut self,
        link: LinkId,
        wavelength: usize,
        owner: LightpathId,
    ) -> Result<Reservation, TopologyError> {
        self.link(link)?;
        let wavelengths = self.params.wavelengths;
        let slot = self.links[link.0].slots.get_mut(wavelength).ok_or(
            TopologyError::WavelengthOutOfRange {
                link,
                wavelength,
                wavelengths,
            },
        )?;
        match slot {
            Some(r) if r.owner == owner => Ok(slot.take().expect("checked above")),
            _ => Err(TopologyError::NotOwner {
                link,
                wavelength,
                owner,
            }),
        }
    }

    /// Snapshot of free wavelengths and residual intensity, tagged with the
    /// class about to claim them. Only spines may be transit nodes.
    pub fn residual_view(&self, class: FlowClass) -> VirtualTopology {
        let links = self
            .links
            .iter()
            .map(|l| ViewLink {
                id: l.id,
                from: l.from,
                to: l.to,
                residual: self.params.intensity_budget - l.reserved_intensity(),
                free: l.free_wavelengths().collect(),
            })
            .collect();
        let transit = (0..self.node_count()).map(|n| !self.is_leaf(n)).collect();
        VirtualTopology::assemble(class, transit, links)
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            leaf_count: self.leaf_count,
            spine_count: self.spine_count,
            spine_ratio: self.spine_ratio,
            params: self.params,
            links: self
                .links
                .iter()
                .map(|l| LinkDocument {
                    from: l.from,
                    to: l.to,
                    gain: l.gain,
                    reservations: l
                        .slots
                        .iter()
                        .enumerate()
                        .filter_map(|(w, s)| {
                            s.map(|r| SlotDocument {
                                wavelength: w,
                                owner: r.owner,
                                intensity: r.intensity,
                            })
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: TopologyDocument) -> Result<Self, TopologyError> {
        doc.params.validate()?;
        let nodes = doc.leaf_count + doc.spine_count;
        let mut seen = BTreeMap::new();
        let mut links = Vec::with_capacity(doc.links.len());
        for (i, l) in doc.links.into_iter().enumerate() {
            if l.from >= nodes || l.to >= nodes || l.from == l.to {
                return Err(TopologyError::Malformed(format!(
                    "link {i} has endpoints ({}, {}) outside {nodes} nodes",
                    l.from, l.to
                )));
            }
            if seen.insert((l.from, l.to), i).is_some() {
                return Err(TopologyError::Malformed(format!(
                    "duplicate link ({}, {})",
                    l.from, l.to
                )));
            }
            let mut slots = vec![None; doc.params.wavelengths];
            for r in l.reservations {
                let slot = slots.get_mut(r.wavelength).ok_or_else(|| {
                    TopologyError::Malformed(format!(
                        "link {i} wavelength {} out of range",
                        r.wavelength
                    ))
                })?;
                if slot.is_some() {
                    return Err(TopologyError::Malformed(format!(
                        "link {i} wavelength {} reserved twice",
                        r.wavelength
                    )));
                }
                *slot = Some(Reservation {
                    owner: r.owner,
                    intensity: r.intensity,
                });
            }
            links.push(Link {
                id: LinkId(i),
                from: l.from,
                to: l.to,
                gain: l.gain,
                slots,
            });
        }
        let topo = Self::assemble(
            doc.leaf_count,
            doc.spine_count,
            doc.spine_ratio,
            doc.params,
            links,
        );
        for l in &topo.links {
            if l.reserved_intensity() > topo.params.intensity_budget {
                return Err(TopologyError::Malformed(format!(
                    "link {:?} exceeds the intensity budget",
                    l.id
                )));
            }
        }
        Ok(topo)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("topology serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TopologyError> {
        let doc: TopologyDocument =
            serde_json::from_str(s).map_err(|e| TopologyError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// JSON form of a [`PhysicalTopology`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub leaf_count: usize,
    pub spine_count: usize,
    pub spine_ratio: f64,
    pub params: OpticalParams,
    pub links: Vec<LinkDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkDocument {
    pub from: NodeId,
    pub to: NodeId,
    #[serde(default)]
    pub gain: ChannelGain,
    #[serde(default)]
    pub reservations: Vec<SlotDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotDocument {
    pub wavelength: usize,
    pub owner: LightpathId,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewLink {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub residual: f64,
    /// Free wavelengths in ascending order.
    pub free: Vec<usize>,
}

/// Residual-resource view `G_x` of one flow class over the physical fabric.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTopology {
    class: FlowClass,
    transit: Vec<bool>,
    links: Vec<ViewLink>,
    /// Outgoing link indices per node, ordered by head node id.
    out: Vec<Vec<usize>>,
}

impl VirtualTopology {
    fn assemble(class: FlowClass, transit: Vec<bool>, links: Vec<ViewLink>) -> Self {
        let mut out = vec![Vec::new(); transit.len()];
        for (i, l) in links.iter().enumerate() {
            out[l.from].push(i);
        }
        for adj in &mut out {
            adj.sort_by_key(|&i| links[i].to);
        }
        VirtualTopology {
            class,
            transit,
            links,
            out,
        }
    }

    /// Arbitrary directed graph where every node may forward traffic. Each
    /// edge is `(from, to, residual)` with all `wavelengths` free. Duplicate
    /// edges keep the first occurrence.
    pub fn from_edges(
        class: FlowClass,
        node_count: usize,
        edges: &[(NodeId, NodeId, f64)],
        wavelengths: usize,
    ) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        let links = edges
            .iter()
            .filter(|(f, t, _)| {
                f != t && *f < node_count && *t < node_count && seen.insert((*f, *t))
            })
            .enumerate()
            .map(|(i, &(from, to, residual))| ViewLink {
                id: LinkId(i),
                from,
                to,
                residual,
                free: (0..wavelengths).collect(),
            })
            .collect();
        Self::assemble(class, vec![true; node_count], links)
    }

    pub fn class(&self) -> FlowClass {
        self.class
    }

    pub fn node_count(&self) -> usize {
        self.transit.len()
    }

    pub fn is_transit(&self, node: NodeId) -> bool {
        self.transit.get(node).copied().unwrap_or(false)
    }

    pub fn links(&self) -> &[ViewLink] {
        &self.links
    }

    pub(crate) fn out_links(&self, node: NodeId) -> &[usize] {
        &self.out[node]
    }

    pub fn link_by_id(&self, id: LinkId) -> Option<&ViewLink> {
        self.links.iter().find(|l| l.id == id)
    }

    /// Links that could carry a new lightpath needing `intensity`.
    pub fn feasible_links(&self, intensity: f64) -> impl Iterator<Item = &ViewLink> {
        self.links
            .iter()
            .filter(move |l| l.residual >= intensity && l.residual > 0.0 && !l.free.is_empty())
    }

    /// Copy of the view keeping only links for which `keep` holds.
    pub fn retain(&self, mut keep: impl FnMut(&ViewLink) -> bool) -> VirtualTopology {
        let links = self.links.iter().filter(|l| keep(l)).cloned().collect();
        Self::assemble(self.class, self.transit.clone(), links)
    }
}
