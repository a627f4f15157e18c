//! Rack-to-rack lightpath provisioning.
//!
//! For every ordered rack pair and class, the demanded capacity is turned
//! into a per-link intensity, links that cannot carry it are pruned, the
//! k widest candidate routes are scored by `width * common free wavelengths`,
//! and the best route receives a wavelength drawn uniformly from its
//! continuity-feasible set. All MF lightpaths are provisioned before any EF
//! lightpath.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{intensity_for_capacity, wavelength_capacity, ChannelGain, OpticsError};
use crate::topology::{
    min_wavelengths, LightpathId, LinkId, NodeId, PhysicalTopology, TopologyDocument,
    TopologyError, VirtualTopology,
};
use crate::FlowClass;

pub mod ksp;

pub use ksp::{k_widest_paths, WidePath};

pub const DEFAULT_K_PATHS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProvisionError {
    #[error(
        "{wavelengths} wavelengths per link cannot host one MF and one EF lightpath per rack pair: \
         at least ceil(2(N-1)/(eta*N)) = {required} are needed"
    )]
    TooFewWavelengths { wavelengths: usize, required: usize },
    #[error(
        "no feasible lightpath for rack {src} -> rack {dst} ({class}): demand {demand_bps:.6e} b/s needs \
         intensity {required_intensity:.6} per link, widest residual on a usable route is \
         {widest_residual:.6}, {candidates} candidate route(s) had a common free wavelength"
    )]
    Infeasible {
        src: usize,
        dst: usize,
        class: FlowClass,
        demand_bps: f64,
        required_intensity: f64,
        widest_residual: f64,
        candidates: usize,
    },
    #[error("invalid demand for rack {src} -> rack {dst}: {reason}")]
    InvalidDemand {
        src: usize,
        dst: usize,
        reason: String,
    },
    #[error("completion deadline must be positive, got {0}")]
    ZeroDeadline(f64),
    #[error("rack {0} is not a leaf of this topology")]
    NotARack(usize),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Capacity a rack pair must sustain: `rate * flow_size / deadline`.
pub fn required_capacity(
    rate: f64,
    flow_size_bits: f64,
    deadline_s: f64,
) -> Result<f64, ProvisionError> {
    if !(deadline_s.is_finite() && deadline_s > 0.0) {
        return Err(ProvisionError::ZeroDeadline(deadline_s));
    }
    for (name, v) in [("arrival rate", rate), ("flow size", flow_size_bits)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(ProvisionError::InvalidDemand {
                src: 0,
                dst: 0,
                reason: format!("{name} must be finite and non-negative, got {v}"),
            });
        }
    }
    Ok(rate * flow_size_bits / deadline_s)
}

/// Flow size and completion deadline of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub flow_size_bits: f64,
    pub deadline_s: f64,
}

/// Composite arrival rates per ordered rack pair and class.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    racks: usize,
    mice: ClassProfile,
    elephant: ClassProfile,
    rates: BTreeMap<(usize, usize, FlowClass), f64>,
    overrides: BTreeMap<(usize, usize, FlowClass), f64>,
}

impl DemandMatrix {
    pub fn new(
        racks: usize,
        mice: ClassProfile,
        elephant: ClassProfile,
    ) -> Result<Self, ProvisionError> {
        for p in [mice, elephant] {
            if !(p.deadline_s.is_finite() && p.deadline_s > 0.0) {
                return Err(ProvisionError::ZeroDeadline(p.deadline_s));
            }
        }
        Ok(DemandMatrix {
            racks,
            mice,
            elephant,
            rates: BTreeMap::new(),
            overrides: BTreeMap::new(),
        })
    }

    pub fn racks(&self) -> usize {
        self.racks
    }

    pub fn profile(&self, class: FlowClass) -> ClassProfile {
        match class {
            FlowClass::Mice => self.mice,
            FlowClass::Elephant => self.elephant,
        }
    }

    fn check_pair(&self, src: usize, dst: usize) -> Result<(), ProvisionError> {
        if src >= self.racks || dst >= self.racks {
            return Err(ProvisionError::InvalidDemand {
                src,
                dst,
                reason: format!("only {} racks", self.racks),
            });
        }
        if src == dst {
            return Err(ProvisionError::InvalidDemand {
                src,
                dst,
                reason: "intra-rack traffic does not use the optical fabric".into(),
            });
        }
        Ok(())
    }

    pub fn set_rate(
        &mut self,
        src: usize,
        dst: usize,
        class: FlowClass,
        rate: f64,
    ) -> Result<(), ProvisionError> {
        self.check_pair(src, dst)?;
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(ProvisionError::InvalidDemand {
                src,
                dst,
                reason: format!("arrival rate {rate}"),
            });
        }
        self.rates.insert((src, dst, class), rate);
        Ok(())
    }

    /// Replace the rate-derived capacity of a pair with an explicit value.
    pub fn set_capacity_override(
        &mut self,
        src: usize,
        dst: usize,
        class: FlowClass,
        bps: f64,
    ) -> Result<(), ProvisionError> {
        self.check_pair(src, dst)?;
        if !(bps.is_finite() && bps >= 0.0) {
            return Err(ProvisionError::InvalidDemand {
                src,
                dst,
                reason: format!("capacity {bps}"),
            });
        }
        self.overrides.insert((src, dst, class), bps);
        Ok(())
    }

    pub fn rate(&self, src: usize, dst: usize, class: FlowClass) -> f64 {
        self.rates.get(&(src, dst, class)).copied().unwrap_or(0.0)
    }

    /// Capacity (bits/s) the pair's lightpath must provide.
    pub fn capacity(&self, src: usize, dst: usize, class: FlowClass) -> f64 {
        if let Some(&bps) = self.overrides.get(&(src, dst, class)) {
            return bps;
        }
        let p = self.profile(class);
        self.rate(src, dst, class) * p.flow_size_bits / p.deadline_s
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.racks).all(|i| {
            (0..self.racks).all(|j| {
                FlowClass::ALL
                    .iter()
                    .all(|&c| self.capacity(i, j, c) == self.capacity(j, i, c))
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lightpath {
    pub id: LightpathId,
    pub class: FlowClass,
    pub src_rack: usize,
    pub dst_rack: usize,
    /// leaf -> spine -> leaf
    pub path: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub wavelength: usize,
    /// Allocated intensity on each link of `links`.
    pub intensities: Vec<f64>,
    pub demand_bps: f64,
    /// Bottleneck capacity over the path's links.
    pub capacity_bps: f64,
}

/// Intensity reaching at least `demand` on a link with `gain`.
fn sized_intensity(gain: &ChannelGain, demand: f64, bandwidth: f64) -> Result<f64, ProvisionError> {
    let mut e = intensity_for_capacity(gain, demand, bandwidth)?;
    // The closed form can land one ulp short of the demand.
    while wavelength_capacity(gain, e, bandwidth)? < demand {
        e = e.next_up();
    }
    Ok(e)
}

/// Provision one lightpath for `src -> dst` and apply its reservations.
///
/// `view` is refreshed from `topology` on success. On error nothing is
/// reserved.
#[allow(clippy::too_many_arguments)]
pub fn provision_lightpath<R: Rng + ?Sized>(
    topology: &mut PhysicalTopology,
    view: &mut VirtualTopology,
    src: usize,
    dst: usize,
    class: FlowClass,
    demand_bps: f64,
    k: usize,
    id: LightpathId,
    rng: &mut R,
) -> Result<Lightpath, ProvisionError> {
    for r in [src, dst] {
        if !topology.is_leaf(r) {
            return Err(ProvisionError::NotARack(r));
        }
    }
    if src == dst || !(demand_bps.is_finite() && demand_bps > 0.0) {
        return Err(ProvisionError::InvalidDemand {
            src,
            dst,
            reason: format!("demand must be positive between distinct racks, got {demand_bps}"),
        });
    }
    let bandwidth = topology.params().bandwidth_hz;

    let mut required = BTreeMap::new();
    for l in topology.links() {
        required.insert(l.id, sized_intensity(&l.gain, demand_bps, bandwidth)?);
    }
    let pruned = view.retain(|l| !l.free.is_empty() && l.residual >= required[&l.id]);
    let candidates = k_widest_paths(&pruned, src, dst, k.max(1));

    // Score = width * |wavelengths free on every link|; ties keep the
    // earlier (lexicographically smaller among equal width) candidate.
    let mut best: Option<(f64, &WidePath, Vec<usize>)> = None;
    let mut usable = 0;
    for cand in &candidates {
        let common = common_free(&pruned, &cand.links);
        if common.is_empty() {
            continue;
        }
        usable += 1;
        let score = cand.width * common.len() as f64;
        let better = match &best {
            None => true,
            Some((s, p, _)) => score > *s || (score == *s && cand.nodes < p.nodes),
        };
        if better {
            best = Some((score, cand, common));
        }
    }

    let Some((_, path, common)) = best else {
        let widest_residual = view
            .links()
            .iter()
            .filter(|l| l.from == src && !l.free.is_empty())
            .map(|l| l.residual)
            .fold(0.0, f64::max);
        let required_intensity = required.values().copied().fold(0.0, f64::max);
        return Err(ProvisionError::Infeasible {
            src,
            dst,
            class,
            demand_bps,
            required_intensity,
            widest_residual,
            candidates: usable,
        });
    };
    let wavelength = common[rng.random_range(0..common.len())];

    let mut done = Vec::new();
    for &link in &path.links {
        if let Err(e) = topology.reserve(link, wavelength, required[&link], id) {
            for &undo in &done {
                topology
                    .release(undo, wavelength, id)
                    .expect("just reserved");
            }
            return Err(e.into());
        }
        done.push(link);
    }

    let mut capacity = f64::INFINITY;
    for &link in &path.links {
        let l = topology.link(link)?;
        capacity = capacity.min(wavelength_capacity(&l.gain, required[&link], bandwidth)?);
    }
    *view = topology.residual_view(class);
    Ok(Lightpath {
        id,
        class,
        src_rack: src,
        dst_rack: dst,
        path: path.nodes.clone(),
        links: path.links.clone(),
        wavelength,
        intensities: path.links.iter().map(|l| required[l]).collect(),
        demand_bps,
        capacity_bps: capacity,
    })
}

fn common_free(view: &VirtualTopology, links: &[LinkId]) -> Vec<usize> {
    let mut iter = links.iter().map(|id| {
        &view
            .link_by_id(*id)
            .expect("candidate links come from this view")
            .free
    });
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let mut common = first.clone();
    for free in iter {
        common.retain(|w| free.binary_search(w).is_ok());
    }
    common
}

/// Lightpath tables and final resource state after provisioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvisioningResult {
    pub lightpaths: Vec<Lightpath>,
    pub topology: PhysicalTopology,
    pub k_paths: usize,
    pub seed: u64,
    /// Two-pass attempts used (1 when the first draw sequence succeeded).
    pub attempts: u32,
    index: BTreeMap<(usize, usize, FlowClass), usize>,
}

impl ProvisioningResult {
    fn new(
        lightpaths: Vec<Lightpath>,
        topology: PhysicalTopology,
        k_paths: usize,
        seed: u64,
    ) -> Self {
        let index = lightpaths
            .iter()
            .enumerate()
            .map(|(i, lp)| ((lp.src_rack, lp.dst_rack, lp.class), i))
            .collect();
        ProvisioningResult {
            lightpaths,
            topology,
            k_paths,
            seed,
            attempts: 1,
            index,
        }
    }

    pub fn lightpath(&self, src: usize, dst: usize, class: FlowClass) -> Option<&Lightpath> {
        self.index
            .get(&(src, dst, class))
            .map(|&i| &self.lightpaths[i])
    }

    pub fn count(&self, class: FlowClass) -> usize {
        self.lightpaths.iter().filter(|l| l.class == class).count()
    }

    pub fn virtual_topology(&self, class: FlowClass) -> VirtualTopology {
        self.topology.residual_view(class)
    }

    /// Check collision, continuity, budget and capacity constraints against
    /// the stored topology. Returns one message per violation.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let topo = &self.topology;
        let mut owners: BTreeMap<(LinkId, usize), LightpathId> = BTreeMap::new();
        for lp in &self.lightpaths {
            if lp.path.len() != lp.links.len() + 1 || lp.links.len() != lp.intensities.len() {
                problems.push(format!("lightpath {:?}: malformed path", lp.id));
                continue;
            }
            let mut seen = std::collections::BTreeSet::new();
            if !lp.path.iter().all(|n| seen.insert(*n)) {
                problems.push(format!("lightpath {:?}: path has a loop", lp.id));
            }
            for (hop, &link) in lp.links.iter().enumerate() {
                let Ok(l) = topo.link(link) else {
                    problems.push(format!("lightpath {:?}: unknown link {link:?}", lp.id));
                    continue;
                };
                if (l.from, l.to) != (lp.path[hop], lp.path[hop + 1]) {
                    problems.push(format!("lightpath {:?}: link {link:?} off path", lp.id));
                }
                match l.slots().get(lp.wavelength).copied().flatten() {
                    Some(r) if r.owner == lp.id => {}
                    _ => problems.push(format!(
                        "lightpath {:?}: wavelength {} not held on link {link:?} (continuity)",
                        lp.id, lp.wavelength
                    )),
                }
                if let Some(other) = owners.insert((link, lp.wavelength), lp.id) {
                    problems.push(format!(
                        "collision on link {link:?} wavelength {}: {other:?} and {:?}",
                        lp.wavelength, lp.id
                    ));
                }
            }
            if lp.capacity_bps < lp.demand_bps {
                problems.push(format!(
                    "lightpath {:?}: capacity {} below demand {}",
                    lp.id, lp.capacity_bps, lp.demand_bps
                ));
            }
            let bandwidth = topo.params().bandwidth_hz;
            for (&link, &e) in lp.links.iter().zip(&lp.intensities) {
                if let Ok(l) = topo.link(link) {
                    match wavelength_capacity(&l.gain, e, bandwidth) {
                        Ok(c) if c >= lp.demand_bps => {}
                        _ => problems.push(format!(
                            "lightpath {:?}: link {link:?} intensity {e} under-provisioned",
                            lp.id
                        )),
                    }
                }
            }
        }
        for l in topo.links() {
            if l.reserved_intensity() > topo.params().intensity_budget {
                problems.push(format!("link {:?} exceeds its intensity budget", l.id));
            }
        }
        problems
    }

    pub fn to_document(&self) -> ProvisioningDocument {
        ProvisioningDocument {
            k_paths: self.k_paths,
            seed: self.seed,
            attempts: self.attempts,
            mf_lightpaths: self.count(FlowClass::Mice),
            ef_lightpaths: self.count(FlowClass::Elephant),
            lightpaths: self.lightpaths.clone(),
            topology: self.topology.to_document(),
        }
    }

    pub fn from_document(doc: ProvisioningDocument) -> Result<Self, ProvisionError> {
        let topology = PhysicalTopology::from_document(doc.topology)?;
        let mut r = Self::new(doc.lightpaths, topology, doc.k_paths, doc.seed);
        r.attempts = doc.attempts;
        Ok(r)
    }

    /// One line per lightpath: pair, class, route, wavelength, intensity, capacity.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} MF + {} EF lightpaths (k = {}, seed = {}, attempts = {})\n",
            self.count(FlowClass::Mice),
            self.count(FlowClass::Elephant),
            self.k_paths,
            self.seed,
            self.attempts
        ));
        for lp in &self.lightpaths {
            let route: Vec<String> = lp.path.iter().map(|n| n.to_string()).collect();
            out.push_str(&format!(
                "rack {:>3} -> {:<3} {}  path {:<14} w{:<2}  E {:.6}  C {:.4} Gb/s (demand {:.4})\n",
                lp.src_rack,
                lp.dst_rack,
                lp.class,
                route.join("-"),
                lp.wavelength,
                lp.intensities.iter().copied().fold(0.0, f64::max),
                lp.capacity_bps / 1e9,
                lp.demand_bps / 1e9,
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProvisioningDocument {
    pub k_paths: usize,
    pub seed: u64,
    pub attempts: u32,
    pub mf_lightpaths: usize,
    pub ef_lightpaths: usize,
    pub lightpaths: Vec<Lightpath>,
    pub topology: TopologyDocument,
}

/// Knobs of [`provision_all_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionOptions {
    pub k_paths: usize,
    pub seed: u64,
    /// Full two-pass attempts before giving up. Random wavelength draws can
    /// strand a late pair even though W meets the lower bound; each retry
    /// starts from the original topology and keeps drawing from the same
    /// seeded stream. `1` disables retries.
    pub max_attempts: u32,
}

pub const DEFAULT_MAX_ATTEMPTS: u32 = 512;

impl Default for ProvisionOptions {
    fn default() -> Self {
        ProvisionOptions {
            k_paths: DEFAULT_K_PATHS,
            seed: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

/// [`provision_all_with`] using the default attempt budget.
pub fn provision_all(
    topology: &PhysicalTopology,
    demands: &DemandMatrix,
    k: usize,
    seed: u64,
) -> Result<ProvisioningResult, ProvisionError> {
    provision_all_with(
        topology,
        demands,
        ProvisionOptions {
            k_paths: k,
            seed,
            ..ProvisionOptions::default()
        },
    )
}

/// Provision every MF lightpath, then every EF lightpath, over row-major
/// ordered rack pairs. Pairs with zero demand get no lightpath.
pub fn provision_all_with(
    topology: &PhysicalTopology,
    demands: &DemandMatrix,
    opts: ProvisionOptions,
) -> Result<ProvisioningResult, ProvisionError> {
    let required = min_wavelengths(topology.leaf_count(), topology.spine_ratio());
    if topology.wavelengths() < required {
        return Err(ProvisionError::TooFewWavelengths {
            wavelengths: topology.wavelengths(),
            required,
        });
    }
    let racks = topology.leaf_count();
    if demands.racks() != racks {
        return Err(ProvisionError::InvalidDemand {
            src: 0,
            dst: 0,
            reason: format!(
                "demand matrix has {} racks, topology {racks}",
                demands.racks()
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match two_pass(topology, demands, opts.k_paths, &mut rng) {
            Ok((lightpaths, topo)) => {
                let mut r = ProvisioningResult::new(lightpaths, topo, opts.k_paths, opts.seed);
                r.attempts = attempt;
                return Ok(r);
            }
            Err(ProvisionError::Infeasible { .. }) if attempt < opts.max_attempts.max(1) => {}
            Err(e) => return Err(e),
        }
    }
}

fn two_pass(
    topology: &PhysicalTopology,
    demands: &DemandMatrix,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Lightpath>, PhysicalTopology), ProvisionError> {
    let racks = topology.leaf_count();
    let mut topo = topology.clone();
    let mut lightpaths = Vec::new();
    for class in FlowClass::ALL {
        let mut view = topo.residual_view(class);
        for src in 0..racks {
            for dst in 0..racks {
                if src == dst {
                    continue;
                }
                let demand = demands.capacity(src, dst, class);
                if demand <= 0.0 {
                    continue;
                }
                let id = LightpathId(lightpaths.len() as u32);
                let lp =
                    provision_lightpath(&mut topo, &mut view, src, dst, class, demand, k, id, rng)?;
                lightpaths.push(lp);
            }
        }
    }
    Ok((lightpaths, topo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::OpticalParams;

    fn fabric(n: usize, eta: f64, w: usize, budget: f64) -> PhysicalTopology {
        PhysicalTopology::spine_leaf(
            n,
            eta,
            OpticalParams::new(1e10, budget, w).unwrap(),
            ChannelGain::unit(),
        )
        .unwrap()
    }

    fn profiles() -> (ClassProfile, ClassProfile) {
        (
            ClassProfile {
                flow_size_bits: 8e5,
                deadline_s: 1e-3,
            },
            ClassProfile {
                flow_size_bits: 1.024e9,
                deadline_s: 1.0,
            },
        )
    }

    #[test]
    fn required_capacity_examples() {
        assert_eq!(required_capacity(10.0, 1e6, 1.0).unwrap(), 1e7);
        assert_eq!(required_capacity(0.0, 1e6, 1.0).unwrap(), 0.0);
        let c = required_capacity(1000.0, 8e5, 1e-3).unwrap();
        assert!((c - 8e11).abs() / 8e11 < 1e-12);
        assert!(matches!(
            required_capacity(1.0, 1.0, 0.0),
            Err(ProvisionError::ZeroDeadline(_))
        ));
        assert!(required_capacity(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn forced_single_path() {
        let mut t = fabric(2, 0.5, 1, 4.0);
        let mut view = t.residual_view(FlowClass::Mice);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lp = provision_lightpath(
            &mut t,
            &mut view,
            0,
            1,
            FlowClass::Mice,
            1e9,
            4,
            LightpathId(0),
            &mut rng,
        )
        .unwrap();
        assert_eq!(lp.path, vec![0, 2, 1]);
        assert_eq!(lp.wavelength, 0);
        assert!(lp.capacity_bps >= 1e9);
        assert_eq!(view, t.residual_view(FlowClass::Mice));
    }

    #[test]
    fn score_prefers_more_common_wavelengths() {
        // N=2, eta=1: spines 2 (A) and 3 (B). Both routes have residual 5
        // but B has only one wavelength left.
        let mut t = fabric(2, 1.0, 2, 5.0);
        for (from, to) in [(0, 3), (3, 1)] {
            let l = t.link_between(from, to).unwrap();
            t.reserve(l, 0, 0.0, LightpathId(99)).unwrap();
        }
        let mut view = t.residual_view(FlowClass::Mice);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lp = provision_lightpath(
            &mut t,
            &mut view,
            0,
            1,
            FlowClass::Mice,
            1e8,
            4,
            LightpathId(0),
            &mut rng,
        )
        .unwrap();
        assert_eq!(lp.path, vec![0, 2, 1]);
    }

    #[test]
    fn infeasible_demand_leaves_topology_untouched() {
        let mut t = fabric(4, 0.5, 4, 1.0);
        let before = t.clone();
        let mut view = t.residual_view(FlowClass::Elephant);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = provision_lightpath(
            &mut t,
            &mut view,
            0,
            3,
            FlowClass::Elephant,
            1e12,
            4,
            LightpathId(0),
            &mut rng,
        )
        .unwrap_err();
        match err {
            ProvisionError::Infeasible {
                src, dst, class, ..
            } => {
                assert_eq!((src, dst, class), (0, 3, FlowClass::Elephant));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t, before);
    }

    #[test]
    fn rejects_too_few_wavelengths() {
        let t = fabric(8, 0.5, 3, 8.0);
        let (m, e) = profiles();
        let d = DemandMatrix::new(8, m, e).unwrap();
        let err = provision_all(&t, &d, 4, 0).unwrap_err();
        assert_eq!(
            err,
            ProvisionError::TooFewWavelengths {
                wavelengths: 3,
                required: 4
            }
        );
        assert!(err.to_string().contains("= 4"));
    }

    #[test]
    fn zero_demand_provisions_nothing() {
        let t = fabric(8, 0.5, 4, 8.0);
        let (m, e) = profiles();
        let d = DemandMatrix::new(8, m, e).unwrap();
        let r = provision_all(&t, &d, 4, 0).unwrap();
        assert!(r.lightpaths.is_empty());
        assert_eq!(r.topology, t);
    }

    fn uniform(n: usize, rate_mf: f64, rate_ef: f64) -> DemandMatrix {
        let (m, e) = profiles();
        let mut d = DemandMatrix::new(n, m, e).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d.set_rate(i, j, FlowClass::Mice, rate_mf).unwrap();
                    d.set_rate(i, j, FlowClass::Elephant, rate_ef).unwrap();
                }
            }
        }
        d
    }

    #[test]
    fn full_mesh_provisioning_satisfies_constraints() {
        let t = fabric(8, 0.5, 4, 8.0);
        let d = uniform(8, 1.0, 1.0);
        assert!(d.is_symmetric());
        for seed in 0..20 {
            let r = provision_all(&t, &d, 4, seed).unwrap();
            assert_eq!(r.count(FlowClass::Mice), 56);
            assert_eq!(r.count(FlowClass::Elephant), 56);
            assert!(r.audit().is_empty(), "{:?}", r.audit());
            // MF pass happens first: ids 0..56 are MF.
            assert!(r.lightpaths[..56]
                .iter()
                .all(|l| l.class == FlowClass::Mice));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let t = fabric(8, 0.5, 4, 8.0);
        let d = uniform(8, 1.0, 0.5);
        let a = provision_all(&t, &d, 4, 42).unwrap();
        let b = provision_all(&t, &d, 4, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a.to_document()).unwrap(),
            serde_json::to_string(&b.to_document()).unwrap()
        );
    }

    #[test]
    fn ef_pass_keeps_mf_reservations() {
        let t = fabric(8, 0.5, 4, 8.0);
        let mut only_mf = uniform(8, 1.0, 1.0);
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    only_mf.set_rate(i, j, FlowClass::Elephant, 0.0).unwrap();
                }
            }
        }
        let single = |seed| ProvisionOptions {
            k_paths: 4,
            seed,
            max_attempts: 1,
        };
        let mut compared = 0;
        for seed in 0..200 {
            let Ok(full) = provision_all_with(&t, &uniform(8, 1.0, 1.0), single(seed)) else {
                continue;
            };
            let mf = provision_all_with(&t, &only_mf, single(seed)).unwrap();
            // Same draws for the MF pass; the EF pass only adds reservations.
            assert_eq!(mf.lightpaths[..], full.lightpaths[..56]);
            for lp in &mf.lightpaths {
                for &l in &lp.links {
                    let slot = full.topology.link(l).unwrap().slots()[lp.wavelength];
                    assert_eq!(slot.map(|r| r.owner), Some(lp.id));
                }
            }
            compared += 1;
        }
        assert!(compared > 0);
    }

    #[test]
    fn single_attempt_reports_failing_pair() {
        let t = fabric(8, 0.5, 4, 8.0);
        let d = uniform(8, 1.0, 1.0);
        let failing = (0..50).find_map(|seed| {
            provision_all_with(
                &t,
                &d,
                ProvisionOptions {
                    k_paths: 4,
                    seed,
                    max_attempts: 1,
                },
            )
            .err()
        });
        match failing {
            Some(ProvisionError::Infeasible { src, dst, .. }) => assert_ne!(src, dst),
            other => panic!("expected a stranded pair, got {other:?}"),
        }
    }

    #[test]
    fn document_round_trip() {
        let t = fabric(4, 0.5, 4, 8.0);
        let r = provision_all(&t, &uniform(4, 2.0, 1.0), 3, 9).unwrap();
        let json = serde_json::to_string(&r.to_document()).unwrap();
        let back = ProvisioningResult::from_document(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.summary().contains("MF"));
    }

    #[test]
    fn override_replaces_rate_capacity() {
        let (m, e) = profiles();
        let mut d = DemandMatrix::new(3, m, e).unwrap();
        d.set_rate(0, 1, FlowClass::Mice, 2.0).unwrap();
        assert_eq!(d.capacity(0, 1, FlowClass::Mice), 2.0 * 8e5 / 1e-3);
        d.set_capacity_override(0, 1, FlowClass::Mice, 5e9).unwrap();
        assert_eq!(d.capacity(0, 1, FlowClass::Mice), 5e9);
        assert!(d.set_rate(1, 1, FlowClass::Mice, 1.0).is_err());
        assert!(d.set_rate(0, 5, FlowClass::Mice, 1.0).is_err());
    }
}
