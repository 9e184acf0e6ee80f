//! Relay topology and protocol-level bookkeeping for the orbital
//! retraining scheme, plus helpers shared with the star baseline.
//!
//! The timing of relays follows the hop-count model (H = ceil(I/2) under
//! concurrent bilateral relaying); the message-level schedules below are
//! the true breadth-first spread on the ring and are reported alongside.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::constellation::SatelliteId;
use crate::learning::{self, LearnError, ModelParams};
use crate::timing::relay_hops;

/// Intra-orbit ring with the designated source and sink nodes.
///
/// The ring is the orbit's slot order. The sink sits maximally distant
/// from the source along the ring (floor(I/2) edges away); the hop count
/// used for timing is the formula value ceil(I/2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelayTopology {
    pub orbit: u32,
    pub ring: Vec<SatelliteId>,
    pub source: SatelliteId,
    pub sink: SatelliteId,
}

impl RelayTopology {
    pub fn new(orbit: u32, ring: Vec<SatelliteId>, source: SatelliteId) -> Self {
        assert!(!ring.is_empty());
        let n = ring.len();
        let src_idx = ring.iter().position(|&s| s == source).expect("source in ring");
        let sink = ring[(src_idx + n / 2) % n];
        Self { orbit, ring, source, sink }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Timing hop count H = ceil(I/2).
    pub fn hops(&self) -> u32 {
        relay_hops(self.ring.len() as u32)
    }

    /// Shortest ring distance between two satellites, in edges.
    pub fn ring_distance(&self, a: SatelliteId, b: SatelliteId) -> u32 {
        let n = self.ring.len() as u32;
        let ia = self.ring.iter().position(|&s| s == a).expect("in ring") as u32;
        let ib = self.ring.iter().position(|&s| s == b).expect("in ring") as u32;
        let fwd = (ib + n - ia) % n;
        fwd.min(n - fwd)
    }

    /// True when both ring directions from `a` to `b` are shortest, i.e.
    /// `a`'s payload reaches `b` twice under bilateral forwarding. A
    /// two-node ring has a single edge, so nothing is equidistant there.
    pub fn is_equidistant(&self, a: SatelliteId, b: SatelliteId) -> bool {
        let n = self.ring.len() as u32;
        if n % 2 != 0 || n == 2 || a == b {
            return false;
        }
        self.ring_distance(a, b) == n / 2
    }
}

/// Bilateral breadth-first broadcast from `origin`: per-satellite arrival
/// times in hop units, and the number of point-to-point messages sent.
///
/// Every node other than the origin receives exactly once (the ring is
/// cut at the far node), so the message count is I - 1.
pub fn broadcast_schedule(
    topology: &RelayTopology,
    origin: SatelliteId,
) -> (Vec<(SatelliteId, u32)>, u64) {
    let schedule: Vec<(SatelliteId, u32)> = topology
        .ring
        .iter()
        .map(|&sat| (sat, topology.ring_distance(origin, sat)))
        .collect();
    let messages = (topology.ring.len() as u64).saturating_sub(1);
    (schedule, messages)
}

/// Convergecast of every satellite's model toward `target`.
///
/// Each model travels its shortest arc; when both arcs tie (even ring,
/// opposite node) the bilateral forwarding delivers two copies and the
/// duplicate is dropped at the target. Returns (messages sent, duplicate
/// copies removed, completion time in hop units).
pub fn convergecast_schedule(
    topology: &RelayTopology,
    target: SatelliteId,
) -> (u64, u32, u32) {
    let mut messages = 0u64;
    let mut duplicates = 0u32;
    let mut completion = 0u32;
    for &sat in &topology.ring {
        if sat == target {
            continue;
        }
        let dist = topology.ring_distance(sat, target);
        completion = completion.max(dist);
        if topology.is_equidistant(sat, target) {
            messages += 2 * dist as u64;
            duplicates += 1;
        } else {
            messages += dist as u64;
        }
    }
    (messages, duplicates, completion)
}

/// Which federated protocol a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Classic star topology: every satellite trains and uploads its own
    /// model directly to the parameter server.
    Star,
    /// Divide-and-conquer with orbital relay/retraining: per-orbit task
    /// split, intra-orbit relays, one upload per orbit.
    Dnc,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Star => write!(f, "star"),
            Mode::Dnc => write!(f, "dnc"),
        }
    }
}

/// Protocol phases in their legal order; `ReverseRelay` loops back to
/// `LocalTrain` until the configured number of orbital epochs is done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Distribute,
    LocalTrain,
    ForwardCollect,
    OrbitalAggregate,
    ReverseRelay,
    Upload,
    GlobalAggregate,
}

/// Where the per-epoch orbital aggregation happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateAt {
    /// Odd epochs aggregate at the sink, even epochs at the source.
    #[default]
    Alternate,
    SinkOnly,
}

impl AggregateAt {
    /// Aggregation point for orbital epoch `epoch` (1-based).
    pub fn point(&self, topology: &RelayTopology, epoch: u32) -> SatelliteId {
        match self {
            AggregateAt::SinkOnly => topology.sink,
            AggregateAt::Alternate => {
                if epoch % 2 == 1 {
                    topology.sink
                } else {
                    topology.source
                }
            }
        }
    }
}

/// A model tagged with its provenance, used for the dedup-then-aggregate
/// step and the conservation audit.
#[derive(Debug, Clone)]
pub struct TaggedModel {
    pub sat: SatelliteId,
    pub epoch: u32,
    pub model: ModelParams,
    pub weight: f64,
}

/// Audit record of one orbital aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochContribution {
    pub epoch: u32,
    pub aggregated_at: SatelliteId,
    /// (satellite, epoch) provenance of each model that entered the
    /// weighted average, after dedup.
    pub inputs: Vec<(SatelliteId, u32)>,
    pub duplicates_removed: u32,
}

/// Remove redundant copies (same satellite, same epoch), then take the
/// weighted average. Copies are removed, originals never are.
pub fn aggregate_deduped(
    models: &[TaggedModel],
    aggregated_at: SatelliteId,
    epoch: u32,
) -> Result<(ModelParams, EpochContribution), LearnError> {
    let mut seen: BTreeMap<(SatelliteId, u32), &TaggedModel> = BTreeMap::new();
    let mut duplicates = 0u32;
    for m in models {
        if seen.insert((m.sat, m.epoch), m).is_some() {
            duplicates += 1;
        }
    }
    let inputs: Vec<(&ModelParams, f64)> =
        seen.values().map(|m| (&m.model, m.weight)).collect();
    let model = learning::aggregate(&inputs)?;
    let contribution = EpochContribution {
        epoch,
        aggregated_at,
        inputs: seen.keys().copied().collect(),
        duplicates_removed: duplicates,
    };
    Ok((model, contribution))
}

/// Per-satellite slice of an orbit's metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SatMetadata {
    pub sat: SatelliteId,
    pub classes: Vec<u32>,
    pub filtered_count: u64,
}

/// What a first-visible satellite uploads for its orbit: the retrained
/// orbital model plus metadata on the data that trained it.
#[derive(Debug, Clone)]
pub struct UploadPackage {
    pub orbit: u32,
    pub model: ModelParams,
    pub total_filtered: u64,
    pub per_sat: Vec<SatMetadata>,
}

impl UploadPackage {
    /// Serialized metadata size: a u64 total plus, per satellite, a u32
    /// id, a u64 count and a u16 per class entry.
    pub fn metadata_bytes(&self) -> u64 {
        8 + self
            .per_sat
            .iter()
            .map(|m| 4 + 8 + 2 * m.classes.len() as u64)
            .sum::<u64>()
    }
}

/// Metadata attached to a star-topology upload: the local dataset size.
pub const STAR_UPLOAD_METADATA_BYTES: u64 = 8;

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetAccuracyReached,
    MaxRounds,
    ParamDeltaBelowThreshold,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: u32) -> RelayTopology {
        let sats: Vec<SatelliteId> = (0..n).map(|slot| SatelliteId { orbit: 0, slot }).collect();
        RelayTopology::new(0, sats.clone(), sats[0])
    }

    #[test]
    fn sink_is_opposite_source() {
        let t = ring(10);
        assert_eq!(t.sink.slot, 5);
        assert_eq!(t.hops(), 5);

        let t = ring(5);
        assert_eq!(t.sink.slot, 2);
        assert_eq!(t.hops(), 3); // formula H; true ring distance is 2
        assert_eq!(t.ring_distance(t.source, t.sink), 2);

        let t = ring(2);
        assert_ne!(t.source, t.sink);
        assert_eq!(t.hops(), 1);
    }

    #[test]
    fn hop_formula_covers_small_rings() {
        for i in 1..=12u32 {
            assert_eq!(relay_hops(i), i.div_ceil(2));
        }
    }

    #[test]
    fn broadcast_arrivals_five_ring() {
        let t = ring(5);
        let (schedule, messages) = broadcast_schedule(&t, t.source);
        let mut arrivals: Vec<u32> = schedule.iter().map(|(_, h)| *h).collect();
        arrivals.sort_unstable();
        assert_eq!(arrivals, vec![0, 1, 1, 2, 2]);
        assert_eq!(messages, 4);
    }

    #[test]
    fn broadcast_single_node_sends_nothing() {
        let t = ring(1);
        let (schedule, messages) = broadcast_schedule(&t, t.source);
        assert_eq!(schedule, vec![(t.source, 0)]);
        assert_eq!(messages, 0);
        assert_eq!(t.hops(), 1); // formula value for the degenerate ring
    }

    /// Brute-force ring simulation: flood from `origin`, one hop per
    /// tick, and record first-arrival times.
    fn brute_force_arrivals(n: u32, origin: u32) -> Vec<u32> {
        let mut arrived = vec![u32::MAX; n as usize];
        arrived[origin as usize] = 0;
        let mut tick = 0;
        while arrived.iter().any(|&a| a == u32::MAX) {
            tick += 1;
            let snapshot = arrived.clone();
            for i in 0..n as usize {
                if snapshot[i] != u32::MAX {
                    for j in [(i + 1) % n as usize, (i + n as usize - 1) % n as usize] {
                        if arrived[j] == u32::MAX {
                            arrived[j] = tick;
                        }
                    }
                }
            }
        }
        arrived
    }

    #[test]
    fn broadcast_matches_brute_force_rings() {
        for n in 1..=12u32 {
            let t = ring(n);
            let (schedule, _) = broadcast_schedule(&t, t.source);
            let brute = brute_force_arrivals(n, 0);
            for (sat, hop) in schedule {
                assert_eq!(hop, brute[sat.slot as usize], "ring {n}, sat {sat}");
            }
        }
    }

    #[test]
    fn convergecast_counts() {
        // I = 2: one hop, no duplicates.
        let t = ring(2);
        let (msgs, dups, done) = convergecast_schedule(&t, t.sink);
        assert_eq!((msgs, dups, done), (1, 0, 1));

        // I = 10: the source is equidistant from the sink, so its model
        // arrives twice; everyone else arrives once.
        let t = ring(10);
        let (msgs, dups, done) = convergecast_schedule(&t, t.sink);
        let expected: u64 = (1..=4u64).map(|d| 2 * d).sum::<u64>() + 2 * 5;
        assert_eq!(msgs, expected);
        assert_eq!(dups, 1);
        assert_eq!(done, 5);
    }

    #[test]
    fn aggregation_point_alternates() {
        let t = ring(10);
        assert_eq!(AggregateAt::Alternate.point(&t, 1), t.sink);
        assert_eq!(AggregateAt::Alternate.point(&t, 2), t.source);
        assert_eq!(AggregateAt::Alternate.point(&t, 3), t.sink);
        assert_eq!(AggregateAt::SinkOnly.point(&t, 2), t.sink);
    }

    #[test]
    fn dedup_removes_copies_not_originals() {
        let t = ring(4);
        let mut m = ModelParams::zeros(2, 1, 32);
        m.weights.mapv_inplace(|_| 1.0);
        let mut models: Vec<TaggedModel> = t
            .ring
            .iter()
            .map(|&sat| TaggedModel { sat, epoch: 1, model: m.clone(), weight: 1.0 })
            .collect();
        // Duplicate copy of the first satellite's model.
        models.push(TaggedModel { sat: t.ring[0], epoch: 1, model: m.clone(), weight: 1.0 });

        let (agg, contrib) = aggregate_deduped(&models, t.sink, 1).unwrap();
        assert_eq!(contrib.duplicates_removed, 1);
        assert_eq!(contrib.inputs.len(), 4);
        let unique: std::collections::BTreeSet<_> = contrib.inputs.iter().collect();
        assert_eq!(unique.len(), 4);
        assert_eq!(agg.weights, m.weights);
    }

    #[test]
    fn metadata_size_is_deterministic() {
        let pkg = UploadPackage {
            orbit: 0,
            model: ModelParams::zeros(2, 1, 32),
            total_filtered: 100,
            per_sat: vec![
                SatMetadata {
                    sat: SatelliteId { orbit: 0, slot: 0 },
                    classes: vec![0, 1],
                    filtered_count: 60,
                },
                SatMetadata {
                    sat: SatelliteId { orbit: 0, slot: 1 },
                    classes: vec![2],
                    filtered_count: 40,
                },
            ],
        };
        assert_eq!(pkg.metadata_bytes(), 8 + (4 + 8 + 4) + (4 + 8 + 2));
    }
}
