//! Structured run traces: per-round and per-orbit records, JSON/CSV
//! serialization and a content digest for determinism checks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constellation::SatelliteId;
use crate::protocol::{EpochContribution, Mode, Phase, StopReason};
use crate::timing::{OrbitRelayAnalysis, OrbitStarAnalysis};

/// One orbit's activity within a round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitRoundTrace {
    pub orbit: u32,
    /// Wall-clock span of this orbit's work within the round, seconds.
    pub duration_s: f64,
    /// First-visible satellite chosen as model entry point.
    pub source: SatelliteId,
    /// Phase sequence the orbit went through, in order.
    pub phases: Vec<Phase>,
    /// Star-mode per-satellite timing breakdown.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub star: Option<OrbitStarAnalysis>,
    /// Relay-mode timing breakdown.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relay: Option<OrbitRelayAnalysis>,
    /// Provenance of each orbital aggregation (relay mode only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contributions: Vec<EpochContribution>,
}

/// One global round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    /// Simulation time at which the round started, seconds.
    pub start_s: f64,
    /// Time from round start until the global aggregate exists, seconds.
    pub duration_s: f64,
    /// Test accuracy of the global model after this round.
    pub accuracy: f64,
    /// L2 distance between the global model before and after the round.
    pub param_delta: f64,
    pub uplink_messages: u64,
    pub downlink_messages: u64,
    pub isl_messages: u64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// Total floating-point operations spent on training this round.
    pub total_flops: u64,
    /// Largest per-satellite FLOP count this round.
    pub max_sat_flops: u64,
    pub orbits: Vec<OrbitRoundTrace>,
}

/// Full run record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTrace {
    pub mode: Mode,
    pub seed: u64,
    pub rounds: Vec<RoundTrace>,
    pub stop_reason: StopReason,
    /// Simulation time at which the final round completed, seconds.
    pub total_time_s: f64,
    pub final_accuracy: f64,
}

impl SimTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// SHA-256 hex digest of the compact JSON form. Two runs are
    /// considered identical iff their digests match.
    pub fn digest(&self) -> String {
        let compact = serde_json::to_string(self).expect("trace serializes");
        let hash = Sha256::digest(compact.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Flat per-round CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "round,start_s,duration_s,accuracy,param_delta,\
             uplink_messages,downlink_messages,isl_messages,\
             uplink_bytes,downlink_bytes,total_flops,max_sat_flops\n",
        );
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}\n",
                r.round,
                r.start_s,
                r.duration_s,
                r.accuracy,
                r.param_delta,
                r.uplink_messages,
                r.downlink_messages,
                r.isl_messages,
                r.uplink_bytes,
                r.downlink_bytes,
                r.total_flops,
                r.max_sat_flops,
            ));
        }
        out
    }

    pub fn total_uplink_bytes(&self) -> u64 {
        self.rounds.iter().map(|r| r.uplink_bytes).sum()
    }

    pub fn total_downlink_bytes(&self) -> u64 {
        self.rounds.iter().map(|r| r.downlink_bytes).sum()
    }

    pub fn max_sat_flops(&self) -> u64 {
        self.rounds.iter().map(|r| r.max_sat_flops).max().unwrap_or(0)
    }
}
