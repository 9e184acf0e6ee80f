//! Closed-form per-round timing model.
//!
//! These formulas serve two roles: the event engine schedules its phases
//! from the same component costs, and the analytic round drivers here are
//! compared against the event-driven completion times as an oracle.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::constellation::{
    next_window, wait_time_s, Constellation, GeometryError, SatelliteId, VisibilityWindow,
};
use crate::link::{
    propagation_time_s, relay_sweep_time_s, transmission_time_s, IslParams, LinkError, LinkParams,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimingError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// Per-satellite compute budget.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComputeParams {
    pub cpu_cores: u32,
    pub clock_hz: f64,
    /// Average cycles to train one mini-batch.
    pub cycles_per_batch: f64,
    /// Fixed cycles for setup overhead per training run.
    pub overhead_cycles: f64,
    /// Cycles to run the filtering policy on one image.
    pub filter_cycles_per_image: f64,
    pub batch_size: u32,
    /// Local training epochs J.
    pub epochs: u32,
}

/// Timing breakdown of one satellite's (or orbit's) part of a round.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct RoundTiming {
    pub t_wait_s: f64,
    pub t_trans_s: f64,
    pub t_prop_s: f64,
    pub t_filter_s: f64,
    pub t_train_s: f64,
    pub t_total_s: f64,
    /// Whole orbital revolutions spent waiting in the short-window
    /// penalty branch.
    pub revolutions: u32,
}

impl RoundTiming {
    /// Total per the satellite round-time formula:
    /// wait + 2*(trans + prop) + filter + train.
    pub fn from_components(
        t_wait_s: f64,
        t_trans_s: f64,
        t_prop_s: f64,
        t_filter_s: f64,
        t_train_s: f64,
        revolutions: u32,
    ) -> Self {
        Self {
            t_wait_s,
            t_trans_s,
            t_prop_s,
            t_filter_s,
            t_train_s,
            t_total_s: t_wait_s + 2.0 * (t_trans_s + t_prop_s) + t_filter_s + t_train_s,
            revolutions,
        }
    }
}

/// Time to run the filtering policy over `num_images` images.
pub fn filter_time_s(num_images: u64, cp: &ComputeParams) -> f64 {
    num_images as f64 * cp.filter_cycles_per_image / (cp.cpu_cores as f64 * cp.clock_hz)
}

/// Mini-batch count with the ceiling applied.
pub fn mini_batches(filtered_count: u64, batch_size: u32) -> u64 {
    filtered_count.div_ceil(batch_size as u64)
}

/// Local training time: (batches * J * c_process + c_overhead) / f.
pub fn train_time_s(filtered_count: u64, cp: &ComputeParams) -> f64 {
    let batches = mini_batches(filtered_count, cp.batch_size) as f64;
    (batches * cp.epochs as f64 * cp.cycles_per_batch + cp.overhead_cycles) / cp.clock_hz
}

/// Data sizes a satellite works with during a round.
#[derive(Debug, Clone, Copy, Default)]
pub struct SatWork {
    pub num_images: u64,
    pub filtered_count: u64,
}

/// One satellite's record in the star-topology round.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SatStarRecord {
    pub sat: SatelliteId,
    pub timing: RoundTiming,
    pub t_visible_s: f64,
}

impl SatStarRecord {
    /// Elapsed time this satellite contributes to its orbit's sum,
    /// including the short-window penalty branch.
    pub fn elapsed_s(&self) -> f64 {
        if self.timing.t_total_s >= self.t_visible_s {
            self.timing.t_total_s + self.timing.revolutions as f64 * self.timing.t_wait_s
        } else {
            self.timing.t_total_s
        }
    }
}

/// Orbit completion time under the star topology: the per-satellite sum
/// with the revolution penalty applied whenever a satellite's required
/// time reaches its window length.
pub fn orbit_star_time(records: &[SatStarRecord]) -> f64 {
    records.iter().map(|r| r.elapsed_s()).sum()
}

/// Star-topology round time: the slowest orbit.
pub fn star_round_time(orbit_times: &[f64]) -> f64 {
    assert!(!orbit_times.is_empty(), "at least one orbit required");
    orbit_times.iter().copied().fold(f64::MIN, f64::max)
}

/// Relay hop count for an orbit of `sats_per_orbit` satellites under
/// concurrent bilateral relaying.
pub fn relay_hops(sats_per_orbit: u32) -> u32 {
    sats_per_orbit.div_ceil(2)
}

/// Orbit relay-and-retrain time:
/// V*(relay sweep + train) + filter + wait + 2*(trans + prop).
#[allow(clippy::too_many_arguments)]
pub fn orbit_relay_time(
    orbital_epochs: u32,
    hops: u32,
    model_bits: u64,
    isl: &IslParams,
    t_wait_s: f64,
    t_trans_s: f64,
    t_prop_s: f64,
    t_filter_s: f64,
    t_train_s: f64,
) -> f64 {
    let sweep = relay_sweep_time_s(model_bits, hops, isl);
    orbital_epochs as f64 * (sweep + t_train_s)
        + t_filter_s
        + t_wait_s
        + 2.0 * (t_trans_s + t_prop_s)
}

/// Relay-mode round time: the slowest orbit.
pub fn relay_round_time(orbit_times: &[f64]) -> f64 {
    assert!(!orbit_times.is_empty(), "at least one orbit required");
    orbit_times.iter().copied().fold(f64::MIN, f64::max)
}

/// Analytic star-round result for one orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitStarAnalysis {
    pub orbit: u32,
    pub records: Vec<SatStarRecord>,
    pub total_s: f64,
}

/// Analytic relay-round result for one orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitRelayAnalysis {
    pub orbit: u32,
    pub source: SatelliteId,
    pub hops: u32,
    pub t_wait_s: f64,
    pub t_trans_s: f64,
    pub t_prop_s: f64,
    pub t_filter_s: f64,
    pub t_train_s: f64,
    pub relay_sweep_s: f64,
    pub total_s: f64,
}

/// Shared inputs of the analytic round drivers.
pub struct RoundContext<'a> {
    pub constellation: &'a Constellation,
    pub windows: &'a [VisibilityWindow],
    pub link: &'a LinkParams,
    pub isl: &'a IslParams,
    pub compute: &'a ComputeParams,
    pub model_bits: u64,
    pub work: &'a BTreeMap<SatelliteId, SatWork>,
    pub orbital_epochs: u32,
}

impl RoundContext<'_> {
    fn work_of(&self, sat: SatelliteId) -> SatWork {
        self.work.get(&sat).copied().unwrap_or_default()
    }

    /// Transmission and propagation times at the window's midpoint slant
    /// range: the single scalar distance used per exchange.
    fn exchange_times(&self, w: &VisibilityWindow) -> Result<(f64, f64), TimingError> {
        let d_mid = self.constellation.slant_range_km(w.sat, w.midpoint_s());
        let rate = self.link.data_rate_bps(d_mid)?;
        let t_trans = transmission_time_s(self.model_bits, rate)?;
        Ok((t_trans, propagation_time_s(d_mid)))
    }

    /// Revolutions before the next pass after `t_done`, floored at one.
    fn revolutions_after(&self, sat: SatelliteId, t_done: f64) -> Result<u32, TimingError> {
        let w = next_window(self.windows, sat, t_done).ok_or(GeometryError::HorizonExhausted {
            orbit: sat.orbit,
            slot: sat.slot,
            t: t_done,
        })?;
        let gap = wait_time_s(w, t_done);
        Ok(((gap / self.constellation.orbital_period_s()).floor() as u32).max(1))
    }

    /// One satellite's star-round record starting at time `t`.
    pub fn sat_round(&self, sat: SatelliteId, t: f64) -> Result<SatStarRecord, TimingError> {
        let w = next_window(self.windows, sat, t).ok_or(GeometryError::HorizonExhausted {
            orbit: sat.orbit,
            slot: sat.slot,
            t,
        })?;
        let t_wait = wait_time_s(w, t);
        let (t_trans, t_prop) = self.exchange_times(w)?;
        let work = self.work_of(sat);
        let t_filter = filter_time_s(work.num_images, self.compute);
        let t_train = train_time_s(work.filtered_count, self.compute);
        let t_visible = w.duration_s();
        let t_req = t_wait + 2.0 * (t_trans + t_prop) + t_filter + t_train;
        let revolutions = if t_req >= t_visible {
            let train_done = t + t_wait + t_trans + t_prop + t_filter + t_train;
            self.revolutions_after(sat, train_done)?
        } else {
            0
        };
        Ok(SatStarRecord {
            sat,
            timing: RoundTiming::from_components(
                t_wait,
                t_trans,
                t_prop,
                t_filter,
                t_train,
                revolutions,
            ),
            t_visible_s: t_visible,
        })
    }

    /// Closed-form star round starting at `t0`: satellites within an
    /// orbit proceed sequentially, orbits in parallel, and the round ends
    /// with the slowest orbit.
    pub fn star_round(&self, t0: f64) -> Result<(f64, Vec<OrbitStarAnalysis>), TimingError> {
        let cfg = self.constellation.config();
        let mut per_orbit = Vec::with_capacity(cfg.num_orbits as usize);
        for orbit in 0..cfg.num_orbits {
            let mut t = t0;
            let mut records = Vec::with_capacity(cfg.sats_per_orbit as usize);
            for sat in self.constellation.orbit_sats(orbit) {
                let rec = self.sat_round(sat, t)?;
                t += rec.elapsed_s();
                records.push(rec);
            }
            per_orbit.push(OrbitStarAnalysis {
                orbit,
                total_s: orbit_star_time(&records),
                records,
            });
        }
        let totals: Vec<f64> = per_orbit.iter().map(|o| o.total_s).collect();
        Ok((star_round_time(&totals), per_orbit))
    }

    /// Source satellite of an orbit at time `t`: the first to see the
    /// ground station, ties broken by the smaller slot index.
    pub fn select_source(
        &self,
        orbit: u32,
        t: f64,
    ) -> Result<(SatelliteId, VisibilityWindow), TimingError> {
        let mut best: Option<(f64, SatelliteId, VisibilityWindow)> = None;
        for sat in self.constellation.orbit_sats(orbit) {
            if let Some(w) = next_window(self.windows, sat, t) {
                let wait = wait_time_s(w, t);
                let better = match &best {
                    None => true,
                    Some((bw, bs, _)) => wait < *bw || (wait == *bw && sat.slot < bs.slot),
                };
                if better {
                    best = Some((wait, sat, *w));
                }
            }
        }
        best.map(|(_, sat, w)| (sat, w))
            .ok_or_else(|| {
                GeometryError::HorizonExhausted {
                    orbit,
                    slot: 0,
                    t,
                }
                .into()
            })
    }

    /// Closed-form relay round for one orbit starting at `t0`.
    pub fn relay_orbit(&self, orbit: u32, t0: f64) -> Result<OrbitRelayAnalysis, TimingError> {
        let cfg = self.constellation.config();
        let (source, window) = self.select_source(orbit, t0)?;
        let t_wait = wait_time_s(&window, t0);
        let (t_trans, t_prop) = self.exchange_times(&window)?;
        // Filtering and the per-epoch training run concurrently across the
        // orbit and barrier-synchronize, so the slowest satellite sets the
        // pace.
        let mut t_filter = 0.0f64;
        let mut t_train = 0.0f64;
        for sat in self.constellation.orbit_sats(orbit) {
            let work = self.work_of(sat);
            t_filter = t_filter.max(filter_time_s(work.num_images, self.compute));
            t_train = t_train.max(train_time_s(work.filtered_count, self.compute));
        }
        let hops = relay_hops(cfg.sats_per_orbit);
        let total = orbit_relay_time(
            self.orbital_epochs,
            hops,
            self.model_bits,
            self.isl,
            t_wait,
            t_trans,
            t_prop,
            t_filter,
            t_train,
        );
        Ok(OrbitRelayAnalysis {
            orbit,
            source,
            hops,
            t_wait_s: t_wait,
            t_trans_s: t_trans,
            t_prop_s: t_prop,
            t_filter_s: t_filter,
            t_train_s: t_train,
            relay_sweep_s: relay_sweep_time_s(self.model_bits, hops, self.isl),
            total_s: total,
        })
    }

    /// Closed-form relay round over all orbits starting at `t0`.
    pub fn relay_round(&self, t0: f64) -> Result<(f64, Vec<OrbitRelayAnalysis>), TimingError> {
        let cfg = self.constellation.config();
        let mut per_orbit = Vec::with_capacity(cfg.num_orbits as usize);
        for orbit in 0..cfg.num_orbits {
            per_orbit.push(self.relay_orbit(orbit, t0)?);
        }
        let totals: Vec<f64> = per_orbit.iter().map(|o| o.total_s).collect();
        Ok((relay_round_time(&totals), per_orbit))
    }
}
