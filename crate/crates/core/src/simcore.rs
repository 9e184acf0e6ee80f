//! Deterministic discrete-event engine: scenario assembly, validation,
//! the event queue and the round drivers for both protocols.
//!
//! The engine schedules phases from the component cost functions
//! (visibility windows, link budget, filter/train times) and sequences
//! them itself. It never calls the closed-form round drivers in
//! [`crate::timing`], so agreement between the two is a meaningful
//! cross-check rather than a tautology.

use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap};
use std::path::PathBuf;
use thiserror::Error;

use crate::constellation::{
    next_window, wait_time_s, Constellation, ConstellationConfig, GeometryError, GroundStation,
    SatelliteId, VisibilityWindow,
};
use crate::learning::{
    self, BlobSpec, Dataset, FilterPolicy, LearnError, ModelParams, TrainConfig, TrainMode,
};
use crate::link::{
    propagation_time_s, relay_sweep_time_s, transmission_time_s, IslParams, LinkParams,
};
use crate::protocol::{
    aggregate_deduped, broadcast_schedule, convergecast_schedule, AggregateAt, Mode, Phase,
    RelayTopology, SatMetadata, StopReason, TaggedModel, UploadPackage,
    STAR_UPLOAD_METADATA_BYTES,
};
use crate::timing::{filter_time_s, train_time_s, ComputeParams, SatWork, TimingError};
use crate::trace::{OrbitRoundTrace, RoundTrace, SimTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Where the training and test data come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Seeded Gaussian blobs; every satellite draws i.i.d. from the full
    /// class mixture.
    Synthetic {
        dim: usize,
        num_classes: u32,
        samples_per_sat: usize,
        separation: f64,
        noise: f64,
        test_per_class: usize,
    },
    /// Flat binary dataset files; training rows are dealt round-robin
    /// across satellites.
    File {
        train_path: PathBuf,
        test_path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn num_classes_hint(&self) -> Option<u32> {
        match self {
            DatasetSpec::Synthetic { num_classes, .. } => Some(*num_classes),
            DatasetSpec::File { .. } => None,
        }
    }
}

/// Run-termination criteria; at least one must be set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Termination {
    pub max_rounds: Option<u32>,
    pub target_accuracy: Option<f64>,
    /// Stop when the global parameter vector moves less than this
    /// (L2 norm) in one round.
    pub min_param_delta: Option<f64>,
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub constellation: ConstellationConfig,
    pub ground_station: GroundStation,
    pub link: LinkParams,
    pub isl: IslParams,
    pub compute: ComputeParams,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub mode: Mode,
    pub termination: Termination,
    /// Orbital retraining epochs V per round (relay mode).
    pub orbital_epochs: u32,
    /// Retained negatives per positive in the class filter.
    pub negative_ratio: f64,
    #[serde(default)]
    pub aggregate_at: AggregateAt,
    /// Also broadcast the final per-round orbital aggregate to every
    /// satellite (instead of just forwarding it to the uplink node).
    #[serde(default)]
    pub count_final_broadcast: bool,
    /// Visibility horizon; the run fails if a round needs a window
    /// beyond it.
    pub horizon_s: f64,
    pub window_step_s: f64,
    pub seed: u64,
}

impl Scenario {
    /// Structural validation; returns one message per offending field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let c = &self.constellation;
        if c.num_orbits == 0 {
            errs.push("constellation.num_orbits: must be at least 1".into());
        }
        if c.sats_per_orbit == 0 {
            errs.push("constellation.sats_per_orbit: must be at least 1".into());
        }
        if c.altitude_km <= 0.0 || c.altitude_km >= 2000.0 {
            errs.push(format!(
                "constellation.altitude_km: {} outside (0, 2000)",
                c.altitude_km
            ));
        }
        if !(0.0..=180.0).contains(&c.inclination_deg) {
            errs.push(format!(
                "constellation.inclination_deg: {} outside [0, 180]",
                c.inclination_deg
            ));
        }
        let gs = &self.ground_station;
        if !(-90.0..=90.0).contains(&gs.latitude_deg) {
            errs.push(format!(
                "ground_station.latitude_deg: {} outside [-90, 90]",
                gs.latitude_deg
            ));
        }
        if !(0.0..=90.0).contains(&gs.min_elevation_deg) {
            errs.push(format!(
                "ground_station.min_elevation_deg: {} outside [0, 90]",
                gs.min_elevation_deg
            ));
        }
        for (name, v) in [
            ("link.bandwidth_hz", self.link.bandwidth_hz),
            ("link.noise_temp_k", self.link.noise_temp_k),
            ("link.wavelength_m", self.link.wavelength_m),
            ("link.max_data_rate_bps", self.link.max_data_rate_bps),
            ("link.max_los_distance_km", self.link.max_los_distance_km),
            ("isl.bandwidth_hz", self.isl.bandwidth_hz),
            ("isl.spectral_efficiency_bps_hz", self.isl.spectral_efficiency_bps_hz),
            ("compute.clock_hz", self.compute.clock_hz),
            ("compute.cycles_per_batch", self.compute.cycles_per_batch),
            ("train.learning_rate", self.train.learning_rate),
            ("horizon_s", self.horizon_s),
            ("window_step_s", self.window_step_s),
        ] {
            if !(v > 0.0) {
                errs.push(format!("{name}: must be positive, got {v}"));
            }
        }
        if self.compute.cpu_cores == 0 {
            errs.push("compute.cpu_cores: must be at least 1".into());
        }
        if self.compute.batch_size == 0 {
            errs.push("compute.batch_size: must be at least 1".into());
        }
        if self.train.batch_size != self.compute.batch_size {
            errs.push(format!(
                "train.batch_size: {} must equal compute.batch_size {}",
                self.train.batch_size, self.compute.batch_size
            ));
        }
        if self.train.epochs != self.compute.epochs {
            errs.push(format!(
                "train.epochs: {} must equal compute.epochs {}",
                self.train.epochs, self.compute.epochs
            ));
        }
        if self.train.value_bits == 0 || self.train.value_bits % 8 != 0 {
            errs.push(format!(
                "train.value_bits: {} must be a positive multiple of 8",
                self.train.value_bits
            ));
        }
        if self.mode == Mode::Dnc && self.orbital_epochs == 0 {
            errs.push("orbital_epochs: must be at least 1 in dnc mode".into());
        }
        if self.negative_ratio < 0.0 {
            errs.push(format!(
                "negative_ratio: must be non-negative, got {}",
                self.negative_ratio
            ));
        }
        if let DatasetSpec::Synthetic { dim, num_classes, samples_per_sat, test_per_class, .. } =
            &self.dataset
        {
            if *dim == 0 {
                errs.push("dataset.dim: must be at least 1".into());
            }
            if *num_classes < 2 {
                errs.push("dataset.num_classes: must be at least 2".into());
            }
            if *samples_per_sat == 0 {
                errs.push("dataset.samples_per_sat: must be at least 1".into());
            }
            if *test_per_class == 0 {
                errs.push("dataset.test_per_class: must be at least 1".into());
            }
        }
        let t = &self.termination;
        if t.max_rounds.is_none() && t.target_accuracy.is_none() && t.min_param_delta.is_none() {
            errs.push("termination: at least one stop criterion must be set".into());
        }
        if let Some(a) = t.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                errs.push(format!("termination.target_accuracy: {a} outside [0, 1]"));
            }
        }
        errs
    }
}

/// Deterministic seed fan-out: one base seed, arbitrarily many derived
/// streams keyed by a tag and two indices (splitmix64 mixing).
pub fn derive_seed(base: u64, tag: &str, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = mix(base);
    for byte in tag.bytes() {
        h = mix(h ^ byte as u64);
    }
    h = mix(h ^ a);
    mix(h ^ b)
}

/// What the engine reacts to.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// The satellite's next visibility window opens.
    WindowOpen { orbit: u32, sat: SatelliteId },
    /// The downlinked global model finished arriving at `sat`.
    ModelArrived { orbit: u32, sat: SatelliteId },
    /// Local training finished (`epoch` is the orbital epoch, 0 in star
    /// mode).
    TrainDone { orbit: u32, sat: SatelliteId, epoch: u32 },
    /// Orbital relay + aggregation of `epoch` finished.
    AggregateDone { orbit: u32, epoch: u32 },
    /// The uplink transfer from `sat` finished arriving at the ground.
    UploadDone { orbit: u32, sat: SatelliteId },
    /// All orbits finished; the global aggregate exists.
    RoundDone,
}

/// A scheduled event.
#[derive(Debug, Clone)]
pub struct Event {
    pub time_s: f64,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug)]
struct HeapEntry {
    time_s: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time_s
            .total_cmp(&other.time_s)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Time-ordered event queue; ties resolve in scheduling order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<HeapEntry>>,
    now_s: f64,
    next_seq: u64,
}

impl EventQueue {
    pub fn new(start_s: f64) -> Self {
        Self {
            heap: BinaryHeap::new(),
            now_s: start_s,
            next_seq: 0,
        }
    }

    pub fn now_s(&self) -> f64 {
        self.now_s
    }

    /// Schedule `kind` at `time_s`. Panics if the time is in the past:
    /// causality violations are programming errors, not run conditions.
    pub fn schedule(&mut self, time_s: f64, kind: EventKind) {
        assert!(
            time_s >= self.now_s,
            "cannot schedule event at t={time_s} before current time t={}",
            self.now_s
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(HeapEntry { time_s, seq, kind }));
    }

    /// Pop the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| {
            self.now_s = e.time_s;
            Event {
                time_s: e.time_s,
                seq: e.seq,
                kind: e.kind,
            }
        })
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Exchange costs of one ground pass, evaluated at the window midpoint.
#[derive(Debug, Clone, Copy)]
struct Exchange {
    t_wait_s: f64,
    t_trans_s: f64,
    t_prop_s: f64,
    window: VisibilityWindow,
}

/// Mutable per-orbit state while a relay round is in flight.
struct OrbitRelayState {
    topology: RelayTopology,
    exchange: Exchange,
    t_filter_s: f64,
    t_train_s: f64,
    model: ModelParams,
    phases: Vec<Phase>,
    contributions: Vec<crate::protocol::EpochContribution>,
    isl_messages: u64,
    start_s: f64,
    end_s: f64,
}

/// Mutable per-orbit state while a star round is in flight.
struct OrbitStarState {
    /// Index into the orbit's satellite list of the satellite currently
    /// in its chain.
    current: usize,
    exchange: Exchange,
    models: Vec<(ModelParams, f64)>,
    start_s: f64,
    end_s: f64,
}

/// A fully assembled, validated simulation.
pub struct Simulation {
    scenario: Scenario,
    constellation: Constellation,
    windows: Vec<VisibilityWindow>,
    datasets: BTreeMap<SatelliteId, Dataset>,
    test_set: Dataset,
    /// Per satellite: (class, filtered binary dataset) for every class
    /// assigned to it (relay mode).
    filtered: BTreeMap<SatelliteId, Vec<(u32, Dataset)>>,
    tasks: BTreeMap<SatelliteId, Vec<u32>>,
    work: BTreeMap<SatelliteId, SatWork>,
    num_classes: u32,
    dim: usize,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let errs = scenario.validate();
        if !errs.is_empty() {
            return Err(SimError::Invalid(errs));
        }
        let constellation = Constellation::new(
            scenario.constellation.clone(),
            scenario.ground_station.clone(),
        );
        let windows = constellation.compute_windows(scenario.horizon_s, scenario.window_step_s);

        let (datasets, test_set) = Self::load_data(&scenario, &constellation)?;
        let num_classes = test_set.num_classes;
        let dim = test_set.dim();

        // Per-orbit one-vs-all task split (uniform compute fractions).
        let mut tasks = BTreeMap::new();
        for orbit in 0..scenario.constellation.num_orbits {
            let sats = constellation.orbit_sats(orbit);
            let fractions = vec![1.0; sats.len()];
            tasks.extend(learning::assign_tasks(&sats, num_classes, &fractions));
        }

        // Class filters are deterministic and the data is static, so the
        // filtered sets and the work map are fixed for the whole run.
        let mut filtered: BTreeMap<SatelliteId, Vec<(u32, Dataset)>> = BTreeMap::new();
        let mut work = BTreeMap::new();
        for (idx, (sat, data)) in datasets.iter().enumerate() {
            let mut per_class = Vec::new();
            for &class in &tasks[sat] {
                let policy = FilterPolicy {
                    target_class: class,
                    negative_ratio: scenario.negative_ratio,
                    rng_seed: derive_seed(scenario.seed, "filter", idx as u64, class as u64),
                };
                match learning::filter(data, &policy) {
                    Ok(d) => per_class.push((class, d)),
                    Err(LearnError::EmptyPositives(c)) => {
                        // The uniform-coverage assumption failed for this
                        // satellite; it sits the class out.
                        log::warn!("satellite {sat} has no samples of class {c}; skipping");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let filtered_count: u64 = per_class.iter().map(|(_, d)| d.len() as u64).sum();
            work.insert(
                *sat,
                SatWork {
                    num_images: data.len() as u64,
                    filtered_count: match scenario.mode {
                        // The star baseline trains on everything local.
                        Mode::Star => data.len() as u64,
                        Mode::Dnc => filtered_count,
                    },
                },
            );
            filtered.insert(*sat, per_class);
        }

        Ok(Self {
            scenario,
            constellation,
            windows,
            datasets,
            test_set,
            filtered,
            tasks,
            work,
            num_classes,
            dim,
        })
    }

    fn load_data(
        scenario: &Scenario,
        constellation: &Constellation,
    ) -> Result<(BTreeMap<SatelliteId, Dataset>, Dataset), SimError> {
        use rand::SeedableRng;
        let sats: Vec<SatelliteId> = constellation.sats().collect();
        match &scenario.dataset {
            DatasetSpec::Synthetic {
                dim,
                num_classes,
                samples_per_sat,
                separation,
                noise,
                test_per_class,
            } => {
                let spec = BlobSpec {
                    dim: *dim,
                    num_classes: *num_classes,
                    separation: *separation,
                    noise: *noise,
                };
                let mut datasets = BTreeMap::new();
                for (idx, sat) in sats.iter().enumerate() {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                        scenario.seed,
                        "data",
                        idx as u64,
                        0,
                    ));
                    datasets.insert(*sat, spec.sample_mixture(*samples_per_sat, &mut rng));
                }
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                    scenario.seed,
                    "test",
                    0,
                    0,
                ));
                let test = spec.sample_balanced(*test_per_class, &mut rng);
                Ok((datasets, test))
            }
            DatasetSpec::File {
                train_path,
                test_path,
            } => {
                let train = learning::read_ofl1(train_path)?;
                let test = learning::read_ofl1(test_path)?;
                if train.is_empty() {
                    return Err(SimError::Learn(LearnError::EmptyDataset));
                }
                let mut datasets: BTreeMap<SatelliteId, Dataset> = sats
                    .iter()
                    .map(|&s| {
                        (
                            s,
                            Dataset {
                                samples: Vec::new(),
                                num_classes: train.num_classes,
                            },
                        )
                    })
                    .collect();
                for (i, sample) in train.samples.iter().enumerate() {
                    let sat = sats[i % sats.len()];
                    datasets.get_mut(&sat).unwrap().samples.push(sample.clone());
                }
                Ok((datasets, test))
            }
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn windows(&self) -> &[VisibilityWindow] {
        &self.windows
    }

    pub fn work_map(&self) -> &BTreeMap<SatelliteId, SatWork> {
        &self.work
    }

    pub fn tasks(&self) -> &BTreeMap<SatelliteId, Vec<u32>> {
        &self.tasks
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test_set
    }

    pub fn dataset_of(&self, sat: SatelliteId) -> &Dataset {
        &self.datasets[&sat]
    }

    pub fn model_bits(&self) -> u64 {
        ModelParams::zeros(
            self.num_classes as usize,
            self.dim,
            self.scenario.train.value_bits,
        )
        .size_bits()
    }

    fn model_bytes(&self) -> u64 {
        self.model_bits() / 8
    }

    /// Ground-pass exchange costs for `sat`'s next window at time `t`.
    fn exchange(&self, sat: SatelliteId, t: f64) -> Result<Exchange, SimError> {
        let w = *next_window(&self.windows, sat, t).ok_or(GeometryError::HorizonExhausted {
            orbit: sat.orbit,
            slot: sat.slot,
            t,
        })?;
        let d_mid = self.constellation.slant_range_km(sat, w.midpoint_s());
        let rate = self
            .scenario
            .link
            .data_rate_bps(d_mid)
            .map_err(TimingError::from)?;
        let t_trans = transmission_time_s(self.model_bits(), rate).map_err(TimingError::from)?;
        Ok(Exchange {
            t_wait_s: wait_time_s(&w, t),
            t_trans_s: t_trans,
            t_prop_s: propagation_time_s(d_mid),
            window: w,
        })
    }

    /// First-visible satellite of `orbit` at time `t` (minimum wait,
    /// ties to the smaller slot).
    fn first_visible(&self, orbit: u32, t: f64) -> Result<SatelliteId, SimError> {
        let mut best: Option<(f64, SatelliteId)> = None;
        for sat in self.constellation.orbit_sats(orbit) {
            if let Some(w) = next_window(&self.windows, sat, t) {
                let wait = wait_time_s(w, t);
                let better = match best {
                    None => true,
                    Some((bw, bs)) => wait < bw || (wait == bw && sat.slot < bs.slot),
                };
                if better {
                    best = Some((wait, sat));
                }
            }
        }
        best.map(|(_, s)| s)
            .ok_or_else(|| GeometryError::HorizonExhausted { orbit, slot: 0, t }.into())
    }

    /// Revolutions the short-window penalty costs after `t_done`,
    /// floored at one.
    fn revolutions_after(&self, sat: SatelliteId, t_done: f64) -> Result<u32, SimError> {
        let w = next_window(&self.windows, sat, t_done).ok_or(GeometryError::HorizonExhausted {
            orbit: sat.orbit,
            slot: sat.slot,
            t: t_done,
        })?;
        let gap = wait_time_s(w, t_done);
        Ok(((gap / self.constellation.orbital_period_s()).floor() as u32).max(1))
    }

    /// Run to termination from t = 0.
    pub fn run(&self) -> Result<SimTrace, SimError> {
        let mut global = ModelParams::zeros(
            self.num_classes as usize,
            self.dim,
            self.scenario.train.value_bits,
        );
        let mut rounds = Vec::new();
        let mut t = 0.0f64;
        let mut round = 1u32;
        let stop_reason = loop {
            let prev = global.clone();
            let trace = match self.scenario.mode {
                Mode::Star => self.star_round(round, t, &mut global)?,
                Mode::Dnc => self.relay_round(round, t, &mut global)?,
            };
            t = trace.start_s + trace.duration_s;
            let accuracy = trace.accuracy;
            let delta = trace.param_delta;
            debug_assert_eq!(delta, global.l2_distance(&prev));
            rounds.push(trace);

            let term = &self.scenario.termination;
            if term.target_accuracy.is_some_and(|a| accuracy >= a) {
                break StopReason::TargetAccuracyReached;
            }
            if term.min_param_delta.is_some_and(|d| delta < d) {
                break StopReason::ParamDeltaBelowThreshold;
            }
            if term.max_rounds.is_some_and(|m| round >= m) {
                break StopReason::MaxRounds;
            }
            round += 1;
        };
        Ok(SimTrace {
            mode: self.scenario.mode,
            seed: self.scenario.seed,
            final_accuracy: rounds.last().map_or(0.0, |r| r.accuracy),
            total_time_s: t,
            rounds,
            stop_reason,
        })
    }

    /// One star-topology round starting at `t0`.
    fn star_round(
        &self,
        round: u32,
        t0: f64,
        global: &mut ModelParams,
    ) -> Result<RoundTrace, SimError> {
        let cfg = &self.scenario.constellation;
        let mut queue = EventQueue::new(t0);
        let mut states: BTreeMap<u32, OrbitStarState> = BTreeMap::new();
        let mut flops_by_sat: BTreeMap<SatelliteId, u64> = BTreeMap::new();
        let mut orbit_traces: BTreeMap<u32, OrbitRoundTrace> = BTreeMap::new();
        let mut pending_orbits = cfg.num_orbits;
        let mut round_end = t0;

        for orbit in 0..cfg.num_orbits {
            let sat = SatelliteId { orbit, slot: 0 };
            let ex = self.exchange(sat, t0)?;
            queue.schedule(
                t0 + ex.t_wait_s,
                EventKind::WindowOpen { orbit, sat },
            );
            states.insert(
                orbit,
                OrbitStarState {
                    current: 0,
                    exchange: ex,
                    models: Vec::new(),
                    start_s: t0,
                    end_s: t0,
                },
            );
        }

        while let Some(event) = queue.pop() {
            let t = event.time_s;
            match event.kind {
                EventKind::WindowOpen { orbit, sat } => {
                    let ex = states[&orbit].exchange;
                    queue.schedule(
                        t + ex.t_trans_s + ex.t_prop_s,
                        EventKind::ModelArrived { orbit, sat },
                    );
                }
                EventKind::ModelArrived { orbit, sat } => {
                    let w = self.work[&sat];
                    let t_filter = filter_time_s(w.num_images, &self.scenario.compute);
                    let t_train = train_time_s(w.filtered_count, &self.scenario.compute);
                    queue.schedule(
                        t + t_filter + t_train,
                        EventKind::TrainDone { orbit, sat, epoch: 0 },
                    );
                }
                EventKind::TrainDone { orbit, sat, .. } => {
                    // Actual SGD on the local multiclass objective.
                    let data = &self.datasets[&sat];
                    let mut flops = 0;
                    let trained = learning::sgd_epochs(
                        global,
                        data,
                        &self.scenario.train,
                        TrainMode::Multiclass,
                        derive_seed(self.scenario.seed, "star-train", round as u64, sat_index(cfg, sat)),
                        &mut flops,
                    )?;
                    *flops_by_sat.entry(sat).or_default() += flops;

                    let state = states.get_mut(&orbit).unwrap();
                    state.models.push((trained, data.len() as f64));

                    // Short-window penalty: if the required time reaches
                    // the window length, wait out full revolutions.
                    let ex = state.exchange;
                    let w = self.work[&sat];
                    let t_filter = filter_time_s(w.num_images, &self.scenario.compute);
                    let t_train = train_time_s(w.filtered_count, &self.scenario.compute);
                    let t_req = ex.t_wait_s
                        + 2.0 * (ex.t_trans_s + ex.t_prop_s)
                        + t_filter
                        + t_train;
                    let penalty = if t_req >= ex.window.duration_s() {
                        self.revolutions_after(sat, t)? as f64 * ex.t_wait_s
                    } else {
                        0.0
                    };
                    queue.schedule(
                        t + penalty + ex.t_trans_s + ex.t_prop_s,
                        EventKind::UploadDone { orbit, sat },
                    );
                }
                EventKind::UploadDone { orbit, .. } => {
                    let state = states.get_mut(&orbit).unwrap();
                    state.current += 1;
                    if state.current < cfg.sats_per_orbit as usize {
                        // Next satellite in the orbit starts its chain now.
                        let sat = SatelliteId {
                            orbit,
                            slot: state.current as u32,
                        };
                        let ex = self.exchange(sat, t)?;
                        state.exchange = ex;
                        queue.schedule(
                            t + ex.t_wait_s,
                            EventKind::WindowOpen { orbit, sat },
                        );
                    } else {
                        state.end_s = t;
                        round_end = round_end.max(t);
                        pending_orbits -= 1;
                        if pending_orbits == 0 {
                            queue.schedule(round_end, EventKind::RoundDone);
                        }
                    }
                }
                EventKind::RoundDone => {}
                other => unreachable!("star round does not emit {other:?}"),
            }
        }

        // Global FedAvg over all uploaded models.
        let mut inputs = Vec::new();
        for state in states.values() {
            for (m, w) in &state.models {
                inputs.push((m, *w));
            }
        }
        let prev = global.clone();
        *global = learning::aggregate(&inputs)?;

        for (orbit, state) in &states {
            orbit_traces.insert(
                *orbit,
                OrbitRoundTrace {
                    orbit: *orbit,
                    duration_s: state.end_s - state.start_s,
                    source: SatelliteId { orbit: *orbit, slot: 0 },
                    phases: vec![
                        Phase::Distribute,
                        Phase::LocalTrain,
                        Phase::Upload,
                        Phase::GlobalAggregate,
                    ],
                    star: None,
                    relay: None,
                    contributions: Vec::new(),
                },
            );
        }

        let sats_total = cfg.total_sats() as u64;
        let metrics = learning::evaluate(global, &self.test_set);
        Ok(RoundTrace {
            round,
            start_s: t0,
            duration_s: round_end - t0,
            accuracy: metrics.accuracy,
            param_delta: global.l2_distance(&prev),
            uplink_messages: sats_total,
            downlink_messages: sats_total,
            isl_messages: 0,
            uplink_bytes: sats_total * (self.model_bytes() + STAR_UPLOAD_METADATA_BYTES),
            downlink_bytes: sats_total * self.model_bytes(),
            total_flops: flops_by_sat.values().sum(),
            max_sat_flops: flops_by_sat.values().copied().max().unwrap_or(0),
            orbits: orbit_traces.into_values().collect(),
        })
    }

    /// One relay/retraining round starting at `t0`.
    fn relay_round(
        &self,
        round: u32,
        t0: f64,
        global: &mut ModelParams,
    ) -> Result<RoundTrace, SimError> {
        let cfg = &self.scenario.constellation;
        let v_epochs = self.scenario.orbital_epochs;
        let hop_bits = self.model_bits();
        let mut queue = EventQueue::new(t0);
        let mut states: BTreeMap<u32, OrbitRelayState> = BTreeMap::new();
        let mut flops_by_sat: BTreeMap<SatelliteId, u64> = BTreeMap::new();
        let mut pending_orbits = cfg.num_orbits;
        let mut round_end = t0;

        for orbit in 0..cfg.num_orbits {
            let source = self.first_visible(orbit, t0)?;
            let ex = self.exchange(source, t0)?;
            // Filtering and each training epoch barrier-synchronize on
            // the slowest satellite in the orbit.
            let mut t_filter = 0.0f64;
            let mut t_train = 0.0f64;
            for sat in self.constellation.orbit_sats(orbit) {
                let w = self.work[&sat];
                t_filter = t_filter.max(filter_time_s(w.num_images, &self.scenario.compute));
                t_train = t_train.max(train_time_s(w.filtered_count, &self.scenario.compute));
            }
            let topology = RelayTopology::new(orbit, self.constellation.orbit_sats(orbit), source);
            queue.schedule(t0 + ex.t_wait_s, EventKind::WindowOpen { orbit, sat: source });
            states.insert(
                orbit,
                OrbitRelayState {
                    topology,
                    exchange: ex,
                    t_filter_s: t_filter,
                    t_train_s: t_train,
                    model: global.clone(),
                    phases: vec![Phase::Distribute],
                    contributions: Vec::new(),
                    isl_messages: 0,
                    start_s: t0,
                    end_s: t0,
                },
            );
        }

        while let Some(event) = queue.pop() {
            let t = event.time_s;
            match event.kind {
                EventKind::WindowOpen { orbit, sat } => {
                    let ex = states[&orbit].exchange;
                    queue.schedule(
                        t + ex.t_trans_s + ex.t_prop_s,
                        EventKind::ModelArrived { orbit, sat },
                    );
                }
                EventKind::ModelArrived { orbit, sat } => {
                    let state = states.get_mut(&orbit).unwrap();
                    // Distribute: the source broadcasts the global model
                    // along the ring (timing is folded into the sweeps).
                    let (_, msgs) = broadcast_schedule(&state.topology, sat);
                    state.isl_messages += msgs;
                    queue.schedule(
                        t + state.t_filter_s + state.t_train_s,
                        EventKind::TrainDone { orbit, sat, epoch: 1 },
                    );
                }
                EventKind::TrainDone { orbit, sat: _, epoch } => {
                    let state = states.get_mut(&orbit).unwrap();
                    state.phases.push(Phase::LocalTrain);

                    // Every satellite trains its assigned one-vs-all rows
                    // from the current orbit model.
                    let mut tagged = Vec::new();
                    for ring_sat in state.topology.ring.clone() {
                        let mut model = state.model.clone();
                        let mut trained = false;
                        let mut weight = 0.0;
                        for (class, data) in &self.filtered[&ring_sat] {
                            let mut flops = 0;
                            model = learning::sgd_epochs(
                                &model,
                                data,
                                &self.scenario.train,
                                TrainMode::Binary { row: *class as usize },
                                derive_seed(
                                    self.scenario.seed,
                                    "relay-train",
                                    (round as u64) << 16 | epoch as u64,
                                    sat_index(cfg, ring_sat),
                                ),
                                &mut flops,
                            )?;
                            *flops_by_sat.entry(ring_sat).or_default() += flops;
                            trained = true;
                            weight += data.len() as f64;
                        }
                        if trained {
                            tagged.push(TaggedModel {
                                sat: ring_sat,
                                epoch,
                                model,
                                weight,
                            });
                        }
                    }

                    // Forward collect toward the epoch's aggregation
                    // point; equidistant satellites deliver twice and the
                    // copy is deduplicated there.
                    let point = self.scenario.aggregate_at.point(&state.topology, epoch);
                    let (msgs, _, _) = convergecast_schedule(&state.topology, point);
                    state.isl_messages += msgs;
                    state.phases.push(Phase::ForwardCollect);
                    let mut inputs = Vec::new();
                    for m in &tagged {
                        if state.topology.is_equidistant(m.sat, point) {
                            inputs.push(m.clone());
                        }
                        inputs.push(m.clone());
                    }
                    if !inputs.is_empty() {
                        let (agg, contribution) = aggregate_deduped(&inputs, point, epoch)?;
                        state.model = agg;
                        state.contributions.push(contribution);
                    }
                    state.phases.push(Phase::OrbitalAggregate);

                    let sweep =
                        relay_sweep_time_s(hop_bits, state.topology.hops(), &self.scenario.isl);
                    queue.schedule(t + sweep, EventKind::AggregateDone { orbit, epoch });
                }
                EventKind::AggregateDone { orbit, epoch } => {
                    let state = states.get_mut(&orbit).unwrap();
                    let point = self.scenario.aggregate_at.point(&state.topology, epoch);
                    let source = state.topology.source;
                    if epoch < v_epochs {
                        // Reverse relay: everyone needs the aggregate to
                        // train the next epoch.
                        let (_, msgs) = broadcast_schedule(&state.topology, point);
                        state.isl_messages += msgs;
                        state.phases.push(Phase::ReverseRelay);
                        queue.schedule(
                            t + state.t_train_s,
                            EventKind::TrainDone { orbit, sat: source, epoch: epoch + 1 },
                        );
                    } else {
                        if self.scenario.count_final_broadcast {
                            let (_, msgs) = broadcast_schedule(&state.topology, point);
                            state.isl_messages += msgs;
                            state.phases.push(Phase::ReverseRelay);
                        } else if point != source {
                            // The final aggregate only travels to the
                            // uplink node.
                            state.isl_messages +=
                                state.topology.ring_distance(point, source) as u64;
                        }
                        let ex = state.exchange;
                        state.phases.push(Phase::Upload);
                        queue.schedule(
                            t + ex.t_trans_s + ex.t_prop_s,
                            EventKind::UploadDone { orbit, sat: source },
                        );
                    }
                }
                EventKind::UploadDone { orbit, .. } => {
                    let state = states.get_mut(&orbit).unwrap();
                    state.end_s = t;
                    state.phases.push(Phase::GlobalAggregate);
                    round_end = round_end.max(t);
                    pending_orbits -= 1;
                    if pending_orbits == 0 {
                        queue.schedule(round_end, EventKind::RoundDone);
                    }
                }
                EventKind::RoundDone => {}
            }
        }

        // Global FedAvg over the per-orbit models, weighted by the data
        // that trained them.
        let prev = global.clone();
        let mut orbit_weights = Vec::new();
        for (orbit, state) in &states {
            let weight: u64 = self
                .constellation
                .orbit_sats(*orbit)
                .iter()
                .map(|s| self.work[s].filtered_count)
                .sum();
            orbit_weights.push((&state.model, weight.max(1) as f64));
        }
        *global = learning::aggregate(&orbit_weights)?;
        drop(orbit_weights);

        // Upload packages carry the orbital model plus per-satellite
        // metadata.
        let mut uplink_bytes = 0u64;
        let mut isl_messages = 0u64;
        for (orbit, state) in &states {
            let per_sat: Vec<SatMetadata> = self
                .constellation
                .orbit_sats(*orbit)
                .iter()
                .map(|&s| SatMetadata {
                    sat: s,
                    classes: self.tasks[&s].clone(),
                    filtered_count: self.work[&s].filtered_count,
                })
                .collect();
            let pkg = UploadPackage {
                orbit: *orbit,
                model: state.model.clone(),
                total_filtered: per_sat.iter().map(|m| m.filtered_count).sum(),
                per_sat,
            };
            uplink_bytes += self.model_bytes() + pkg.metadata_bytes();
            isl_messages += state.isl_messages;
        }

        let orbits: Vec<OrbitRoundTrace> = states
            .iter()
            .map(|(orbit, state)| OrbitRoundTrace {
                orbit: *orbit,
                duration_s: state.end_s - state.start_s,
                source: state.topology.source,
                phases: state.phases.clone(),
                star: None,
                relay: None,
                contributions: state.contributions.clone(),
            })
            .collect();

        let n_orbits = cfg.num_orbits as u64;
        let metrics = learning::evaluate(global, &self.test_set);
        Ok(RoundTrace {
            round,
            start_s: t0,
            duration_s: round_end - t0,
            accuracy: metrics.accuracy,
            param_delta: global.l2_distance(&prev),
            uplink_messages: n_orbits,
            downlink_messages: n_orbits,
            isl_messages,
            uplink_bytes,
            downlink_bytes: n_orbits * self.model_bytes(),
            total_flops: flops_by_sat.values().sum(),
            max_sat_flops: flops_by_sat.values().copied().max().unwrap_or(0),
            orbits,
        })
    }
}

fn sat_index(cfg: &ConstellationConfig, sat: SatelliteId) -> u64 {
    (sat.orbit * cfg.sats_per_orbit + sat.slot) as u64
}
