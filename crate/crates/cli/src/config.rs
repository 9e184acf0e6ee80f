//! Scenario file schema: a TOML document with units embedded in the key
//! names. Every key is optional; defaults are the reference evaluation
//! parameters. Unknown keys are rejected.

use orbitfl_core::constants::BOLTZMANN_J_PER_K;
use orbitfl_core::learning::TrainConfig;
use orbitfl_core::link::{IslParams, IslTimeMode, LinkParams};
use orbitfl_core::protocol::{AggregateAt, Mode};
use orbitfl_core::simcore::{DatasetSpec, Scenario, Termination};
use orbitfl_core::timing::ComputeParams;
use orbitfl_core::{ConstellationConfig, GroundStation};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub constellation: ConstellationSection,
    pub ground_station: GroundStationSection,
    pub link: LinkSection,
    pub isl: IslSection,
    pub compute: ComputeSection,
    pub training: TrainingSection,
    pub dataset: DatasetSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstellationSection {
    pub num_orbits: u32,
    pub sats_per_orbit: u32,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub raan_spacing_deg: Option<f64>,
    pub phase_offset_deg: f64,
    pub epoch_s: f64,
}

impl Default for ConstellationSection {
    fn default() -> Self {
        Self {
            num_orbits: 6,
            sats_per_orbit: 10,
            altitude_km: 530.0,
            inclination_deg: 85.0,
            raan_spacing_deg: None,
            phase_offset_deg: 6.0,
            epoch_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundStationSection {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub altitude_km: f64,
    pub min_elevation_deg: f64,
}

impl Default for GroundStationSection {
    fn default() -> Self {
        // Rolla, Missouri.
        Self {
            latitude_deg: 38.0,
            longitude_deg: -91.77,
            altitude_km: 0.0,
            min_elevation_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub tx_power_dbm: f64,
    /// One gain figure for both ends, as in the reference setup.
    pub antenna_gain_dbi: f64,
    pub noise_temp_k: f64,
    pub bandwidth_ghz: f64,
    pub wavelength_mm: f64,
    pub max_data_rate_mbps: f64,
    pub max_los_distance_km: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            tx_power_dbm: 60.0,
            antenna_gain_dbi: 6.98,
            noise_temp_k: 354.81,
            bandwidth_ghz: 0.5,
            wavelength_mm: 15.0,
            max_data_rate_mbps: 16.0,
            max_los_distance_km: 2600.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IslSection {
    pub bandwidth_mhz: f64,
    pub spectral_efficiency_bps_hz: f64,
    /// "linear" or "triangular" pipeline accounting for multi-hop
    /// relays.
    pub time_mode: IslTimeMode,
}

impl Default for IslSection {
    fn default() -> Self {
        Self {
            bandwidth_mhz: 100.0,
            spectral_efficiency_bps_hz: 1.0,
            time_mode: IslTimeMode::Linear,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeSection {
    pub cpu_cores: u32,
    pub clock_ghz: f64,
    pub cycles_per_batch: f64,
    pub overhead_cycles: f64,
    pub filter_cycles_per_image: f64,
}

impl Default for ComputeSection {
    fn default() -> Self {
        Self {
            cpu_cores: 4,
            clock_ghz: 1.43,
            cycles_per_batch: 2e7,
            overhead_cycles: 1e8,
            filter_cycles_per_image: 1e6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: u32,
    pub local_epochs: u32,
    pub orbital_epochs: u32,
    pub loss_threshold: f64,
    pub value_bits: u32,
    pub negative_ratio: f64,
    pub aggregate_at: AggregateAt,
    pub count_final_broadcast: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 4,
            local_epochs: 5,
            orbital_epochs: 5,
            loss_threshold: 0.1,
            value_bits: 32,
            negative_ratio: 1.0,
            aggregate_at: AggregateAt::Alternate,
            count_final_broadcast: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// "synthetic" or "file".
    pub kind: String,
    pub dim: usize,
    pub num_classes: u32,
    pub samples_per_sat: usize,
    pub separation: f64,
    pub noise: f64,
    pub test_per_class: usize,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: "synthetic".into(),
            dim: 10,
            num_classes: 10,
            samples_per_sat: 200,
            separation: 8.0,
            noise: 0.8,
            test_per_class: 50,
            train_path: None,
            test_path: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: Mode,
    pub max_rounds: Option<u32>,
    pub target_accuracy: Option<f64>,
    pub min_param_delta: Option<f64>,
    pub horizon_days: f64,
    pub window_step_s: f64,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: Mode::Dnc,
            max_rounds: Some(2),
            target_accuracy: None,
            min_param_delta: None,
            horizon_days: 40.0,
            window_step_s: 60.0,
            seed: 1,
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, String> {
        let dataset = match self.dataset.kind.as_str() {
            "synthetic" => DatasetSpec::Synthetic {
                dim: self.dataset.dim,
                num_classes: self.dataset.num_classes,
                samples_per_sat: self.dataset.samples_per_sat,
                separation: self.dataset.separation,
                noise: self.dataset.noise,
                test_per_class: self.dataset.test_per_class,
            },
            "file" => DatasetSpec::File {
                train_path: self
                    .dataset
                    .train_path
                    .ok_or("dataset.train_path: required when kind = \"file\"")?,
                test_path: self
                    .dataset
                    .test_path
                    .ok_or("dataset.test_path: required when kind = \"file\"")?,
            },
            other => return Err(format!("dataset.kind: unknown kind {other:?}")),
        };
        Ok(Scenario {
            constellation: ConstellationConfig {
                num_orbits: self.constellation.num_orbits,
                sats_per_orbit: self.constellation.sats_per_orbit,
                altitude_km: self.constellation.altitude_km,
                inclination_deg: self.constellation.inclination_deg,
                raan_spacing_deg: self.constellation.raan_spacing_deg,
                phase_offset_deg: self.constellation.phase_offset_deg,
                epoch_s: self.constellation.epoch_s,
            },
            ground_station: GroundStation {
                latitude_deg: self.ground_station.latitude_deg,
                longitude_deg: self.ground_station.longitude_deg,
                altitude_km: self.ground_station.altitude_km,
                min_elevation_deg: self.ground_station.min_elevation_deg,
            },
            link: LinkParams {
                tx_power_dbm: self.link.tx_power_dbm,
                antenna_gain_sat_dbi: self.link.antenna_gain_dbi,
                antenna_gain_ps_dbi: self.link.antenna_gain_dbi,
                noise_temp_k: self.link.noise_temp_k,
                bandwidth_hz: self.link.bandwidth_ghz * 1e9,
                boltzmann_j_per_k: BOLTZMANN_J_PER_K,
                wavelength_m: self.link.wavelength_mm / 1000.0,
                max_data_rate_bps: self.link.max_data_rate_mbps * 1e6,
                max_los_distance_km: self.link.max_los_distance_km,
            },
            isl: IslParams {
                bandwidth_hz: self.isl.bandwidth_mhz * 1e6,
                spectral_efficiency_bps_hz: self.isl.spectral_efficiency_bps_hz,
                time_mode: self.isl.time_mode,
            },
            compute: ComputeParams {
                cpu_cores: self.compute.cpu_cores,
                clock_hz: self.compute.clock_ghz * 1e9,
                cycles_per_batch: self.compute.cycles_per_batch,
                overhead_cycles: self.compute.overhead_cycles,
                filter_cycles_per_image: self.compute.filter_cycles_per_image,
                batch_size: self.training.batch_size,
                epochs: self.training.local_epochs,
            },
            train: TrainConfig {
                learning_rate: self.training.learning_rate,
                batch_size: self.training.batch_size,
                epochs: self.training.local_epochs,
                loss_threshold: self.training.loss_threshold,
                value_bits: self.training.value_bits,
            },
            dataset,
            mode: self.run.mode,
            termination: Termination {
                max_rounds: self.run.max_rounds,
                target_accuracy: self.run.target_accuracy,
                min_param_delta: self.run.min_param_delta,
            },
            orbital_epochs: self.training.orbital_epochs,
            negative_ratio: self.training.negative_ratio,
            aggregate_at: self.training.aggregate_at,
            count_final_broadcast: self.training.count_final_broadcast,
            horizon_s: self.run.horizon_days * 86_400.0,
            window_step_s: self.run.window_step_s,
            seed: self.run.seed,
        })
    }
}
