//! Shared scenario builders for the criterion benchmarks in `benches/`.

use orbitfl_core::constants::BOLTZMANN_J_PER_K;
use orbitfl_core::learning::TrainConfig;
use orbitfl_core::link::{IslParams, IslTimeMode, LinkParams};
use orbitfl_core::protocol::Mode;
use orbitfl_core::simcore::{DatasetSpec, Scenario, Termination};
use orbitfl_core::timing::ComputeParams;
use orbitfl_core::{ConstellationConfig, GroundStation};

/// A 2x3 constellation with a small synthetic dataset: big enough to
/// exercise every phase, small enough to iterate quickly.
pub fn small_scenario(mode: Mode) -> Scenario {
    Scenario {
        constellation: ConstellationConfig {
            num_orbits: 2,
            sats_per_orbit: 3,
            altitude_km: 530.0,
            inclination_deg: 85.0,
            raan_spacing_deg: None,
            phase_offset_deg: 7.5,
            epoch_s: 0.0,
        },
        ground_station: GroundStation {
            latitude_deg: 38.0,
            longitude_deg: -91.77,
            altitude_km: 0.0,
            min_elevation_deg: 10.0,
        },
        link: LinkParams {
            tx_power_dbm: 60.0,
            antenna_gain_sat_dbi: 6.98,
            antenna_gain_ps_dbi: 6.98,
            noise_temp_k: 354.81,
            bandwidth_hz: 0.5e9,
            boltzmann_j_per_k: BOLTZMANN_J_PER_K,
            wavelength_m: 0.015,
            max_data_rate_bps: 16e6,
            max_los_distance_km: 2600.0,
        },
        isl: IslParams {
            bandwidth_hz: 100e6,
            spectral_efficiency_bps_hz: 1.0,
            time_mode: IslTimeMode::Linear,
        },
        compute: ComputeParams {
            cpu_cores: 4,
            clock_hz: 1.43e9,
            cycles_per_batch: 2e7,
            overhead_cycles: 1e8,
            filter_cycles_per_image: 1e6,
            batch_size: 4,
            epochs: 2,
        },
        train: TrainConfig {
            learning_rate: 0.5,
            batch_size: 4,
            epochs: 2,
            loss_threshold: 0.1,
            value_bits: 32,
        },
        dataset: DatasetSpec::Synthetic {
            dim: 4,
            num_classes: 3,
            samples_per_sat: 60,
            separation: 6.0,
            noise: 0.6,
            test_per_class: 30,
        },
        mode,
        termination: Termination {
            max_rounds: Some(1),
            target_accuracy: None,
            min_param_delta: None,
        },
        orbital_epochs: 2,
        negative_ratio: 1.0,
        aggregate_at: Default::default(),
        count_final_broadcast: false,
        horizon_s: 4.0 * 86_400.0,
        window_step_s: 20.0,
        seed: 7,
    }
}
