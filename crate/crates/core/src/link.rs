//! RF link budget between satellites and the parameter server, plus
//! inter-satellite link transfer costs.
//!
//! Parameters are stored in the units they are usually quoted in (dBm,
//! dBi, K, Hz, m) and converted to linear units inside the formulas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::SPEED_OF_LIGHT_KM_S;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("distance {distance_km} km exceeds the maximum LoS distance {max_km} km")]
    NoLineOfSight { distance_km: f64, max_km: f64 },
    #[error("distance must be positive, got {0} km")]
    NonPositiveDistance(f64),
    #[error("no link: data rate is zero")]
    NoLink,
}

/// Satellite-to-ground link budget parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkParams {
    pub tx_power_dbm: f64,
    pub antenna_gain_sat_dbi: f64,
    pub antenna_gain_ps_dbi: f64,
    pub noise_temp_k: f64,
    pub bandwidth_hz: f64,
    pub boltzmann_j_per_k: f64,
    pub wavelength_m: f64,
    pub max_data_rate_bps: f64,
    pub max_los_distance_km: f64,
}

impl LinkParams {
    /// Free-space path loss as a linear ratio, checked against the
    /// maximum LoS distance.
    pub fn path_loss(&self, distance_km: f64) -> Result<f64, LinkError> {
        if distance_km <= 0.0 {
            return Err(LinkError::NonPositiveDistance(distance_km));
        }
        if distance_km > self.max_los_distance_km {
            return Err(LinkError::NoLineOfSight {
                distance_km,
                max_km: self.max_los_distance_km,
            });
        }
        Ok(free_space_path_loss(distance_km, self.wavelength_m))
    }

    /// Linear SNR over the AWGN channel: P*Gi*Gps / (T*B*Kb*L).
    pub fn snr(&self, distance_km: f64) -> Result<f64, LinkError> {
        let loss = self.path_loss(distance_km)?;
        let p_w = dbm_to_watt(self.tx_power_dbm);
        let g_sat = dbi_to_linear(self.antenna_gain_sat_dbi);
        let g_ps = dbi_to_linear(self.antenna_gain_ps_dbi);
        let noise = self.noise_temp_k * self.bandwidth_hz * self.boltzmann_j_per_k;
        Ok(p_w * g_sat * g_ps / (noise * loss))
    }

    /// Shannon rate B*log2(1+SNR), capped at the maximum data rate.
    pub fn data_rate_bps(&self, distance_km: f64) -> Result<f64, LinkError> {
        let snr = self.snr(distance_km)?;
        Ok((self.bandwidth_hz * (1.0 + snr).log2()).min(self.max_data_rate_bps))
    }
}

/// Free-space path loss (4*pi*d/lambda)^2 as a linear ratio.
pub fn free_space_path_loss(distance_km: f64, wavelength_m: f64) -> f64 {
    let d_m = distance_km * 1000.0;
    (4.0 * std::f64::consts::PI * d_m / wavelength_m).powi(2)
}

/// Time to push `model_bits` through a link at `rate_bps`.
pub fn transmission_time_s(model_bits: u64, rate_bps: f64) -> Result<f64, LinkError> {
    if rate_bps <= 0.0 {
        return Err(LinkError::NoLink);
    }
    Ok(model_bits as f64 / rate_bps)
}

/// One-way propagation delay over `distance_km`.
pub fn propagation_time_s(distance_km: f64) -> f64 {
    distance_km / SPEED_OF_LIGHT_KM_S
}

/// How the per-epoch relay sweep cost scales with the hop count.
///
/// `Linear` treats the sweep as a pipeline: H times the single-hop cost.
/// `Triangular` is the literal reading of the indexed hop sum, giving
/// H*(H+1)/2 times the single-hop cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IslTimeMode {
    #[default]
    Linear,
    Triangular,
}

/// Inter-satellite link parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IslParams {
    pub bandwidth_hz: f64,
    pub spectral_efficiency_bps_hz: f64,
    #[serde(default)]
    pub time_mode: IslTimeMode,
}

impl IslParams {
    pub fn rate_bps(&self) -> f64 {
        self.bandwidth_hz * self.spectral_efficiency_bps_hz
    }
}

/// Cost of moving a model across one ISL hop.
pub fn isl_hop_time_s(model_bits: u64, isl: &IslParams) -> f64 {
    model_bits as f64 / isl.rate_bps()
}

/// Relay sweep cost across `hops` ISL hops under the configured mode.
pub fn relay_sweep_time_s(model_bits: u64, hops: u32, isl: &IslParams) -> f64 {
    let hop = isl_hop_time_s(model_bits, isl);
    match isl.time_mode {
        IslTimeMode::Linear => hops as f64 * hop,
        IslTimeMode::Triangular => (hops as f64 * (hops as f64 + 1.0) / 2.0) * hop,
    }
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn watt_to_dbm(watt: f64) -> f64 {
    10.0 * (watt * 1000.0).log10()
}

pub fn dbi_to_linear(dbi: f64) -> f64 {
    10f64.powf(dbi / 10.0)
}

pub fn ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}
