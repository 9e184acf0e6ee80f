//! Physical constants shared across the simulator.

/// Mean Earth radius [km].
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Standard gravitational parameter of Earth, G*M [km^3/s^2].
pub const EARTH_MU_KM3_S2: f64 = 3.986004418e5;

/// Earth rotation rate [rad/s].
pub const EARTH_ROTATION_RAD_S: f64 = 7.2921159e-5;

/// Speed of light [km/s].
pub const SPEED_OF_LIGHT_KM_S: f64 = 299792.458;

/// Boltzmann constant [J/K].
pub const BOLTZMANN_J_PER_K: f64 = 1.380649e-23;
