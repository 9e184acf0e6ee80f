//! Walker Delta constellation geometry and ground-station visibility.
//!
//! Satellites move on ideal circular two-body orbits around a spherical,
//! uniformly rotating Earth. No J2, drag or other perturbations: the
//! timing model only depends on orbital periods and pass geometry, which
//! the ideal model captures.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::constants::{EARTH_MU_KM3_S2, EARTH_RADIUS_KM, EARTH_ROTATION_RAD_S};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("altitude must be positive and below 2000 km (LEO), got {0} km")]
    AltitudeOutOfRange(f64),
    #[error("satellite and ground-station positions coincide")]
    DegeneratePositions,
    #[error("no visibility window for satellite {orbit}/{slot} after t={t} s (horizon exhausted)")]
    HorizonExhausted { orbit: u32, slot: u32, t: f64 },
}

/// Walker Delta constellation layout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConstellationConfig {
    pub num_orbits: u32,
    pub sats_per_orbit: u32,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    /// RAAN step between adjacent orbital planes. `None` means 360/N.
    pub raan_spacing_deg: Option<f64>,
    /// Argument-of-latitude offset between adjacent planes.
    pub phase_offset_deg: f64,
    /// Simulation t=0 [s].
    pub epoch_s: f64,
}

impl ConstellationConfig {
    pub fn raan_spacing(&self) -> f64 {
        self.raan_spacing_deg
            .unwrap_or(360.0 / self.num_orbits as f64)
    }

    pub fn total_sats(&self) -> u32 {
        self.num_orbits * self.sats_per_orbit
    }
}

/// Address of one satellite: (orbit plane, slot within plane).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SatelliteId {
    pub orbit: u32,
    pub slot: u32,
}

impl std::fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.orbit, self.slot)
    }
}

/// Circular-orbit elements: semi-major axis plus three angles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrbitalElements {
    pub semi_major_axis_km: f64,
    pub inclination_rad: f64,
    pub raan_rad: f64,
    pub arg_latitude_epoch_rad: f64,
}

/// Parameter-server site on the rotating Earth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroundStation {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub altitude_km: f64,
    pub min_elevation_deg: f64,
}

/// Earth-centered inertial position at a given simulation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EciPosition {
    pub x_km: f64,
    pub y_km: f64,
    pub z_km: f64,
    pub t_s: f64,
}

impl EciPosition {
    pub fn norm_km(&self) -> f64 {
        (self.x_km * self.x_km + self.y_km * self.y_km + self.z_km * self.z_km).sqrt()
    }

    pub fn distance_km(&self, other: &EciPosition) -> f64 {
        let dx = self.x_km - other.x_km;
        let dy = self.y_km - other.y_km;
        let dz = self.z_km - other.z_km;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Maximal interval of line-of-sight between one satellite and the GS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityWindow {
    pub sat: SatelliteId,
    pub start_s: f64,
    pub end_s: f64,
}

impl VisibilityWindow {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn midpoint_s(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }
}

/// Orbital period of a circular LEO orbit at altitude `h_km`.
pub fn orbital_period_s(h_km: f64) -> Result<f64, GeometryError> {
    if h_km <= 0.0 || h_km >= 2000.0 {
        return Err(GeometryError::AltitudeOutOfRange(h_km));
    }
    let a = EARTH_RADIUS_KM + h_km;
    Ok(2.0 * PI / EARTH_MU_KM3_S2.sqrt() * a.powf(1.5))
}

/// Orbital speed [km/s] of a circular orbit at altitude `h_km`.
pub fn orbital_speed_km_s(h_km: f64) -> Result<f64, GeometryError> {
    let t = orbital_period_s(h_km)?;
    Ok(2.0 * PI * (EARTH_RADIUS_KM + h_km) / t)
}

/// Position on the circular orbit at time `t_s`, uniform angular rate.
pub fn propagate(elements: &OrbitalElements, t_s: f64) -> EciPosition {
    let a = elements.semi_major_axis_km;
    let mean_motion = (EARTH_MU_KM3_S2 / (a * a * a)).sqrt();
    let u = elements.arg_latitude_epoch_rad + mean_motion * t_s;
    let (sin_u, cos_u) = u.sin_cos();
    let (sin_raan, cos_raan) = elements.raan_rad.sin_cos();
    let (sin_inc, cos_inc) = elements.inclination_rad.sin_cos();
    EciPosition {
        x_km: a * (cos_raan * cos_u - sin_raan * sin_u * cos_inc),
        y_km: a * (sin_raan * cos_u + cos_raan * sin_u * cos_inc),
        z_km: a * sin_u * sin_inc,
        t_s,
    }
}

/// Ground-station position in ECI, rotated by the Earth rate from its
/// epoch longitude.
pub fn ground_station_eci(gs: &GroundStation, t_s: f64) -> EciPosition {
    let r = EARTH_RADIUS_KM + gs.altitude_km;
    let lat = gs.latitude_deg.to_radians();
    let lon = gs.longitude_deg.to_radians() + EARTH_ROTATION_RAD_S * t_s;
    let (sin_lat, cos_lat) = lat.sin_cos();
    let (sin_lon, cos_lon) = lon.sin_cos();
    EciPosition {
        x_km: r * cos_lat * cos_lon,
        y_km: r * cos_lat * sin_lon,
        z_km: r * sin_lat,
        t_s,
    }
}

/// Elevation of the satellite above the local horizon at the GS, in
/// degrees. Visibility holds iff elevation >= alpha_min.
pub fn elevation_angle_deg(
    sat_pos: &EciPosition,
    gs_pos: &EciPosition,
) -> Result<f64, GeometryError> {
    let rx = sat_pos.x_km - gs_pos.x_km;
    let ry = sat_pos.y_km - gs_pos.y_km;
    let rz = sat_pos.z_km - gs_pos.z_km;
    let range = (rx * rx + ry * ry + rz * rz).sqrt();
    let gs_norm = gs_pos.norm_km();
    if range == 0.0 || gs_norm == 0.0 {
        return Err(GeometryError::DegeneratePositions);
    }
    // elevation = 90 deg - angle(r_gs, r_sat - r_gs)
    let cos_zenith =
        (gs_pos.x_km * rx + gs_pos.y_km * ry + gs_pos.z_km * rz) / (gs_norm * range);
    Ok(90.0 - cos_zenith.clamp(-1.0, 1.0).acos().to_degrees())
}

/// Earliest window for `sat` that is still current or upcoming at `t`.
pub fn next_window(
    windows: &[VisibilityWindow],
    sat: SatelliteId,
    t_s: f64,
) -> Option<&VisibilityWindow> {
    windows
        .iter()
        .filter(|w| w.sat == sat && w.end_s > t_s)
        .min_by(|a, b| a.start_s.total_cmp(&b.start_s))
}

/// Waiting time until `window` opens when the current time is `t`.
pub fn wait_time_s(window: &VisibilityWindow, t_s: f64) -> f64 {
    (window.start_s - t_s).max(0.0)
}

/// Slant range from the GS to the horizon at elevation `alpha_min` for a
/// satellite shell at altitude `h_km`. Used as the default maximum LoS
/// distance so the link and visibility definitions agree.
pub fn slant_range_at_elevation_km(h_km: f64, alpha_deg: f64) -> f64 {
    let a = alpha_deg.to_radians();
    let re = EARTH_RADIUS_KM;
    let r = re + h_km;
    ((r * r - (re * a.cos()).powi(2)).sqrt() - re * a.sin()).max(0.0)
}

/// A concrete constellation: per-satellite elements plus the GS site.
#[derive(Debug, Clone)]
pub struct Constellation {
    cfg: ConstellationConfig,
    gs: GroundStation,
    elements: Vec<(SatelliteId, OrbitalElements)>,
}

impl Constellation {
    pub fn new(cfg: ConstellationConfig, gs: GroundStation) -> Self {
        let mut elements = Vec::with_capacity(cfg.total_sats() as usize);
        let raan_step = cfg.raan_spacing().to_radians();
        let slot_step = 2.0 * PI / cfg.sats_per_orbit as f64;
        let phase = cfg.phase_offset_deg.to_radians();
        for orbit in 0..cfg.num_orbits {
            for slot in 0..cfg.sats_per_orbit {
                let id = SatelliteId { orbit, slot };
                let u0 = slot as f64 * slot_step + orbit as f64 * phase;
                elements.push((
                    id,
                    OrbitalElements {
                        semi_major_axis_km: EARTH_RADIUS_KM + cfg.altitude_km,
                        inclination_rad: cfg.inclination_deg.to_radians(),
                        raan_rad: (orbit as f64 * raan_step).rem_euclid(2.0 * PI),
                        arg_latitude_epoch_rad: u0.rem_euclid(2.0 * PI),
                    },
                ));
            }
        }
        Self { cfg, gs, elements }
    }

    pub fn config(&self) -> &ConstellationConfig {
        &self.cfg
    }

    pub fn ground_station(&self) -> &GroundStation {
        &self.gs
    }

    pub fn sats(&self) -> impl Iterator<Item = SatelliteId> + '_ {
        self.elements.iter().map(|(id, _)| *id)
    }

    pub fn orbit_sats(&self, orbit: u32) -> Vec<SatelliteId> {
        (0..self.cfg.sats_per_orbit)
            .map(|slot| SatelliteId { orbit, slot })
            .collect()
    }

    pub fn elements_of(&self, sat: SatelliteId) -> &OrbitalElements {
        let idx = (sat.orbit * self.cfg.sats_per_orbit + sat.slot) as usize;
        &self.elements[idx].1
    }

    pub fn orbital_period_s(&self) -> f64 {
        orbital_period_s(self.cfg.altitude_km).expect("validated altitude")
    }

    pub fn position(&self, sat: SatelliteId, t_s: f64) -> EciPosition {
        propagate(self.elements_of(sat), t_s)
    }

    pub fn gs_position(&self, t_s: f64) -> EciPosition {
        ground_station_eci(&self.gs, t_s)
    }

    pub fn elevation_deg(&self, sat: SatelliteId, t_s: f64) -> f64 {
        elevation_angle_deg(&self.position(sat, t_s), &self.gs_position(t_s))
            .expect("satellite cannot coincide with the ground station")
    }

    pub fn slant_range_km(&self, sat: SatelliteId, t_s: f64) -> f64 {
        self.position(sat, t_s).distance_km(&self.gs_position(t_s))
    }

    /// Visibility windows for all satellites over `[0, horizon_s]`.
    ///
    /// Fixed-step elevation sampling with window edges refined by
    /// bisection to 0.1 s. Deterministic for fixed inputs; windows are
    /// sorted by (satellite, start) and clipped to the horizon.
    pub fn compute_windows(&self, horizon_s: f64, step_s: f64) -> Vec<VisibilityWindow> {
        assert!(horizon_s > 0.0 && step_s > 0.0);
        let alpha = self.gs.min_elevation_deg;
        let mut windows = Vec::new();
        for sat in self.sats() {
            let above = |t: f64| self.elevation_deg(sat, t) >= alpha;
            let mut t_prev = 0.0;
            let mut prev_above = above(0.0);
            let mut open_start = if prev_above { Some(0.0) } else { None };
            let mut t = step_s;
            loop {
                let t_clamped = t.min(horizon_s);
                let now_above = above(t_clamped);
                if now_above != prev_above {
                    let edge = self.refine_edge(sat, t_prev, t_clamped, alpha);
                    if now_above {
                        open_start = Some(edge);
                    } else if let Some(start) = open_start.take() {
                        windows.push(VisibilityWindow {
                            sat,
                            start_s: start,
                            end_s: edge,
                        });
                    }
                }
                prev_above = now_above;
                t_prev = t_clamped;
                if t >= horizon_s {
                    break;
                }
                t += step_s;
            }
            if let Some(start) = open_start {
                windows.push(VisibilityWindow {
                    sat,
                    start_s: start,
                    end_s: horizon_s,
                });
            }
        }
        windows.sort_by(|a, b| a.sat.cmp(&b.sat).then(a.start_s.total_cmp(&b.start_s)));
        windows
    }

    /// Bisect the visibility threshold crossing inside `[lo, hi]` down to
    /// a bracket narrower than 0.1 s and return its midpoint.
    fn refine_edge(&self, sat: SatelliteId, mut lo: f64, mut hi: f64, alpha: f64) -> f64 {
        let above_lo = self.elevation_deg(sat, lo) >= alpha;
        while hi - lo > 0.1 {
            let mid = 0.5 * (lo + hi);
            if (self.elevation_deg(sat, mid) >= alpha) == above_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Render windows as CSV: `sat_orbit,sat_slot,start_s,end_s,duration_s`.
pub fn windows_to_csv(windows: &[VisibilityWindow]) -> String {
    let mut out = String::from("sat_orbit,sat_slot,start_s,end_s,duration_s\n");
    for w in windows {
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{:.3}\n",
            w.sat.orbit,
            w.sat.slot,
            w.start_s,
            w.end_s,
            w.duration_s()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn elements(h_km: f64, inc_deg: f64, raan_deg: f64, u0_deg: f64) -> OrbitalElements {
        OrbitalElements {
            semi_major_axis_km: EARTH_RADIUS_KM + h_km,
            inclination_rad: inc_deg.to_radians(),
            raan_rad: raan_deg.to_radians(),
            arg_latitude_epoch_rad: u0_deg.to_radians(),
        }
    }

    #[test]
    fn period_at_530_km() {
        let t = orbital_period_s(530.0).unwrap();
        // Independent two-body evaluation: 2*pi*sqrt(a^3/mu).
        let a: f64 = 6901.0;
        let expected = 2.0 * std::f64::consts::PI * (a.powi(3) / EARTH_MU_KM3_S2).sqrt();
        assert_relative_eq!(t, expected, max_relative = 1e-12);
        assert!((t - 5707.0).abs() < 5.0, "T = {t}");
    }

    #[test]
    fn period_kepler_scaling() {
        // Scaling the orbital radius by k scales the period by k^{3/2}.
        let h1 = 500.0;
        let a1 = EARTH_RADIUS_KM + h1;
        let k = 1.1;
        let h2 = k * a1 - EARTH_RADIUS_KM;
        let t1 = orbital_period_s(h1).unwrap();
        let t2 = orbital_period_s(h2).unwrap();
        assert_relative_eq!(t2 / t1, k.powf(1.5), max_relative = 1e-12);
    }

    #[test]
    fn speed_at_530_km() {
        let v = orbital_speed_km_s(530.0).unwrap();
        assert!((v - 7.60).abs() < 0.01, "v = {v}");
    }

    #[test]
    fn period_rejects_bad_altitude() {
        assert!(orbital_period_s(0.0).is_err());
        assert!(orbital_period_s(-10.0).is_err());
        assert!(orbital_period_s(2000.0).is_err());
    }

    #[test]
    fn propagate_periodicity_and_radius() {
        let e = elements(530.0, 85.0, 40.0, 17.0);
        let t_n = orbital_period_s(530.0).unwrap();
        let p0 = propagate(&e, 0.0);
        let p1 = propagate(&e, t_n);
        assert!(p0.distance_km(&p1) < 1e-6);
        for k in 0..20 {
            let p = propagate(&e, k as f64 * 311.7);
            assert_relative_eq!(
                p.norm_km(),
                e.semi_major_axis_km,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn propagate_half_period_antipodal() {
        let e = elements(530.0, 53.0, 200.0, 123.0);
        let t_n = orbital_period_s(530.0).unwrap();
        let p0 = propagate(&e, 0.0);
        let ph = propagate(&e, t_n / 2.0);
        let dot = (p0.x_km * ph.x_km + p0.y_km * ph.y_km + p0.z_km * ph.z_km)
            / (p0.norm_km() * ph.norm_km());
        assert!((dot + 1.0).abs() < 1e-9, "dot = {dot}");
    }

    #[test]
    fn gs_frame_anchor_and_rotation() {
        let gs = GroundStation {
            latitude_deg: 0.0,
            longitude_deg: 0.0,
            altitude_km: 0.0,
            min_elevation_deg: 10.0,
        };
        let p = ground_station_eci(&gs, 0.0);
        assert_relative_eq!(p.x_km, EARTH_RADIUS_KM, max_relative = 1e-12);
        assert!(p.y_km.abs() < 1e-9 && p.z_km.abs() < 1e-9);

        let sidereal = 2.0 * std::f64::consts::PI / EARTH_ROTATION_RAD_S;
        let p1 = ground_station_eci(&gs, sidereal);
        assert!(p.distance_km(&p1) < 1e-6);
    }

    #[test]
    fn gs_pole_is_fixed() {
        let gs = GroundStation {
            latitude_deg: 90.0,
            longitude_deg: -91.77,
            altitude_km: 0.0,
            min_elevation_deg: 10.0,
        };
        let p0 = ground_station_eci(&gs, 0.0);
        let p1 = ground_station_eci(&gs, 12345.0);
        assert!(p0.distance_km(&p1) < 1e-9);
    }

    #[test]
    fn elevation_zenith_horizon_nadir() {
        let gs = GroundStation {
            latitude_deg: 38.0,
            longitude_deg: -91.77,
            altitude_km: 0.0,
            min_elevation_deg: 10.0,
        };
        let g = ground_station_eci(&gs, 0.0);
        let scale = (EARTH_RADIUS_KM + 530.0) / EARTH_RADIUS_KM;
        let overhead = EciPosition {
            x_km: g.x_km * scale,
            y_km: g.y_km * scale,
            z_km: g.z_km * scale,
            t_s: 0.0,
        };
        assert_relative_eq!(elevation_angle_deg(&overhead, &g).unwrap(), 90.0, epsilon = 1e-9);

        let antipodal = EciPosition {
            x_km: -overhead.x_km,
            y_km: -overhead.y_km,
            z_km: -overhead.z_km,
            t_s: 0.0,
        };
        assert_relative_eq!(elevation_angle_deg(&antipodal, &g).unwrap(), -90.0, epsilon = 1e-9);

        // A point offset perpendicular to the local vertical lies on the
        // horizon plane.
        let horiz = EciPosition {
            x_km: g.x_km - g.y_km,
            y_km: g.y_km + g.x_km,
            z_km: g.z_km,
            t_s: 0.0,
        };
        assert!(elevation_angle_deg(&horiz, &g).unwrap().abs() < 1e-9);
    }

    #[test]
    fn elevation_degenerate_error() {
        let g = EciPosition {
            x_km: EARTH_RADIUS_KM,
            y_km: 0.0,
            z_km: 0.0,
            t_s: 0.0,
        };
        assert_eq!(
            elevation_angle_deg(&g, &g),
            Err(GeometryError::DegeneratePositions)
        );
    }

    fn near_polar() -> Constellation {
        Constellation::new(
            ConstellationConfig {
                num_orbits: 2,
                sats_per_orbit: 4,
                altitude_km: 530.0,
                inclination_deg: 85.0,
                raan_spacing_deg: None,
                phase_offset_deg: 7.5,
                epoch_s: 0.0,
            },
            GroundStation {
                latitude_deg: 38.0,
                longitude_deg: -91.77,
                altitude_km: 0.0,
                min_elevation_deg: 10.0,
            },
        )
    }

    #[test]
    fn equal_spacing_within_orbit() {
        let con = near_polar();
        let step = 2.0 * std::f64::consts::PI / 4.0;
        for &t in &[0.0, 911.3, 5000.0] {
            for slot in 0..4u32 {
                let a = con.position(SatelliteId { orbit: 0, slot }, t);
                let b = con.position(
                    SatelliteId {
                        orbit: 0,
                        slot: (slot + 1) % 4,
                    },
                    t,
                );
                let cos = (a.x_km * b.x_km + a.y_km * b.y_km + a.z_km * b.z_km)
                    / (a.norm_km() * b.norm_km());
                assert!((cos.acos() - step).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zenith_only_visibility_yields_no_windows() {
        let mut con = near_polar();
        con.gs.min_elevation_deg = 90.0;
        assert!(con.compute_windows(20_000.0, 5.0).is_empty());
    }

    #[test]
    fn equatorial_orbit_invisible_from_pole() {
        let con = Constellation::new(
            ConstellationConfig {
                num_orbits: 1,
                sats_per_orbit: 3,
                altitude_km: 530.0,
                inclination_deg: 0.0,
                raan_spacing_deg: None,
                phase_offset_deg: 0.0,
                epoch_s: 0.0,
            },
            GroundStation {
                latitude_deg: 89.9,
                longitude_deg: 0.0,
                altitude_km: 0.0,
                min_elevation_deg: 0.0,
            },
        );
        assert!(con.compute_windows(40_000.0, 10.0).is_empty());
    }

    #[test]
    fn window_maximality() {
        let con = near_polar();
        let windows = con.compute_windows(86_400.0, 5.0);
        assert!(!windows.is_empty());
        let alpha = con.gs.min_elevation_deg;
        for w in &windows {
            assert!(w.start_s < w.end_s);
            assert!(con.elevation_deg(w.sat, w.midpoint_s()) >= alpha);
            if w.start_s > 1.0 {
                assert!(con.elevation_deg(w.sat, w.start_s - 1.0) < alpha);
            }
            if w.end_s + 1.0 < 86_400.0 {
                assert!(con.elevation_deg(w.sat, w.end_s + 1.0) < alpha);
            }
        }
        // Per-satellite windows are disjoint and sorted.
        for pair in windows.windows(2) {
            if pair[0].sat == pair[1].sat {
                assert!(pair[0].end_s < pair[1].start_s);
            }
        }
    }

    #[test]
    fn windows_are_deterministic() {
        let con = near_polar();
        let a = con.compute_windows(43_200.0, 5.0);
        let b = con.compute_windows(43_200.0, 5.0);
        assert_eq!(a, b);
    }

    #[test]
    fn next_window_selection() {
        let sat = SatelliteId { orbit: 0, slot: 0 };
        let other = SatelliteId { orbit: 0, slot: 1 };
        let windows = vec![
            VisibilityWindow { sat, start_s: 100.0, end_s: 200.0 },
            VisibilityWindow { sat: other, start_s: 250.0, end_s: 260.0 },
            VisibilityWindow { sat, start_s: 500.0, end_s: 600.0 },
        ];
        let w = next_window(&windows, sat, 150.0).unwrap();
        assert_eq!(w.start_s, 100.0);
        assert_eq!(wait_time_s(w, 150.0), 0.0);

        let w = next_window(&windows, sat, 300.0).unwrap();
        assert_eq!(w.start_s, 500.0);
        assert_eq!(wait_time_s(w, 300.0), 200.0);

        assert!(next_window(&windows, sat, 700.0).is_none());
    }

    #[test]
    fn csv_shape() {
        let windows = vec![VisibilityWindow {
            sat: SatelliteId { orbit: 1, slot: 2 },
            start_s: 10.0,
            end_s: 70.0,
        }];
        let csv = windows_to_csv(&windows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sat_orbit,sat_slot,start_s,end_s,duration_s"
        );
        assert_eq!(lines.next().unwrap(), "1,2,10.000,70.000,60.000");
    }
}
