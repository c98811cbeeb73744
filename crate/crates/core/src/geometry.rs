//! Walker-Delta constellation, service-region sampling, cooperating-satellite
//! selection and per-link delay/Doppler/departure-angle geometry.
//!
//! Positions are in km in an Earth-centred frame; the Earth is a
//! non-rotating sphere, so the inertial and Earth-fixed frames coincide.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from_seed};

/// Earth gravitational parameter (km³/s²).
pub const MU_EARTH_KM3_S2: f64 = 398_600.441_8;
/// Speed of light (km/s).
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;
/// Speed of light (m/s).
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
/// Mean spherical Earth radius (km).
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationConfig {
    pub num_planes: usize,
    pub sats_per_plane: usize,
    pub inclination_deg: f64,
    pub altitude_km: f64,
    /// Walker phasing factor `F`, in `[0, num_planes − 1]`.
    pub phasing_factor: usize,
    pub earth_radius_km: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            num_planes: 28,
            sats_per_plane: 60,
            inclination_deg: 53.0,
            altitude_km: 600.0,
            phasing_factor: 1,
            earth_radius_km: EARTH_RADIUS_KM,
        }
    }
}

impl ConstellationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_planes == 0 || self.sats_per_plane == 0 {
            return Err(Error::InvalidConfig(
                "constellation needs at least one plane and one satellite per plane".into(),
            ));
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            return Err(Error::InvalidConfig(format!(
                "inclination {} deg outside [0, 180]",
                self.inclination_deg
            )));
        }
        if !(self.altitude_km > 0.0) || !(self.earth_radius_km > 0.0) {
            return Err(Error::InvalidConfig(
                "altitude and earth radius must be positive".into(),
            ));
        }
        if self.phasing_factor >= self.num_planes {
            return Err(Error::InvalidConfig(format!(
                "phasing factor {} outside [0, {}]",
                self.phasing_factor,
                self.num_planes - 1
            )));
        }
        Ok(())
    }

    pub fn orbit_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    /// Circular orbital speed from vis-viva, km/s.
    pub fn orbital_speed_km_s(&self) -> f64 {
        (MU_EARTH_KM3_S2 / self.orbit_radius_km()).sqrt()
    }

    /// Highest latitude reached by the ground tracks; region centres are
    /// drawn inside this band.
    pub fn coverage_latitude_deg(&self) -> f64 {
        if self.inclination_deg <= 90.0 {
            self.inclination_deg
        } else {
            180.0 - self.inclination_deg
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub plane_index: usize,
    pub slot_index: usize,
    /// Columns: along-track, cross-track, nadir (array boresight).
    pub body_frame: Matrix3<f64>,
}

/// Builds the `num_planes × sats_per_plane` Walker-Delta constellation at
/// `epoch` seconds.
pub fn build_constellation(config: &ConstellationConfig, epoch: f64) -> Result<Vec<SatelliteState>> {
    config.validate()?;
    let p = config.num_planes;
    let q = config.sats_per_plane;
    let total = (p * q) as f64;
    let r = config.orbit_radius_km();
    let speed = config.orbital_speed_km_s();
    let mean_motion = speed / r;
    let inc = config.inclination_deg.to_radians();
    let (sin_i, cos_i) = inc.sin_cos();

    let mut states = Vec::with_capacity(p * q);
    for plane in 0..p {
        let raan = 2.0 * PI * plane as f64 / p as f64;
        let (sin_o, cos_o) = raan.sin_cos();
        for slot in 0..q {
            let arg_lat = 2.0 * PI * slot as f64 / q as f64
                + 2.0 * PI * (config.phasing_factor * plane) as f64 / total
                + mean_motion * epoch;
            let (sin_u, cos_u) = arg_lat.sin_cos();
            let radial = Vector3::new(
                cos_o * cos_u - sin_o * sin_u * cos_i,
                sin_o * cos_u + cos_o * sin_u * cos_i,
                sin_u * sin_i,
            );
            let along = Vector3::new(
                -cos_o * sin_u - sin_o * cos_u * cos_i,
                -sin_o * sin_u + cos_o * cos_u * cos_i,
                cos_u * sin_i,
            );
            let nadir = -radial;
            let cross = nadir.cross(&along);
            states.push(SatelliteState {
                position: radial * r,
                velocity: along * speed,
                plane_index: plane,
                slot_index: slot,
                body_frame: Matrix3::from_columns(&[along, cross, nadir]),
            });
        }
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_km: f64,
}

impl Geodetic {
    pub fn to_ecef(&self, earth_radius_km: f64) -> Vector3<f64> {
        let (sl, cl) = self.lat_deg.to_radians().sin_cos();
        let (so, co) = self.lon_deg.to_radians().sin_cos();
        (earth_radius_km + self.alt_km) * Vector3::new(cl * co, cl * so, sl)
    }

    fn from_unit(u: &Vector3<f64>) -> Self {
        Geodetic {
            lat_deg: u.z.clamp(-1.0, 1.0).asin().to_degrees(),
            lon_deg: u.y.atan2(u.x).to_degrees(),
            alt_km: 0.0,
        }
    }
}

/// Central angle between two points, radians.
pub fn central_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceRegion {
    pub center: Geodetic,
    pub radius_km: f64,
    pub user_positions: Vec<Geodetic>,
}

impl ServiceRegion {
    pub fn user_ecef(&self, earth_radius_km: f64) -> Vec<Vector3<f64>> {
        self.user_positions.iter().map(|g| g.to_ecef(earth_radius_km)).collect()
    }
}

/// Draws a service region: an area-uniform centre within the constellation's
/// latitude band and `k` users uniform over the spherical cap of great-circle
/// radius `radius_km` around it.
pub fn sample_region(
    seed: u64,
    config: &ConstellationConfig,
    radius_km: f64,
    k: usize,
) -> Result<ServiceRegion> {
    if k == 0 {
        return Err(Error::InvalidInput("service region needs at least one user".into()));
    }
    if !(radius_km >= 0.0) {
        return Err(Error::InvalidInput(format!("region radius {radius_km} km is negative")));
    }
    let mut rng = rng_from_seed(seed);
    let z_max = config.coverage_latitude_deg().to_radians().sin();
    let z = if z_max > 0.0 { rng.random_range(-z_max..=z_max) } else { 0.0 };
    let lon = rng.random_range(-PI..PI);
    let rho = (1.0 - z * z).sqrt();
    let c = Vector3::new(rho * lon.cos(), rho * lon.sin(), z);

    let (east, north) = tangent_basis(&c);
    let cap = radius_km / config.earth_radius_km;
    let one_minus_cos = 1.0 - cap.cos();
    let users = (0..k)
        .map(|_| {
            let theta = (1.0 - rng.random::<f64>() * one_minus_cos).clamp(-1.0, 1.0).acos();
            let az = rng.random_range(0.0..2.0 * PI);
            let dir = theta.cos() * c + theta.sin() * (az.cos() * east + az.sin() * north);
            Geodetic::from_unit(&dir.normalize())
        })
        .collect();
    Ok(ServiceRegion {
        center: Geodetic::from_unit(&c),
        radius_km,
        user_positions: users,
    })
}

fn tangent_basis(c: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let pole = Vector3::z();
    let east = pole.cross(c);
    let east = if east.norm() < 1e-12 {
        Vector3::y()
    } else {
        east.normalize()
    };
    let north = c.cross(&east).normalize();
    (east, north)
}

/// Mean great-circle distance (km) from the centre of a uniformly populated
/// spherical cap of great-circle radius `radius_km`.
pub fn cap_mean_distance_km(radius_km: f64, earth_radius_km: f64) -> f64 {
    let a = radius_km / earth_radius_km;
    if a == 0.0 {
        return 0.0;
    }
    earth_radius_km * (a.sin() - a * a.cos()) / (1.0 - a.cos())
}

/// Indices of the `s` satellites closest to `center`, ascending by slant
/// range, ties broken by `(plane_index, slot_index)`.
pub fn select_satellites(states: &[SatelliteState], center: &Vector3<f64>, s: usize) -> Result<Vec<usize>> {
    select_satellites_masked(states, center, s, None)
}

/// Same as [`select_satellites`], restricted to satellites at or above
/// `min_elevation_deg` as seen from `center`.
pub fn select_satellites_masked(
    states: &[SatelliteState],
    center: &Vector3<f64>,
    s: usize,
    min_elevation_deg: Option<f64>,
) -> Result<Vec<usize>> {
    if s == 0 {
        return Err(Error::InvalidInput("must select at least one satellite".into()));
    }
    let mut ranked: Vec<(f64, usize, usize, usize)> = states
        .iter()
        .enumerate()
        .filter(|(_, st)| match min_elevation_deg {
            Some(min) => elevation_deg(center, &st.position) >= min,
            None => true,
        })
        .map(|(i, st)| ((st.position - center).norm(), st.plane_index, st.slot_index, i))
        .collect();
    if s > ranked.len() {
        return Err(Error::InvalidInput(format!(
            "requested {s} satellites but only {} are eligible",
            ranked.len()
        )));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(ranked.into_iter().take(s).map(|r| r.3).collect())
}

/// Elevation of `target` above the local horizon of `observer`, degrees.
pub fn elevation_deg(observer: &Vector3<f64>, target: &Vector3<f64>) -> f64 {
    let los = target - observer;
    let up = observer.normalize();
    (los.dot(&up) / los.norm()).clamp(-1.0, 1.0).asin().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub slant_range_km: f64,
    /// LoS propagation delay, seconds.
    pub tau_min: f64,
    /// Satellite-motion Doppler at the carrier, Hz.
    pub doppler_hz: f64,
    /// d(range)/dt, km/s.
    pub range_rate_km_s: f64,
    pub theta_x: f64,
    pub theta_y: f64,
}

/// Delay, Doppler and departure angles from `sat` to a static user.
///
/// The angles are taken in the satellite body frame: `theta_y` is measured
/// from the along-track (vertical array) axis and `theta_x` is the azimuth
/// around it, from cross-track toward nadir, so that the array phase
/// progressions are `cos θʸ` and `sin θʸ cos θˣ`.
pub fn link_geometry(sat: &SatelliteState, user: &Vector3<f64>, f0_hz: f64) -> Result<LinkGeometry> {
    let d = sat.position - user;
    let range = d.norm();
    if !(range > 1e-9) {
        return Err(Error::InvalidInput("satellite and user positions coincide".into()));
    }
    let range_rate = d.dot(&sat.velocity) / range;
    let to_user = -d / range;
    let body = sat.body_frame.transpose() * to_user;
    Ok(LinkGeometry {
        slant_range_km: range,
        tau_min: range / SPEED_OF_LIGHT_KM_S,
        doppler_hz: -f0_hz * range_rate / SPEED_OF_LIGHT_KM_S,
        range_rate_km_s: range_rate,
        theta_x: body.z.atan2(body.y),
        theta_y: body.x.clamp(-1.0, 1.0).acos(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceSetup {
    pub constellation: ConstellationConfig,
    pub radius_km: f64,
    /// Number of closest satellites from which the pair is drawn.
    pub n_coop: usize,
    pub epoch: f64,
}

impl Default for IndependenceSetup {
    fn default() -> Self {
        Self {
            constellation: ConstellationConfig::default(),
            radius_km: 800.0,
            n_coop: 5,
            epoch: 0.0,
        }
    }
}

/// One draw of the inter-satellite delay-difference experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDraw {
    pub sat_pair: (usize, usize),
    pub user_pair: (Vector3<f64>, Vector3<f64>),
    /// `|(τ_{s1,l} − τ_{s1,k}) − (τ_{s2,l} − τ_{s2,k})|`, seconds.
    pub delta_tau: f64,
}

/// Draws `n_trials` delay differences between the interference paths of two
/// random users through two random cooperating satellites.
pub fn delay_difference_draws(
    setup: &IndependenceSetup,
    n_trials: usize,
    seed: u64,
) -> Result<(Vec<SatelliteState>, Vec<DelayDraw>)> {
    if n_trials == 0 {
        return Err(Error::InvalidInput("n_trials must be at least 1".into()));
    }
    if setup.n_coop < 2 {
        return Err(Error::InvalidInput("need at least two cooperating satellites".into()));
    }
    let states = build_constellation(&setup.constellation, setup.epoch)?;
    let r_e = setup.constellation.earth_radius_km;
    let mut draws = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let mut rng = derived_rng(seed, &[t as u64]);
        let region = sample_region(rng.random(), &setup.constellation, setup.radius_km, 2)?;
        let center = region.center.to_ecef(r_e);
        let sel = select_satellites(&states, &center, setup.n_coop)?;
        let i1 = rng.random_range(0..sel.len());
        let mut i2 = rng.random_range(0..sel.len() - 1);
        if i2 >= i1 {
            i2 += 1;
        }
        let (s1, s2) = (sel[i1], sel[i2]);
        let users = region.user_ecef(r_e);
        let (uk, ul) = (users[0], users[1]);
        let tau = |s: usize, u: &Vector3<f64>| (states[s].position - u).norm() / SPEED_OF_LIGHT_KM_S;
        let delta_tau = ((tau(s1, &ul) - tau(s1, &uk)) - (tau(s2, &ul) - tau(s2, &uk))).abs();
        draws.push(DelayDraw {
            sat_pair: (s1, s2),
            user_pair: (uk, ul),
            delta_tau,
        });
    }
    Ok((states, draws))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
}

impl ProbabilityEstimate {
    pub fn from_hits(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        let stderr = (p * (1.0 - p) / n as f64).sqrt();
        ProbabilityEstimate {
            probability: p,
            stderr,
            ci95: ((p - 1.96 * stderr).max(0.0), (p + 1.96 * stderr).min(1.0)),
        }
    }
}

/// Probability that two satellites' interference copies of the same user
/// stream arrive more than `threshold_s` apart.
pub fn independence_probability(
    setup: &IndependenceSetup,
    threshold_s: f64,
    n_trials: usize,
    seed: u64,
) -> Result<ProbabilityEstimate> {
    let (_, draws) = delay_difference_draws(setup, n_trials, seed)?;
    Ok(probability_above(&draws, threshold_s))
}

pub fn probability_above(draws: &[DelayDraw], threshold_s: f64) -> ProbabilityEstimate {
    let hits = draws.iter().filter(|d| d.delta_tau > threshold_s).count();
    ProbabilityEstimate::from_hits(hits, draws.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(inclination: f64) -> ConstellationConfig {
        ConstellationConfig {
            num_planes: 1,
            sats_per_plane: 1,
            inclination_deg: inclination,
            phasing_factor: 0,
            ..Default::default()
        }
    }

    #[test]
    fn table_constellation_has_circular_orbits() {
        let cfg = ConstellationConfig::default();
        let states = build_constellation(&cfg, 0.0).unwrap();
        assert_eq!(states.len(), 1680);
        let energy0 = cfg.orbital_speed_km_s().powi(2) / 2.0 - MU_EARTH_KM3_S2 / 6971.0;
        for st in &states {
            assert!((st.position.norm() - 6971.0).abs() < 1e-6);
            assert!(st.position.dot(&st.velocity).abs() < 1e-9 * st.position.norm() * st.velocity.norm());
            let e = st.velocity.norm_squared() / 2.0 - MU_EARTH_KM3_S2 / st.position.norm();
            assert!(((e - energy0) / energy0).abs() < 1e-9);
            let gram = st.body_frame.transpose() * st.body_frame;
            assert!((gram - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn orbital_speed_matches_vis_viva() {
        // sqrt(mu / r) for r = 6371 + 600 km.
        let oracle = (398_600.441_8f64 / 6971.0).sqrt();
        assert_relative_eq!(oracle, 7.5617, epsilon = 1e-3);
        let states = build_constellation(&ConstellationConfig::default(), 123.0).unwrap();
        for st in states.iter().step_by(97) {
            assert!((st.velocity.norm() - oracle).abs() < 1e-3);
        }
    }

    #[test]
    fn degenerate_constellation_sits_on_reference_longitude() {
        let states = build_constellation(&single(0.0), 0.0).unwrap();
        assert_eq!(states.len(), 1);
        let p = states[0].position;
        assert_relative_eq!(p.x, 6971.0, epsilon = 1e-9);
        assert!(p.y.abs() < 1e-9 && p.z.abs() < 1e-9);
    }

    #[test]
    fn phasing_factor_out_of_range_rejected() {
        let cfg = ConstellationConfig {
            phasing_factor: 28,
            ..Default::default()
        };
        assert!(matches!(build_constellation(&cfg, 0.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn walker_planes_and_slots_equally_spaced() {
        let cfg = ConstellationConfig {
            num_planes: 4,
            sats_per_plane: 6,
            phasing_factor: 2,
            ..Default::default()
        };
        let states = build_constellation(&cfg, 0.0).unwrap();
        // consecutive in-plane slots are 60 deg apart
        let a = central_angle(&states[0].position, &states[1].position);
        assert_relative_eq!(a, PI / 3.0, epsilon = 1e-12);
        // plane normals are 90 deg apart in RAAN
        let n0 = states[0].position.cross(&states[0].velocity).normalize();
        let n1 = states[6].position.cross(&states[6].velocity).normalize();
        let node0 = Vector3::z().cross(&n0).normalize();
        let node1 = Vector3::z().cross(&n1).normalize();
        assert_relative_eq!(central_angle(&node0, &node1), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn region_users_inside_cap_and_deterministic() {
        let cfg = ConstellationConfig::default();
        let r1 = sample_region(42, &cfg, 800.0, 48).unwrap();
        let r2 = sample_region(42, &cfg, 800.0, 48).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.user_positions.len(), 48);
        let c = r1.center.to_ecef(1.0);
        for u in &r1.user_positions {
            let d = central_angle(&c, &u.to_ecef(1.0)) * cfg.earth_radius_km;
            assert!(d <= 800.0 + 1e-6, "{d}");
        }
        assert!(r1.center.lat_deg.abs() <= 53.0 + 1e-9);
    }

    #[test]
    fn zero_radius_collapses_to_center() {
        let cfg = ConstellationConfig::default();
        let r = sample_region(3, &cfg, 0.0, 5).unwrap();
        let c = r.center.to_ecef(1.0);
        for u in &r.user_positions {
            assert!(central_angle(&c, &u.to_ecef(1.0)) < 1e-12);
        }
    }

    #[test]
    fn cap_mean_distance_matches_rejection_sampling() {
        use crate::rng::rng_from_seed;
        let cfg = ConstellationConfig::default();
        let radius = 800.0;
        let analytic = cap_mean_distance_km(radius, cfg.earth_radius_km);

        // rejection oracle: uniform points on the sphere kept when inside the cap
        let mut rng = rng_from_seed(11);
        let alpha = radius / cfg.earth_radius_km;
        let (mut sum, mut n) = (0.0, 0usize);
        while n < 100_000 {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let rr = (1.0 - z * z).sqrt();
            let p = Vector3::new(rr * phi.cos(), rr * phi.sin(), z);
            let ang = central_angle(&Vector3::z(), &p);
            if ang <= alpha {
                sum += ang * cfg.earth_radius_km;
                n += 1;
            }
        }
        let rejection = sum / n as f64;
        assert!(((rejection - analytic) / analytic).abs() < 0.01);

        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..100u64 {
            let r = sample_region(seed, &cfg, radius, 1000).unwrap();
            let c = r.center.to_ecef(1.0);
            for u in &r.user_positions {
                total += central_angle(&c, &u.to_ecef(1.0)) * cfg.earth_radius_km;
                count += 1;
            }
        }
        let empirical = total / count as f64;
        assert!(((empirical - analytic) / analytic).abs() < 0.01, "{empirical} vs {analytic}");
    }

    #[test]
    fn selection_matches_brute_force_sort() {
        let cfg = ConstellationConfig::default();
        let states = build_constellation(&cfg, 0.0).unwrap();
        let region = sample_region(5, &cfg, 800.0, 1).unwrap();
        let c = region.center.to_ecef(cfg.earth_radius_km);
        let sel = select_satellites(&states, &c, 5).unwrap();
        let mut all: Vec<(f64, usize)> = states
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.position - c).norm(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let expected: Vec<usize> = all.iter().take(5).map(|x| x.1).collect();
        assert_eq!(sel, expected);
        let ranges: Vec<f64> = sel.iter().map(|&i| (states[i].position - c).norm()).collect();
        assert!(ranges.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn selection_is_permutation_invariant() {
        let cfg = ConstellationConfig {
            num_planes: 6,
            sats_per_plane: 10,
            ..Default::default()
        };
        let states = build_constellation(&cfg, 0.0).unwrap();
        let c = sample_region(9, &cfg, 800.0, 1).unwrap().center.to_ecef(cfg.earth_radius_km);
        let sel = select_satellites(&states, &c, 4).unwrap();
        let ids: Vec<(usize, usize)> = sel.iter().map(|&i| (states[i].plane_index, states[i].slot_index)).collect();
        let mut shuffled = states.clone();
        shuffled.reverse();
        shuffled.rotate_left(17);
        let sel2 = select_satellites(&shuffled, &c, 4).unwrap();
        let ids2: Vec<(usize, usize)> =
            sel2.iter().map(|&i| (shuffled[i].plane_index, shuffled[i].slot_index)).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn selection_edge_cases() {
        let states = build_constellation(&single(0.0), 0.0).unwrap();
        assert_eq!(select_satellites(&states, &Vector3::new(6371.0, 0.0, 0.0), 1).unwrap(), vec![0]);
        assert!(select_satellites(&states, &Vector3::x(), 0).is_err());
        assert!(select_satellites(&states, &Vector3::x(), 2).is_err());
    }

    #[test]
    fn zenith_link_delay_and_doppler() {
        let states = build_constellation(&single(0.0), 0.0).unwrap();
        let user = Vector3::new(EARTH_RADIUS_KM, 0.0, 0.0);
        let g = link_geometry(&states[0], &user, 2e9).unwrap();
        // 600 km / c
        assert!((g.tau_min - 600e3 / 299_792_458.0).abs() < 1e-9);
        assert!((g.tau_min - 2.00139e-3).abs() < 1e-8);
        assert!(g.doppler_hz.abs() < 1e-6);
        assert_relative_eq!(g.theta_y, PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(g.theta_x, PI / 2.0, epsilon = 1e-12);
        assert!(link_geometry(&states[0], &states[0].position, 2e9).is_err());
    }

    #[test]
    fn doppler_bounded_and_peak_matches_horizon_geometry() {
        let cfg = single(0.0);
        let f0 = 2e9;
        let user = Vector3::new(EARTH_RADIUS_KM, 0.0, 0.0);
        let r = cfg.orbit_radius_km();
        let v = cfg.orbital_speed_km_s();
        let period = 2.0 * PI * r / v;
        let mut max_doppler: f64 = 0.0;
        let steps = 200_000;
        for i in 0..steps {
            let t = period * (i as f64 / steps as f64 - 0.5);
            let st = &build_constellation(&cfg, t).unwrap()[0];
            if elevation_deg(&user, &st.position) < 0.0 {
                continue;
            }
            let g = link_geometry(st, &user, f0).unwrap();
            assert!(g.doppler_hz.abs() <= f0 * v / SPEED_OF_LIGHT_KM_S + 1e-9);
            max_doppler = max_doppler.max(g.doppler_hz.abs());
        }
        // two-body peak at the horizon: f0 v (R / r) / c
        let oracle = f0 * v * (EARTH_RADIUS_KM / r) / SPEED_OF_LIGHT_KM_S;
        assert!((max_doppler - oracle).abs() / oracle < 1e-3, "{max_doppler} vs {oracle}");
        assert!(max_doppler > 45e3 && max_doppler < 51e3);
    }

    #[test]
    fn range_rate_matches_finite_difference() {
        let cfg = ConstellationConfig::default();
        let user = sample_region(4, &cfg, 800.0, 1).unwrap().user_positions[0].to_ecef(cfg.earth_radius_km);
        let dt = 1e-3;
        for idx in [0usize, 100, 901] {
            let a = &build_constellation(&cfg, 10.0).unwrap()[idx];
            let b = &build_constellation(&cfg, 10.0 + dt).unwrap()[idx];
            let c = &build_constellation(&cfg, 10.0 - dt).unwrap()[idx];
            let g = link_geometry(a, &user, 2e9).unwrap();
            let fd = ((b.position - user).norm() - (c.position - user).norm()) / (2.0 * dt);
            assert!((fd - g.range_rate_km_s).abs() <= 1e-6 * g.range_rate_km_s.abs().max(1.0));
        }
    }

    #[test]
    fn independence_probability_limits_and_monotonicity() {
        let setup = IndependenceSetup::default();
        let (_, draws) = delay_difference_draws(&setup, 300, 17).unwrap();
        assert_eq!(probability_above(&draws, 0.0).probability, 1.0);
        assert_eq!(probability_above(&draws, f64::INFINITY).probability, 0.0);
        let mut last = 1.0;
        for i in 0..40 {
            let p = probability_above(&draws, i as f64 * 2e-6).probability;
            assert!(p <= last);
            last = p;
        }
    }
}
