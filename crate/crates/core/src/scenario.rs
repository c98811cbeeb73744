//! Random drops: a service region, its serving satellites, and the
//! statistical CSI that follows from the link budget.

use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_watts, link_budget_scsi, ArrayGeometry, LinkBudgetConfig, ScenarioScsi};
use crate::error::{Error, Result};
use crate::geometry::{
    build_constellation, link_geometry, sample_region, select_satellites_masked, ConstellationConfig, SatelliteState,
    ServiceRegion,
};
use crate::rng::{derive_seed, derived_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub constellation: ConstellationConfig,
    /// Constellation epoch, seconds.
    pub epoch_s: f64,
    pub region_radius_km: f64,
    pub num_users: usize,
    pub num_sats: usize,
    pub n_v: usize,
    pub n_h: usize,
    /// Elevation mask seen from the region center; `None` keeps every satellite.
    pub min_elevation_deg: Option<f64>,
    /// Per-satellite budget, identical for all satellites.
    pub p_tx_dbm: f64,
    pub link: LinkBudgetConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            constellation: ConstellationConfig::default(),
            epoch_s: 0.0,
            region_radius_km: 800.0,
            num_users: 48,
            num_sats: 5,
            n_v: 10,
            n_h: 10,
            min_elevation_deg: None,
            p_tx_dbm: 35.0,
            link: LinkBudgetConfig::default(),
        }
    }
}

/// One drop, ready for the solvers.
#[derive(Debug, Clone)]
pub struct Drop {
    pub region: ServiceRegion,
    /// Constellation indices, closest to the region center first.
    pub satellites: Vec<usize>,
    pub scsi: ScenarioScsi,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.constellation.validate()?;
        self.link.validate()?;
        self.array()?;
        if self.num_users == 0 || self.num_sats == 0 {
            return Err(Error::InvalidConfig("need at least one user and one satellite".into()));
        }
        if !(self.region_radius_km >= 0.0) {
            return Err(Error::InvalidConfig("region radius must be non-negative".into()));
        }
        if !self.p_tx_dbm.is_finite() {
            return Err(Error::InvalidConfig("p_tx_dbm must be finite".into()));
        }
        Ok(())
    }

    pub fn array(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.n_v, self.n_h)
    }

    pub fn states(&self) -> Result<Vec<SatelliteState>> {
        build_constellation(&self.constellation, self.epoch_s)
    }

    /// Draws region and Rician factors from `seed`; `states` must come from
    /// [`ScenarioConfig::states`].
    pub fn generate(&self, states: &[SatelliteState], seed: u64) -> Result<Drop> {
        let r = self.constellation.earth_radius_km;
        let region = sample_region(derive_seed(seed, &[0]), &self.constellation, self.region_radius_km, self.num_users)?;
        let center = region.center.to_ecef(r);
        let satellites = select_satellites_masked(states, &center, self.num_sats, self.min_elevation_deg)?;
        let users = region.user_ecef(r);
        let mut links = Vec::with_capacity(self.num_users * self.num_sats);
        for u in &users {
            for &s in &satellites {
                links.push(link_geometry(&states[s], u, self.link.carrier_hz)?);
            }
        }
        let mut rng = derived_rng(seed, &[1]);
        let scsi = link_budget_scsi(
            &links,
            self.num_users,
            self.num_sats,
            vec![dbm_to_watts(self.p_tx_dbm); self.num_sats],
            self.array()?,
            &self.link,
            &mut rng,
        )?;
        Ok(Drop { region, satellites, scsi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            num_users: 4,
            num_sats: 3,
            n_v: 2,
            n_h: 2,
            ..Default::default()
        }
    }

    #[test]
    fn drop_is_deterministic_and_sized() {
        let cfg = small();
        let states = cfg.states().unwrap();
        let a = cfg.generate(&states, 9).unwrap();
        let b = cfg.generate(&states, 9).unwrap();
        assert_eq!(a.scsi, b.scsi);
        assert_eq!(a.satellites.len(), 3);
        assert_eq!(a.scsi.stats.len(), 12);
        assert_eq!(a.scsi.power_budget, vec![dbm_to_watts(35.0); 3]);
        let c = cfg.generate(&states, 10).unwrap();
        assert_ne!(a.scsi, c.scsi);
    }

    #[test]
    fn link_snr_is_plausible() {
        // 600 km LEO at 2 GHz: per-element path gain near −148 dB, so with
        // 100 elements and 35 dBm the single-link SNR is tens of dB
        let cfg = ScenarioConfig::default();
        let states = cfg.states().unwrap();
        let d = cfg.generate(&states, 1).unwrap();
        let st = d.scsi.stat(0, 0);
        let snr_db = 10.0 * (st.gamma * d.scsi.power_budget[0] / d.scsi.noise_power[0]).log10();
        assert!((10.0..60.0).contains(&snr_db), "{snr_db}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small();
        cfg.num_users = 0;
        assert!(cfg.validate().is_err());
        let text = "num_users = 4\nbogus = 1\n";
        assert!(toml::from_str::<ScenarioConfig>(text).is_err());
    }
}
