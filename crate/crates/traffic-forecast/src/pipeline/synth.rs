//! Seeded synthetic traffic generator: antennas on a jittered lattice,
//! service volumes drawn from a power-law popularity profile with a
//! per-service diurnal cycle, spatial hotspots, an autocorrelated demand
//! drift, and multiplicative log-normal noise.
//!
//! The drift is what makes forecasting difficulty grow with the horizon:
//! each service's demand is modulated by an AR(1) process shared across
//! all antennas, whose current state is informative about the next few
//! bins but decays towards the mean, so predictions further out are
//! genuinely harder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{AntennaLocation, ServiceDesc, TrafficSeries, BINS_PER_DAY, CATEGORIES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Knobs of the generator. `grid_height * grid_width` antennas are placed
/// on a jittered lattice so the series maps cleanly onto a grid of the
/// same dimensions.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub services: usize,
    pub days: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Popularity of the r-th service is proportional to `r^-alpha`.
    pub power_law_alpha: f64,
    /// Relative swing of the diurnal cycle, in [0,1).
    pub diurnal_amplitude: f64,
    /// Spatial demand concentration points.
    pub hotspots: usize,
    /// Hotspot radius as a fraction of the covered area's diagonal.
    pub hotspot_width: f64,
    /// Sigma of the multiplicative log-normal noise; 0 disables noise.
    pub noise_scale: f64,
    /// Sigma of the autocorrelated log-normal demand drift (one process
    /// per service, shared across antennas); 0 disables it.
    pub drift_scale: f64,
    /// Correlation time of the drift, in 5-minute bins.
    pub drift_corr_bins: f64,
    /// Antenna displacement from its lattice point, in cell widths.
    pub position_jitter: f64,
    /// Mean volume of the most popular service, bytes per bin per antenna.
    pub base_volume: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(services: usize, days: usize, grid_height: usize, grid_width: usize, seed: u64) -> Self {
        SyntheticConfig {
            services,
            days,
            grid_height,
            grid_width,
            power_law_alpha: 1.2,
            diurnal_amplitude: 0.8,
            hotspots: 3,
            hotspot_width: 0.25,
            noise_scale: 0.2,
            drift_scale: 0.15,
            drift_corr_bins: 24.0,
            position_jitter: 0.3,
            base_volume: 1.0e6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.services == 0 || self.days == 0 || self.grid_height == 0 || self.grid_width == 0 {
            return Err(Error::contract("services, days and grid dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return Err(Error::contract("diurnal amplitude must be in [0,1)"));
        }
        if self.noise_scale < 0.0 || self.position_jitter < 0.0 || self.hotspot_width <= 0.0 {
            return Err(Error::contract("noise, jitter and hotspot width must be nonnegative"));
        }
        if self.drift_scale < 0.0 || self.drift_corr_bins <= 0.0 {
            return Err(Error::contract(
                "drift scale must be nonnegative and its correlation time positive",
            ));
        }
        if self.base_volume <= 0.0 {
            return Err(Error::contract("base volume must be positive"));
        }
        Ok(())
    }

    /// Normalized popularity share of each service (rank-ordered).
    pub fn service_shares(&self) -> Vec<f64> {
        let raw: Vec<f64> = (1..=self.services)
            .map(|r| (r as f64).powf(-self.power_law_alpha))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Approximate degree spans of one 500 m cell near 45° N.
const CELL_DLAT: f64 = 500.0 / 111_320.0;
const CELL_DLON: f64 = 500.0 / 78_715.0;
const ORIGIN_LON: f64 = 8.0;
const ORIGIN_LAT: f64 = 45.0;

/// Generate a fully deterministic series from the config.
pub fn synthesize_traffic(config: &SyntheticConfig) -> Result<TrafficSeries> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (h, w) = (config.grid_height, config.grid_width);
    let n_a = h * w;
    let n_s = config.services;
    let bins = config.days * BINS_PER_DAY;

    // antennas: lattice points plus bounded jitter, so the optimal grid
    // mapping recovers the lattice
    let mut antennas = Vec::with_capacity(n_a);
    for r in 0..h {
        for c in 0..w {
            let jx: f64 = rng.gen_range(-1.0..1.0) * config.position_jitter * 0.49;
            let jy: f64 = rng.gen_range(-1.0..1.0) * config.position_jitter * 0.49;
            antennas.push(AntennaLocation {
                id: format!("a{:03}", r * w + c),
                lon: ORIGIN_LON + (c as f64 + jx) * CELL_DLON,
                lat: ORIGIN_LAT + (r as f64 + jy) * CELL_DLAT,
            });
        }
    }

    let services: Vec<ServiceDesc> = (0..n_s)
        .map(|s| ServiceDesc {
            id: format!("s{s:02}"),
            name: format!("service-{s}"),
            category: CATEGORIES[s % CATEGORIES.len()].to_string(),
        })
        .collect();
    let shares = config.service_shares();
    // stagger the daily peaks across services
    let phases: Vec<f64> = (0..n_s)
        .map(|s| {
            std::f64::consts::TAU * (s as f64 / n_s as f64)
                + rng.gen_range(-0.1..0.1)
        })
        .collect();

    // spatial demand: a floor plus Gaussian hotspots, normalized to mean 1
    // across antennas so base_volume keeps its meaning
    let diag = (((h.max(2) - 1) as f64).hypot((w.max(2) - 1) as f64)).max(1.0);
    let sigma = config.hotspot_width * diag;
    let centers: Vec<(f64, f64)> = (0..config.hotspots)
        .map(|_| {
            (
                rng.gen_range(0.0..(h.max(2) - 1) as f64),
                rng.gen_range(0.0..(w.max(2) - 1) as f64),
            )
        })
        .collect();
    let mut intensity: Vec<f64> = (0..n_a)
        .map(|a| {
            let (r, c) = ((a / w) as f64, (a % w) as f64);
            let peaks: f64 = centers
                .iter()
                .map(|&(cr, cc)| {
                    let d2 = (r - cr).powi(2) + (c - cc).powi(2);
                    (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            0.25 + peaks
        })
        .collect();
    let mean_intensity: f64 = intensity.iter().sum::<f64>() / n_a as f64;
    for v in &mut intensity {
        *v /= mean_intensity;
    }

    let mut volumes = Tensor::zeros(&[bins, n_s, n_a]);
    let data = volumes.data_mut();
    let half_var = config.noise_scale * config.noise_scale / 2.0;
    let drift_half_var = config.drift_scale * config.drift_scale / 2.0;
    let rho = (-1.0 / config.drift_corr_bins).exp();
    let innovation = (1.0 - rho * rho).sqrt();
    let gauss = |rng: &mut ChaCha8Rng| -> f64 {
        let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    // one drift process per service, shared across antennas
    let drifting = config.drift_scale > 0.0;
    let mut drift_state: Vec<f64> = if drifting {
        (0..n_s).map(|_| gauss(&mut rng)).collect()
    } else {
        vec![0.0; n_s]
    };
    for t in 0..bins {
        let day_pos = (t % BINS_PER_DAY) as f64 / BINS_PER_DAY as f64;
        for s in 0..n_s {
            let diurnal = 1.0
                + config.diurnal_amplitude
                    * (std::f64::consts::TAU * day_pos + phases[s]).sin();
            let base = config.base_volume * shares[s] * n_s as f64 * diurnal;
            let drift = if drifting {
                let u = &mut drift_state[s];
                if t > 0 {
                    *u = rho * *u + innovation * gauss(&mut rng);
                }
                (config.drift_scale * *u - drift_half_var).exp()
            } else {
                1.0
            };
            for a in 0..n_a {
                let noise = if config.noise_scale > 0.0 {
                    let z = gauss(&mut rng);
                    (config.noise_scale * z - half_var).exp()
                } else {
                    1.0
                };
                data[(t * n_s + s) * n_a + a] =
                    (base * intensity[a] * drift * noise).max(0.0);
            }
        }
    }

    let series = TrafficSeries {
        start: "2026-03-02T00:00:00Z".parse().expect("fixed start stamp"),
        antennas,
        services,
        volumes,
    };
    series.validate()?;
    Ok(series)
}
