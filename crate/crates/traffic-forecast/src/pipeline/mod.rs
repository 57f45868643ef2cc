//! Measurement data pipeline: ingest or synthesize per-antenna,
//! per-service traffic series, filter inactive antennas, z-score per
//! service, scatter antennas onto the mapped grid, and cut sliding
//! forecast windows.

mod csv_io;
mod synth;

pub use csv_io::{ingest_csv, load_catalog, write_catalog_csv, write_series_csv};
pub use synth::{synthesize_traffic, SyntheticConfig};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::AntennaGrid;
use crate::tensor::Tensor;

/// Length of one measurement bin.
pub const BIN_MINUTES: i64 = 5;
/// Bins per day.
pub const BINS_PER_DAY: usize = 288;

/// One antenna's identity and geographic position (lon/lat degrees).
#[derive(Clone, Debug, PartialEq)]
pub struct AntennaLocation {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
}

/// One mobile service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceDesc {
    pub id: String,
    pub name: String,
    pub category: String,
}

/// Service categories of the catalog format.
pub const CATEGORIES: [&str; 7] = [
    "streaming",
    "social media",
    "web",
    "chat",
    "cloud",
    "gaming",
    "miscellaneous",
];

/// Time-indexed traffic volumes: `volumes[t, s, a]` in bytes per 5-minute
/// bin, timestamps uniform from `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficSeries {
    pub start: DateTime<Utc>,
    pub antennas: Vec<AntennaLocation>,
    pub services: Vec<ServiceDesc>,
    /// `[time, |S|, |A|]`, nonnegative and finite.
    pub volumes: Tensor,
}

impl TrafficSeries {
    pub fn bins(&self) -> usize {
        self.volumes.shape()[0]
    }

    pub fn timestamp(&self, bin: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(BIN_MINUTES * bin as i64)
    }

    pub fn volume(&self, t: usize, s: usize, a: usize) -> f64 {
        self.volumes.at(self.volumes.idx3(t, s, a))
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.volumes.shape();
        if shape.len() != 3 || shape[1] != self.services.len() || shape[2] != self.antennas.len() {
            return Err(Error::contract(format!(
                "volumes shape {shape:?} vs {} services / {} antennas",
                self.services.len(),
                self.antennas.len()
            )));
        }
        if self.volumes.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numerical("negative or non-finite traffic volume".into()));
        }
        Ok(())
    }

    /// Attach names and categories from a service catalog.
    pub fn apply_catalog(&mut self, catalog: &[ServiceDesc]) -> Result<()> {
        for svc in &mut self.services {
            let found = catalog
                .iter()
                .find(|c| c.id == svc.id)
                .ok_or_else(|| Error::contract(format!("service {} missing from catalog", svc.id)))?;
            svc.name = found.name.clone();
            svc.category = found.category.clone();
        }
        Ok(())
    }
}

/// Retain antennas whose fraction of bins with nonzero total volume is at
/// least `threshold`.
pub fn filter_active_antennas(series: &TrafficSeries, threshold: f64) -> Result<TrafficSeries> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::contract("activity threshold must be in (0,1]"));
    }
    let bins = series.bins();
    let n_s = series.services.len();
    let n_a = series.antennas.len();
    let mut keep = Vec::new();
    for a in 0..n_a {
        let active = (0..bins)
            .filter(|&t| (0..n_s).map(|s| series.volume(t, s, a)).sum::<f64>() > 0.0)
            .count();
        if active as f64 / bins as f64 >= threshold {
            keep.push(a);
        }
    }
    if keep.is_empty() {
        return Err(Error::contract("activity filter removed every antenna"));
    }
    let mut data = Vec::with_capacity(bins * n_s * keep.len());
    for t in 0..bins {
        for s in 0..n_s {
            for &a in &keep {
                data.push(series.volume(t, s, a));
            }
        }
    }
    Ok(TrafficSeries {
        start: series.start,
        antennas: keep.iter().map(|&a| series.antennas[a].clone()).collect(),
        services: series.services.clone(),
        volumes: Tensor::new(vec![bins, n_s, keep.len()], data)?,
    })
}

/// Per-service mean and standard deviation, computed on the training split
/// only. Population convention; std floored at 1e-8.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NormalizationStats {
    pub fn compute(series: &TrafficSeries) -> Self {
        let bins = series.bins();
        let n_s = series.services.len();
        let n_a = series.antennas.len();
        let count = (bins * n_a) as f64;
        let mut mean = vec![0.0; n_s];
        let mut std = vec![0.0; n_s];
        for s in 0..n_s {
            let mut sum = 0.0;
            for t in 0..bins {
                for a in 0..n_a {
                    sum += series.volume(t, s, a);
                }
            }
            mean[s] = sum / count;
            let mut var = 0.0;
            for t in 0..bins {
                for a in 0..n_a {
                    let d = series.volume(t, s, a) - mean[s];
                    var += d * d;
                }
            }
            std[s] = (var / count).sqrt().max(STD_FLOOR);
        }
        NormalizationStats { mean, std }
    }

    fn service_axis(&self, t: &Tensor) -> Result<usize> {
        if t.rank() < 3 {
            return Err(Error::dim("expected a [..,|S|,Hg,Wg] tensor"));
        }
        let axis = t.rank() - 3;
        if t.shape()[axis] != self.mean.len() {
            return Err(Error::dim(format!(
                "service axis has {} channels, stats cover {}",
                t.shape()[axis],
                self.mean.len()
            )));
        }
        Ok(axis)
    }

    /// Per-service z-score of a `[|S|,Hg,Wg]` or `[T,|S|,Hg,Wg]` tensor.
    pub fn normalize(&self, t: &Tensor) -> Result<Tensor> {
        self.apply(t, |v, m, s| (v - m) / s)
    }

    /// Exact inverse of [`Self::normalize`].
    pub fn denormalize(&self, t: &Tensor) -> Result<Tensor> {
        self.apply(t, |v, m, s| v * s + m)
    }

    fn apply(&self, t: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        let axis = self.service_axis(t)?;
        let lead: usize = t.shape()[..axis].iter().product();
        let n_s = self.mean.len();
        let plane: usize = t.shape()[axis + 1..].iter().product();
        let mut out = t.clone();
        for l in 0..lead {
            for s in 0..n_s {
                let off = (l * n_s + s) * plane;
                for v in out.data_mut()[off..off + plane].iter_mut() {
                    *v = f(*v, self.mean[s], self.std[s]);
                }
            }
        }
        Ok(out)
    }
}

/// One training/evaluation sample: normalized input and target sequences
/// on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastWindow {
    /// `[T_in,|S|,Hg,Wg]`
    pub input: Tensor,
    /// `[K,|S|,Hg,Wg]`
    pub target: Tensor,
    /// Bin index of the first input snapshot in the source series.
    pub start_bin: usize,
}

/// Scatter one raw (unnormalized) snapshot onto the grid; masked cells
/// stay zero. The scatter is a pure relabeling, so total volume is
/// conserved exactly.
pub fn scatter_snapshot(series: &TrafficSeries, grid: &AntennaGrid, t: usize) -> Result<Tensor> {
    let n_s = series.services.len();
    let mut out = Tensor::zeros(&[n_s, grid.height, grid.width]);
    let plane = grid.height * grid.width;
    for (a, ant) in series.antennas.iter().enumerate() {
        let cell = grid
            .assignments
            .iter()
            .find(|c| c.antenna_id == ant.id)
            .ok_or_else(|| Error::contract(format!("antenna {} missing from grid mapping", ant.id)))?;
        let pos = cell.row * grid.width + cell.col;
        for s in 0..n_s {
            out.data_mut()[s * plane + pos] = series.volume(t, s, a);
        }
    }
    Ok(out)
}

/// Sliding windows at the given stride: inputs of `t_in` snapshots and
/// targets of `k` snapshots, normalized per service, antennas scattered
/// onto the grid.
pub fn window_dataset(
    series: &TrafficSeries,
    grid: &AntennaGrid,
    stats: &NormalizationStats,
    t_in: usize,
    k: usize,
    stride: usize,
) -> Result<Vec<ForecastWindow>> {
    if stride == 0 {
        return Err(Error::contract("stride must be >= 1"));
    }
    let bins = series.bins();
    let span = t_in + k;
    if bins < span {
        return Err(Error::contract(format!(
            "series of {bins} bins is shorter than T_in+K = {span}"
        )));
    }
    // scatter+normalize each bin once, then slice windows
    let mut snapshots = Vec::with_capacity(bins);
    for t in 0..bins {
        let raw = scatter_snapshot(series, grid, t)?;
        snapshots.push(stats.normalize(&raw)?);
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start + span <= bins {
        let input = Tensor::stack(&snapshots[start..start + t_in])?;
        let target = Tensor::stack(&snapshots[start + t_in..start + span])?;
        windows.push(ForecastWindow { input, target, start_bin: start });
        start += stride;
    }
    Ok(windows)
}

/// Contiguous prefix/suffix split at a bin boundary, no shuffling.
/// `min_len` is the shortest usable side (typically `T_in + K`).
pub fn chronological_split(
    series: &TrafficSeries,
    train_frac: f64,
    min_len: usize,
) -> Result<(TrafficSeries, TrafficSeries)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::contract("train fraction must be in (0,1)"));
    }
    let bins = series.bins();
    let split = (bins as f64 * train_frac).round() as usize;
    if split < min_len || bins - split < min_len {
        return Err(Error::contract(format!(
            "split {split}/{} leaves a side shorter than {min_len}",
            bins - split
        )));
    }
    let slice = |from: usize, to: usize| -> Result<TrafficSeries> {
        let n_s = series.services.len();
        let n_a = series.antennas.len();
        let stride = n_s * n_a;
        let data = series.volumes.data()[from * stride..to * stride].to_vec();
        Ok(TrafficSeries {
            start: series.timestamp(from),
            antennas: series.antennas.clone(),
            services: series.services.clone(),
            volumes: Tensor::new(vec![to - from, n_s, n_a], data)?,
        })
    };
    Ok((slice(0, split)?, slice(split, bins)?))
}
