//! Forecast quality metrics and the evaluation harness.
//!
//! All metrics run on denormalized volumes and only over grid cells that
//! actually hold an antenna. MAE is reported per prediction step and
//! aggregated; PSNR uses the test set's peak volume; SSIM compares
//! snapshots rescaled to a fixed dynamic range of 2; NMAE normalizes each
//! error by the truth's span over the forecast horizon, per service and
//! per service category.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::AntennaGrid;
use crate::model::{AnyModel, ModelKind};
use crate::pipeline::{ForecastWindow, NormalizationStats, ServiceDesc};
use crate::tensor::Tensor;

/// SSIM stabilizers: c = (k·L)² with k1 = 0.1, k2 = 0.3 and dynamic
/// range L = 2.
pub const SSIM_L: f64 = 2.0;
pub const SSIM_C1: f64 = (0.1 * SSIM_L) * (0.1 * SSIM_L);
pub const SSIM_C2: f64 = (0.3 * SSIM_L) * (0.3 * SSIM_L);
/// MSE floor that caps PSNR for perfect predictions.
pub const PSNR_MSE_FLOOR: f64 = 1e-12;
/// Truth spans below this are treated as degenerate in NMAE.
pub const NMAE_SPAN_FLOOR: f64 = 1e-9;

fn check_set(preds: &[Tensor], truths: &[Tensor], mask: &[bool]) -> Result<(usize, usize, usize)> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::contract("prediction and truth sets must be non-empty and equal length"));
    }
    let shape = preds[0].shape();
    if shape.len() != 4 {
        return Err(Error::dim("expected [K,|S|,Hg,Wg] tensors"));
    }
    for (p, t) in preds.iter().zip(truths) {
        if p.shape() != shape || t.shape() != shape {
            return Err(Error::dim("inconsistent tensor shapes across the set"));
        }
    }
    let plane = shape[2] * shape[3];
    if mask.len() != plane {
        return Err(Error::dim("mask length does not match the grid plane"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::contract("mask excludes every cell"));
    }
    Ok((shape[0], shape[1], plane))
}

/// Mean absolute error per prediction step plus the step average.
pub fn mae(preds: &[Tensor], truths: &[Tensor], mask: &[bool]) -> Result<(Vec<f64>, f64)> {
    let (k, n_s, plane) = check_set(preds, truths, mask)?;
    let cells = mask.iter().filter(|&&m| m).count();
    let mut per_step = vec![0.0; k];
    for (p, t) in preds.iter().zip(truths) {
        for step in 0..k {
            let mut sum = 0.0;
            for s in 0..n_s {
                let off = (step * n_s + s) * plane;
                for c in 0..plane {
                    if mask[c] {
                        sum += (p.data()[off + c] - t.data()[off + c]).abs();
                    }
                }
            }
            per_step[step] += sum / (n_s * cells) as f64;
        }
    }
    for v in &mut per_step {
        *v /= preds.len() as f64;
    }
    let aggregate = per_step.iter().sum::<f64>() / k as f64;
    Ok((per_step, aggregate))
}

/// Peak signal-to-noise ratio in dB over the whole test set:
/// `20·log10(d_max) − 10·log10(MSE)` with `d_max` the highest truth
/// volume and the MSE floored to cap perfect predictions.
pub fn psnr(preds: &[Tensor], truths: &[Tensor], mask: &[bool]) -> Result<f64> {
    let (k, n_s, plane) = check_set(preds, truths, mask)?;
    let cells = mask.iter().filter(|&&m| m).count();
    let mut d_max = f64::NEG_INFINITY;
    let mut sq = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        for i in 0..k * n_s {
            let off = i * plane;
            for c in 0..plane {
                if mask[c] {
                    d_max = d_max.max(t.data()[off + c]);
                    let d = p.data()[off + c] - t.data()[off + c];
                    sq += d * d;
                }
            }
        }
    }
    if d_max <= 0.0 {
        return Err(Error::contract("PSNR needs a positive peak volume"));
    }
    let mse = (sq / (preds.len() * k * n_s * cells) as f64).max(PSNR_MSE_FLOOR);
    Ok(20.0 * d_max.log10() - 10.0 * mse.log10())
}

/// SSIM between two spatial snapshots over the unmasked cells. Inputs are
/// expected on the rescaled dynamic range (see [`ssim_set`]).
pub fn ssim_snapshot(pred: &[f64], truth: &[f64], mask: &[bool]) -> Result<f64> {
    let n = mask.iter().filter(|&&m| m).count();
    if n < 2 {
        return Err(Error::contract("SSIM needs at least 2 unmasked cells"));
    }
    if pred.len() != mask.len() || truth.len() != mask.len() {
        return Err(Error::dim("snapshot length does not match the mask"));
    }
    let nf = n as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for c in 0..mask.len() {
        if mask[c] {
            mx += pred[c];
            my += truth[c];
        }
    }
    mx /= nf;
    my /= nf;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for c in 0..mask.len() {
        if mask[c] {
            let dx = pred[c] - mx;
            let dy = truth[c] - my;
            vx += dx * dx;
            vy += dy * dy;
            cov += dx * dy;
        }
    }
    vx /= nf;
    vy /= nf;
    cov /= nf;
    Ok(((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)))
}

/// Mean SSIM over all windows, steps and services. Volumes are first
/// rescaled by `L / d_max` so every snapshot lives on the dynamic range
/// the stabilizer constants assume.
pub fn ssim_set(preds: &[Tensor], truths: &[Tensor], mask: &[bool]) -> Result<f64> {
    let (k, n_s, plane) = check_set(preds, truths, mask)?;
    let mut d_max = f64::NEG_INFINITY;
    for t in truths {
        for (c, &v) in t.data().iter().enumerate() {
            if mask[c % plane] {
                d_max = d_max.max(v);
            }
        }
    }
    if d_max <= 0.0 {
        return Err(Error::contract("SSIM needs a positive peak volume"));
    }
    let scale = SSIM_L / d_max;
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        for i in 0..k * n_s {
            let off = i * plane;
            let ps: Vec<f64> = p.data()[off..off + plane].iter().map(|v| v * scale).collect();
            let ts: Vec<f64> = t.data()[off..off + plane].iter().map(|v| v * scale).collect();
            total += ssim_snapshot(&ps, &ts, mask)?;
        }
    }
    Ok(total / (preds.len() * k * n_s) as f64)
}

/// NMAE of one channel group: mean over (window, antenna) of the mean
/// absolute error across the horizon divided by the truth's span across
/// the horizon. Returns the mean and the number of excluded degenerate
/// terms.
fn nmae_channel(
    preds: &[Tensor],
    truths: &[Tensor],
    mask: &[bool],
    n_s: usize,
    collect: &[usize],
) -> Result<(f64, usize)> {
    let k = preds[0].shape()[0];
    let plane = mask.len();
    let mut total = 0.0;
    let mut included = 0usize;
    let mut excluded = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        for c in 0..plane {
            if !mask[c] {
                continue;
            }
            let mut err = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for step in 0..k {
                let mut pv = 0.0;
                let mut tv = 0.0;
                for &s in collect {
                    pv += p.data()[(step * n_s + s) * plane + c];
                    tv += t.data()[(step * n_s + s) * plane + c];
                }
                err += (pv - tv).abs();
                lo = lo.min(tv);
                hi = hi.max(tv);
            }
            let span = hi - lo;
            if span < NMAE_SPAN_FLOOR {
                excluded += 1;
            } else {
                total += err / (k as f64 * span);
                included += 1;
            }
        }
    }
    if included == 0 {
        return Err(Error::Numerical(
            "NMAE degenerate: every (window, antenna) term had a flat truth span".into(),
        ));
    }
    Ok((total / included as f64, excluded))
}

/// Per-service NMAE values with their degenerate-term exclusion counts.
pub fn nmae_per_service(
    preds: &[Tensor],
    truths: &[Tensor],
    mask: &[bool],
) -> Result<Vec<(f64, usize)>> {
    let (_, n_s, _) = check_set(preds, truths, mask)?;
    (0..n_s)
        .map(|s| nmae_channel(preds, truths, mask, n_s, &[s]))
        .collect()
}

/// Per-category NMAE: service volumes are summed within each category
/// (prediction and truth alike) before the NMAE computation. Categories
/// are reported in catalog order of first appearance.
pub fn nmae_per_category(
    preds: &[Tensor],
    truths: &[Tensor],
    mask: &[bool],
    services: &[ServiceDesc],
) -> Result<Vec<(String, f64, usize)>> {
    let (_, n_s, _) = check_set(preds, truths, mask)?;
    if services.len() != n_s {
        return Err(Error::contract("catalog length does not match the service axis"));
    }
    for s in services {
        if !crate::pipeline::CATEGORIES.contains(&s.category.as_str()) {
            return Err(Error::contract(format!("unknown category {:?}", s.category)));
        }
    }
    let mut categories: Vec<String> = Vec::new();
    for s in services {
        if !categories.contains(&s.category) {
            categories.push(s.category.clone());
        }
    }
    categories
        .into_iter()
        .map(|cat| {
            let members: Vec<usize> = services
                .iter()
                .enumerate()
                .filter(|(_, s)| s.category == cat)
                .map(|(i, _)| i)
                .collect();
            let (value, excluded) = nmae_channel(preds, truths, mask, n_s, &members)?;
            Ok((cat, value, excluded))
        })
        .collect()
}

/// Full evaluation result for one model on one test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: ModelKind,
    pub config_hash: String,
    pub data_hash: String,
    pub windows: usize,
    /// Bytes per 5-minute bin, one entry per prediction step.
    pub mae_per_step: Vec<f64>,
    pub mae: f64,
    /// The same aggregate error expressed as a rate (volume / 300 s).
    pub mae_bytes_per_sec: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// `(service_id, nmae, excluded_terms)` per service.
    pub nmae_per_service: Vec<(String, f64, usize)>,
    /// `(category, nmae, excluded_terms)` per catalog category.
    pub nmae_per_category: Vec<(String, f64, usize)>,
}

/// Forecast every test window, denormalize, and compute all metrics.
pub fn evaluate(
    model: &AnyModel,
    windows: &[ForecastWindow],
    stats: &NormalizationStats,
    grid: &AntennaGrid,
    services: &[ServiceDesc],
    data_hash: &str,
) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let mask = grid.occupancy_mask();
    let mut preds = Vec::with_capacity(windows.len());
    let mut truths = Vec::with_capacity(windows.len());
    for w in windows {
        preds.push(stats.denormalize(&model.forecast(&w.input)?)?);
        truths.push(stats.denormalize(&w.target)?);
    }
    let (mae_per_step, mae_total) = mae(&preds, &truths, &mask)?;
    let nmae_s = nmae_per_service(&preds, &truths, &mask)?;
    if services.len() != nmae_s.len() {
        return Err(Error::contract("catalog length does not match the service axis"));
    }
    Ok(EvalReport {
        model_kind: model.kind(),
        config_hash: crate::checkpoint::config_hash(&model.config()),
        data_hash: data_hash.to_string(),
        windows: windows.len(),
        mae: mae_total,
        mae_bytes_per_sec: mae_total / 300.0,
        mae_per_step,
        psnr_db: psnr(&preds, &truths, &mask)?,
        ssim: ssim_set(&preds, &truths, &mask)?,
        nmae_per_service: services
            .iter()
            .zip(nmae_s)
            .map(|(svc, (v, ex))| (svc.id.clone(), v, ex))
            .collect(),
        nmae_per_category: nmae_per_category(&preds, &truths, &mask, services)?,
    })
}

impl EvalReport {
    /// Machine-readable form: `metric,scope,step,value` rows. Aggregate
    /// rows leave the step column empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,scope,step,value\n");
        for (k, v) in self.mae_per_step.iter().enumerate() {
            out.push_str(&format!("mae,step,{},{v}\n", k + 1));
        }
        out.push_str(&format!("mae,aggregate,,{}\n", self.mae));
        out.push_str(&format!("mae_bytes_per_sec,aggregate,,{}\n", self.mae_bytes_per_sec));
        out.push_str(&format!("psnr_db,aggregate,,{}\n", self.psnr_db));
        out.push_str(&format!("ssim,aggregate,,{}\n", self.ssim));
        for (id, v, _) in &self.nmae_per_service {
            out.push_str(&format!("nmae,service:{id},,{v}\n"));
        }
        for (id, _, ex) in &self.nmae_per_service {
            out.push_str(&format!("nmae_excluded,service:{id},,{ex}\n"));
        }
        for (cat, v, _) in &self.nmae_per_category {
            out.push_str(&format!("nmae,category:{cat},,{v}\n"));
        }
        for (cat, _, ex) in &self.nmae_per_category {
            out.push_str(&format!("nmae_excluded,category:{cat},,{ex}\n"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model: {}\n", self.model_kind));
        out.push_str(&format!("config hash: {}\n", self.config_hash));
        out.push_str(&format!("data hash: {}\n", self.data_hash));
        out.push_str(&format!("test windows: {}\n", self.windows));
        out.push_str(&format!(
            "MAE: {:.4} bytes/bin ({:.6} bytes/s)\n",
            self.mae, self.mae_bytes_per_sec
        ));
        out.push_str(&format!("PSNR: {:.3} dB\nSSIM: {:.4}\n", self.psnr_db, self.ssim));
        out.push_str("per-step MAE (bytes/bin):\n");
        for (k, v) in self.mae_per_step.iter().enumerate() {
            out.push_str(&format!("  step {:>2}: {v:.4}\n", k + 1));
        }
        out.push_str("per-service NMAE (excluded degenerate terms):\n");
        for (id, v, ex) in &self.nmae_per_service {
            out.push_str(&format!("  {id}: {v:.4} ({ex})\n"));
        }
        out.push_str("per-category NMAE (excluded degenerate terms):\n");
        for (cat, v, ex) in &self.nmae_per_category {
            out.push_str(&format!("  {cat}: {v:.4} ({ex})\n"));
        }
        out
    }
}
