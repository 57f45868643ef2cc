//! Evaluate the persistence reference on synthetic traffic and print the
//! full metric report (MAE, PSNR, SSIM, per-service and per-category
//! NMAE).
//!
//! Run with: cargo run --example evaluate_metrics

use traffic_forecast::baselines::BaselineConfig;
use traffic_forecast::grid::{map_antennas_to_grid, project_lonlat};
use traffic_forecast::metrics::evaluate;
use traffic_forecast::model::{AnyModel, ModelConfig, ModelKind};
use traffic_forecast::pipeline::{
    chronological_split, synthesize_traffic, window_dataset, NormalizationStats, SyntheticConfig,
};

fn main() -> traffic_forecast::Result<()> {
    let (t_in, horizon) = (12, 12);
    let series = synthesize_traffic(&SyntheticConfig::new(4, 4, 4, 4, 21))?;
    let sites = project_lonlat(
        &series.antennas.iter().map(|a| (a.id.clone(), a.lon, a.lat)).collect::<Vec<_>>(),
    )?;
    let grid = map_antennas_to_grid(&sites, 4, 4)?;
    let (train_series, test_series) = chronological_split(&series, 0.8, t_in + horizon)?;
    let stats = NormalizationStats::compute(&train_series);
    let windows = window_dataset(&test_series, &grid, &stats, t_in, horizon, 4)?;

    let model = AnyModel::init(&ModelConfig::Baseline(BaselineConfig::desk(
        ModelKind::Persistence,
        4,
        4,
        series.services.len(),
        t_in,
        horizon,
        0,
    )))?;
    let report = evaluate(&model, &windows, &stats, &grid, &test_series.services, "example")?;
    print!("{}", report.to_text());
    Ok(())
}
