//! Train every trainable architecture briefly on the same small synthetic
//! dataset and rank them against the persistence reference.
//!
//! Run with: cargo run --release --example compare_models

use traffic_forecast::baselines::BaselineConfig;
use traffic_forecast::convlstm::S2SConfig;
use traffic_forecast::grid::{map_antennas_to_grid, project_lonlat};
use traffic_forecast::metrics::evaluate;
use traffic_forecast::model::{AnyModel, ModelConfig, ModelKind};
use traffic_forecast::pipeline::{
    chronological_split, synthesize_traffic, window_dataset, NormalizationStats, SyntheticConfig,
};
use traffic_forecast::train::{train, TrainConfig};

fn main() -> traffic_forecast::Result<()> {
    let (t_in, horizon, h, w) = (6, 3, 3, 3);
    let series = synthesize_traffic(&SyntheticConfig::new(3, 6, h, w, 5))?;
    let sites = project_lonlat(
        &series.antennas.iter().map(|a| (a.id.clone(), a.lon, a.lat)).collect::<Vec<_>>(),
    )?;
    let grid = map_antennas_to_grid(&sites, h, w)?;
    let (train_series, test_series) = chronological_split(&series, 0.8, t_in + horizon)?;
    let stats = NormalizationStats::compute(&train_series);
    let train_windows = window_dataset(&train_series, &grid, &stats, t_in, horizon, 12)?;
    let test_windows = window_dataset(&test_series, &grid, &stats, t_in, horizon, 12)?;

    let services = series.services.len();
    let mut configs: Vec<ModelConfig> = vec![{
        let mut c = S2SConfig::desk(h, w, services, 5);
        c.t_in = t_in;
        c.horizon = horizon;
        c.embed_channels = 8;
        c.hidden_channels = vec![8];
        ModelConfig::ConvLstm(c)
    }];
    for kind in [ModelKind::Mlp, ModelKind::Cnn, ModelKind::Cnn3d, ModelKind::Lstm, ModelKind::Persistence] {
        configs.push(ModelConfig::Baseline(BaselineConfig::desk(kind, h, w, services, t_in, horizon, 5)));
    }

    println!("{:<12} {:>12} {:>8} {:>7}", "model", "MAE", "PSNR", "SSIM");
    for config in configs {
        let mut model = AnyModel::init(&config)?;
        if model.kind().is_trainable() {
            train(
                &mut model,
                &train_windows,
                &TrainConfig { epochs: 8, lr: 1e-3, seed: 5, ..TrainConfig::default() },
            )?;
        }
        let report =
            evaluate(&model, &test_windows, &stats, &grid, &test_series.services, "example")?;
        println!(
            "{:<12} {:>12.1} {:>8.2} {:>7.3}",
            model.kind().to_string(),
            report.mae,
            report.psnr_db,
            report.ssim
        );
    }
    Ok(())
}
