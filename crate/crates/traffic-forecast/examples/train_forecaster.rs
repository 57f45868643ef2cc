//! Train a small ConvLSTM forecaster end to end on synthetic traffic and
//! watch the loss fall.
//!
//! Run with: cargo run --release --example train_forecaster

use traffic_forecast::convlstm::S2SConfig;
use traffic_forecast::grid::{map_antennas_to_grid, project_lonlat};
use traffic_forecast::model::{AnyModel, ModelConfig};
use traffic_forecast::pipeline::{
    chronological_split, synthesize_traffic, window_dataset, NormalizationStats, SyntheticConfig,
};
use traffic_forecast::train::{train, TrainConfig};

fn main() -> traffic_forecast::Result<()> {
    let (t_in, horizon) = (6, 3);
    let series = synthesize_traffic(&SyntheticConfig::new(3, 4, 4, 4, 7))?;
    let sites = project_lonlat(
        &series.antennas.iter().map(|a| (a.id.clone(), a.lon, a.lat)).collect::<Vec<_>>(),
    )?;
    let grid = map_antennas_to_grid(&sites, 4, 4)?;
    let (train_series, _) = chronological_split(&series, 0.8, t_in + horizon)?;
    let stats = NormalizationStats::compute(&train_series);
    let windows = window_dataset(&train_series, &grid, &stats, t_in, horizon, 24)?;

    let mut config = S2SConfig::desk(4, 4, 3, 7);
    config.t_in = t_in;
    config.horizon = horizon;
    config.embed_channels = 8;
    config.hidden_channels = vec![8];
    let mut model = AnyModel::init(&ModelConfig::ConvLstm(config))?;

    let report = train(
        &mut model,
        &windows,
        &TrainConfig { epochs: 10, lr: 1e-3, seed: 7, ..TrainConfig::default() },
    )?;
    println!("trained on {} windows:", windows.len());
    for (epoch, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        println!("  epoch {:>2}: train {t:.4}  val {v:.4}", epoch + 1);
    }
    println!("best val loss {:.4} at epoch {}", report.best_val, report.best_epoch + 1);
    assert!(report.best_val < report.val_loss[0]);
    Ok(())
}
