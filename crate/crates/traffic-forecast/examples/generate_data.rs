//! Synthesize a small traffic dataset and write it in the CSV formats the
//! rest of the toolchain consumes.
//!
//! Run with: cargo run --example generate_data

use traffic_forecast::pipeline::{synthesize_traffic, write_catalog_csv, write_series_csv, SyntheticConfig};

fn main() -> traffic_forecast::Result<()> {
    let config = SyntheticConfig::new(4, 2, 4, 4, 42);
    let series = synthesize_traffic(&config)?;

    let dir = std::env::temp_dir().join("traffic-forecast-example");
    std::fs::create_dir_all(&dir)?;
    write_series_csv(&series, &dir.join("traffic.csv"), &["seed=42".into()])?;
    write_catalog_csv(&series.services, &dir.join("catalog.csv"))?;

    println!(
        "wrote {} bins x {} services x {} antennas to {}",
        series.bins(),
        series.services.len(),
        series.antennas.len(),
        dir.display()
    );
    let shares = config.service_shares();
    for (svc, share) in series.services.iter().zip(shares) {
        println!("  {} ({}, {}): {:.1}% of volume", svc.id, svc.name, svc.category, 100.0 * share);
    }
    Ok(())
}
