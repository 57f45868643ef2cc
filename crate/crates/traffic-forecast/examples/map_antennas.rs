//! Map irregular antenna locations onto a regular grid with the
//! minimum-displacement assignment solver.
//!
//! Run with: cargo run --example map_antennas

use rand::{Rng, SeedableRng};
use traffic_forecast::grid::{map_antennas_to_grid, AntennaSite};

fn main() -> traffic_forecast::Result<()> {
    // a 4x4 lattice of sites at 400 m pitch, each displaced randomly
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let antennas: Vec<AntennaSite> = (0..16)
        .map(|i| AntennaSite {
            id: format!("site-{i:02}"),
            x: (i % 4) as f64 * 400.0 + rng.gen_range(-150.0..150.0),
            y: (i / 4) as f64 * 400.0 + rng.gen_range(-150.0..150.0),
        })
        .collect();

    let grid = map_antennas_to_grid(&antennas, 4, 4)?;
    println!(
        "assigned {} antennas, mean displacement {:.1} m, {} masked cells",
        grid.assignments.len(),
        grid.mean_displacement(),
        grid.masked_cell_count()
    );
    print!("{}", grid.to_table());
    Ok(())
}
