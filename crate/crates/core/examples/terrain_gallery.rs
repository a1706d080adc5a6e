//! Generates every terrain family at a few difficulty levels, prints the
//! parameters that drive each tile and renders grayscale previews.
//!
//! ```text
//! cargo run --example terrain_gallery -- [OUT_DIR]
//! ```

use std::path::PathBuf;

use gaitnav::terrain::{export_png, sample_tile, TerrainConfig, TerrainFamily, Zone};

fn main() -> gaitnav::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gallery".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = TerrainConfig::default();
    let (nx, ny) = cfg.grid_dims();
    println!("tile {} m x {} m, {nx} x {ny} cells of {} m", cfg.length_m, cfg.width_m, cfg.cell_size);

    for family in TerrainFamily::ALL {
        for level in [0, cfg.levels / 2, cfg.levels - 1] {
            let tile = sample_tile(&cfg, level, family, 1)?;
            let f = &tile.field;
            let challenge: Vec<usize> = (0..f.heights.len()).filter(|&i| f.zones[i] == Zone::Challenge).collect();
            let (lo, hi) = challenge
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), &i| (lo.min(f.heights[i]), hi.max(f.heights[i])));
            let holes = f.support.iter().filter(|s| !**s).count();
            let params: Vec<String> = tile.params.iter().map(|p| format!("{}={:.3}", p.name, p.value)).collect();
            println!(
                "{:<6} level {level} d={:.2}  heights [{lo:+.3}, {hi:+.3}] m  gap cells {holes:>5}  {}",
                family.to_string(),
                tile.difficulty,
                params.join(" ")
            );
            export_png(f, &out.join(format!("{family}_{level}.png")))?;
        }
    }
    println!("previews written to {}", out.display());
    Ok(())
}
