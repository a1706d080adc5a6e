//! Height-field files.
//!
//! `PATH` holds the heights as little-endian `f32`, row-major with `y` as
//! the row index. `PATH.meta.json` is the metadata record and `PATH.cells`
//! stores one byte per cell: the zone code in the low bits and `0x80` for
//! unsupported cells.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HeightField, TerrainFamily, TerrainTile, Zone};
use crate::error::{Error, Result};

pub const HEIGHTFIELD_FORMAT: &str = "gaitnav-heightfield";
pub const HEIGHTFIELD_VERSION: u32 = 1;

const UNSUPPORTED_BIT: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightFieldMeta {
    pub format: String,
    pub version: u32,
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub length_m: f64,
    pub width_m: f64,
    pub family: TerrainFamily,
    pub level: usize,
    pub difficulty: f64,
    pub seed: u64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn export_heightfield(tile: &TerrainTile, path: &Path) -> Result<()> {
    let f = &tile.field;
    let mut bytes = Vec::with_capacity(f.heights.len() * 4);
    for h in &f.heights {
        bytes.extend_from_slice(&(*h as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;

    let cells: Vec<u8> = f
        .zones
        .iter()
        .zip(&f.support)
        .map(|(z, s)| z.code() | if *s { 0 } else { UNSUPPORTED_BIT })
        .collect();
    fs::write(sidecar(path, ".cells"), cells)?;

    let meta = HeightFieldMeta {
        format: HEIGHTFIELD_FORMAT.into(),
        version: HEIGHTFIELD_VERSION,
        nx: f.nx,
        ny: f.ny,
        cell_size: f.cell_size,
        length_m: f.length_m,
        width_m: f.width_m,
        family: tile.family,
        level: tile.level,
        difficulty: tile.difficulty,
        seed: tile.seed,
        start: tile.start_pos,
        goal: tile.goal_pos,
    };
    fs::write(sidecar(path, ".meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a field written by [`export_heightfield`]. Heights come back at
/// `f32` precision.
pub fn import_heightfield(path: &Path) -> Result<(HeightField, HeightFieldMeta)> {
    let meta: HeightFieldMeta = serde_json::from_slice(&fs::read(sidecar(path, ".meta.json"))?)?;
    if meta.format != HEIGHTFIELD_FORMAT || meta.version != HEIGHTFIELD_VERSION {
        return Err(Error::Schema(format!(
            "expected {HEIGHTFIELD_FORMAT} v{HEIGHTFIELD_VERSION}, found {} v{}",
            meta.format, meta.version
        )));
    }
    let n = meta.nx * meta.ny;
    let raw = fs::read(path)?;
    if raw.len() != n * 4 {
        return Err(Error::Schema(format!(
            "height payload has {} bytes, expected {}",
            raw.len(),
            n * 4
        )));
    }
    let heights = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let cells = fs::read(sidecar(path, ".cells"))?;
    if cells.len() != n {
        return Err(Error::Schema(format!(
            "cell payload has {} bytes, expected {n}",
            cells.len()
        )));
    }
    let mut zones = Vec::with_capacity(n);
    let mut support = Vec::with_capacity(n);
    for b in cells {
        let z = Zone::from_code(b & !UNSUPPORTED_BIT)
            .ok_or_else(|| Error::Schema(format!("bad zone code {b:#x}")))?;
        zones.push(z);
        support.push(b & UNSUPPORTED_BIT == 0);
    }
    let field = HeightField {
        length_m: meta.length_m,
        width_m: meta.width_m,
        cell_size: meta.cell_size,
        nx: meta.nx,
        ny: meta.ny,
        heights,
        support,
        zones,
    };
    Ok((field, meta))
}

/// Grayscale rendering for inspection; unsupported cells are black, the
/// remaining range is stretched over 16..=255.
pub fn export_png(field: &HeightField, path: &Path) -> Result<()> {
    let (lo, hi) = field
        .heights
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)));
    let span = (hi - lo).max(1e-9);
    let mut img = image::GrayImage::new(field.nx as u32, field.ny as u32);
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let i = field.index(ix, iy);
            let v = if field.support[i] {
                16 + ((field.heights[i] - lo) / span * 239.0).round() as u8
            } else {
                0
            };
            // Image rows run top-down; flip so +y points up.
            img.put_pixel(ix as u32, (field.ny - 1 - iy) as u32, image::Luma([v]));
        }
    }
    img.save(path)
        .map_err(|e| Error::Runtime(format!("png export failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{sample_tile, TerrainConfig};

    #[test]
    fn export_import_export_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TerrainConfig::default();
        let tile = sample_tile(&cfg, 6, TerrainFamily::Gap, 3).unwrap();
        let a = dir.path().join("a.bin");
        export_heightfield(&tile, &a).unwrap();
        let (field, meta) = import_heightfield(&a).unwrap();
        assert_eq!(meta.family, TerrainFamily::Gap);
        assert_eq!(field.support, tile.field.support);
        assert_eq!(field.zones, tile.field.zones);

        let again = TerrainTile {
            field,
            ..tile.clone()
        };
        let b = dir.path().join("b.bin");
        export_heightfield(&again, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read(sidecar(&a, ".cells")).unwrap(),
            fs::read(sidecar(&b, ".cells")).unwrap()
        );
    }

    #[test]
    fn wrong_version_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let tile = sample_tile(&TerrainConfig::default(), 0, TerrainFamily::Tilt, 1).unwrap();
        let p = dir.path().join("t.bin");
        export_heightfield(&tile, &p).unwrap();
        let meta_path = sidecar(&p, ".meta.json");
        let text = fs::read_to_string(&meta_path).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&meta_path, text).unwrap();
        assert!(matches!(import_heightfield(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn png_has_grid_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let tile = sample_tile(&TerrainConfig::default(), 3, TerrainFamily::Stair, 1).unwrap();
        let p = dir.path().join("t.png");
        export_png(&tile.field, &p).unwrap();
        let img = image::open(&p).unwrap();
        assert_eq!((img.width(), img.height()), (160, 80));
    }
}
