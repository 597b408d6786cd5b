//! 8-bit grayscale PGM (P5) renderings.
//!
//! Reconstructions render on a log scale over a 50 dB range relative to the
//! map peak; segmentation-style maps render linearly over [0, 1].

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DB_RANGE: f64 = 50.0;

fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Log-compressed rendering: 0 maps to -`db_range` dB and below, 255 to the
/// peak magnitude of the map. All-zero maps render black.
pub fn write_db_scaled(grid: &Grid, path: &Path, db_range: f64) -> Result<()> {
    let peak = grid.max_abs();
    let bytes: Vec<u8> = grid
        .data
        .iter()
        .map(|&v| {
            if peak == 0.0 || v == 0.0 {
                0
            } else {
                let db = (20.0 * (v.abs() / peak).log10()).clamp(-db_range, 0.0);
                ((db + db_range) / db_range * 255.0).round() as u8
            }
        })
        .collect();
    write_pgm(path, grid.nx, grid.nz, &bytes)
}

/// Linear rendering of a [0, 1] map.
pub fn write_linear(grid: &Grid, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = grid
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(path, grid.nx, grid.nz, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pabayes-pgm-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn db_rendering_hits_both_ends() {
        let mut g = Grid::zeros(2, 2);
        g.data = vec![1.0, 0.1, 1e-6, 0.0];
        let path = tmp("db.pgm");
        write_db_scaled(&g, &path, DB_RANGE).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        let px = &bytes[header_end..];
        assert_eq!(px.len(), 4);
        assert_eq!(px[0], 255); // peak
        assert_eq!(px[1], 153); // -20 dB of 50 dB range
        assert_eq!(px[2], 0); // below -50 dB clamps to black
        assert_eq!(px[3], 0); // exact zero
    }

    #[test]
    fn linear_rendering_clamps() {
        let mut g = Grid::zeros(1, 3);
        g.data = vec![-0.5, 0.5, 2.0];
        let path = tmp("lin.pgm");
        write_linear(&g, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let px = &bytes[bytes.len() - 3..];
        assert_eq!(px, &[0, 128, 255]);
    }
}
