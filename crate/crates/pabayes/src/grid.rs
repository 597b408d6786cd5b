//! Image grids and their physical coordinates.
//!
//! A [`GridSpec`] describes the reconstruction grid: `nz` axial rows of pixel
//! height `dz_mm` (depth increases away from the transducer face at z = 0)
//! and `nx` lateral columns of width `dx_mm`, centered laterally on the
//! array axis. [`Grid`] is a dense row-major `f64` image on that grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reconstruction grid geometry, sizes in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Axial pixel count (depth).
    pub nz: usize,
    /// Lateral pixel count.
    pub nx: usize,
    /// Axial pixel size (mm).
    pub dz_mm: f64,
    /// Lateral pixel size (mm).
    pub dx_mm: f64,
}

impl GridSpec {
    /// Small grid used throughout the test suite; trains in minutes on a CPU.
    pub fn desk_scale() -> Self {
        GridSpec {
            nz: 64,
            nx: 32,
            dz_mm: 0.4,
            dx_mm: 0.4,
        }
    }

    /// Full-scale preset: 512 x 128 pixels at 0.05 x 0.1 mm.
    pub fn full_scale() -> Self {
        GridSpec {
            nz: 512,
            nx: 128,
            dz_mm: 0.05,
            dx_mm: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz < 8 || self.nx < 8 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 8x8, got {}x{}",
                self.nz, self.nx
            )));
        }
        if !(self.dz_mm > 0.0) || !(self.dx_mm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pixel sizes must be positive, got dz={} dx={}",
                self.dz_mm, self.dx_mm
            )));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.nz * self.nx
    }

    /// Axial extent nz*dz (mm).
    pub fn depth_mm(&self) -> f64 {
        self.nz as f64 * self.dz_mm
    }

    /// Lateral extent nx*dx (mm).
    pub fn width_mm(&self) -> f64 {
        self.nx as f64 * self.dx_mm
    }

    /// Physical center of pixel (iz, ix): lateral x centered on the array
    /// axis, depth z starting at dz/2 below the array face.
    pub fn pixel_center_mm(&self, iz: usize, ix: usize) -> (f64, f64) {
        let x = (ix as f64 - (self.nx as f64 - 1.0) / 2.0) * self.dx_mm;
        let z = (iz as f64 + 0.5) * self.dz_mm;
        (x, z)
    }
}

/// Dense row-major nz x nx image.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nz: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(nz: usize, nx: usize) -> Self {
        Grid {
            nz,
            nx,
            data: vec![0.0; nz * nx],
        }
    }

    pub fn from_vec(nz: usize, nx: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nz * nx {
            return Err(Error::ShapeMismatch {
                context: "grid payload",
                expected: format!("{} values", nz * nx),
                got: format!("{}", data.len()),
            });
        }
        Ok(Grid { nz, nx, data })
    }

    #[inline]
    pub fn get(&self, iz: usize, ix: usize) -> f64 {
        self.data[iz * self.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, iz: usize, ix: usize, v: f64) {
        self.data[iz * self.nx + ix] = v;
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.nz == other.nz && self.nx == other.nx
    }

    pub fn check_same_shape(&self, other: &Grid, context: &'static str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{}x{}", self.nz, self.nx),
                got: format!("{}x{}", other.nz, other.nx),
            });
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Grid {
        Grid {
            nz: self.nz,
            nx: self.nx,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape grids.
    pub fn zip(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        debug_assert!(self.same_shape(other));
        Grid {
            nz: self.nz,
            nx: self.nx,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        GridSpec::desk_scale().validate().unwrap();
        GridSpec::full_scale().validate().unwrap();
    }

    #[test]
    fn tiny_grid_rejected() {
        let bad = GridSpec {
            nz: 4,
            nx: 32,
            dz_mm: 0.4,
            dx_mm: 0.4,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pixel_centers_are_symmetric() {
        let spec = GridSpec::desk_scale();
        let (x_first, z_first) = spec.pixel_center_mm(0, 0);
        let (x_last, _) = spec.pixel_center_mm(0, spec.nx - 1);
        assert!((x_first + x_last).abs() < 1e-12);
        assert!((z_first - spec.dz_mm / 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_indexing_roundtrip() {
        let mut g = Grid::zeros(4, 3);
        g.set(2, 1, 7.5);
        assert_eq!(g.get(2, 1), 7.5);
        assert_eq!(g.data[2 * 3 + 1], 7.5);
    }
}
