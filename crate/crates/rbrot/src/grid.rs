//! Structured-grid geometry.
//!
//! The fluid domain is the box [-r,r]^2 x (0,1), discretized by a uniform
//! cell-centered lattice with MAC staggering for velocities. The slab
//! variant keeps a single cell in x2 and treats every field as invariant
//! in that direction while retaining all three velocity components.

use crate::error::{Error, Result};

/// Horizontal cross-section handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Full box [-r,r]^2 x (0,1).
    Box,
    /// Invariant in x2: ny = 1, no y-boundaries, all velocity components kept.
    Slab,
}

/// Uniform grid specification. Vertical extent is fixed to (0,1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Horizontal half-width.
    pub r: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub geometry: Geometry,
}

impl GridSpec {
    pub fn new_box(r: f64, nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let g = GridSpec { r, nx, ny, nz, geometry: Geometry::Box };
        g.validate()?;
        Ok(g)
    }

    pub fn new_slab(r: f64, nx: usize, nz: usize) -> Result<Self> {
        let g = GridSpec { r, nx, ny: 1, nz, geometry: Geometry::Slab };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Config(format!("grid half-width r must be positive, got {}", self.r)));
        }
        if self.nx < 4 || self.nz < 4 {
            return Err(Error::Config(format!(
                "nx and nz must be at least 4, got nx={} nz={}",
                self.nx, self.nz
            )));
        }
        match self.geometry {
            Geometry::Box => {
                if self.ny < 4 {
                    return Err(Error::Config(format!("box geometry needs ny >= 4, got {}", self.ny)));
                }
            }
            Geometry::Slab => {
                if self.ny != 1 {
                    return Err(Error::Config(format!("slab geometry needs ny = 1, got {}", self.ny)));
                }
            }
        }
        Ok(())
    }

    pub fn is_slab(&self) -> bool {
        self.geometry == Geometry::Slab
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.r / self.nx as f64
    }

    /// In slab mode the single y-cell spans the nominal width 2r so that
    /// volumes stay meaningful; derivatives in y are identically zero.
    pub fn dy(&self) -> f64 {
        2.0 * self.r / self.ny as f64
    }

    pub fn dz(&self) -> f64 {
        1.0 / self.nz as f64
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx() * self.dy() * self.dz()
    }

    pub fn domain_volume(&self) -> f64 {
        (2.0 * self.r) * (2.0 * self.r) * 1.0
    }

    /// Cell-center coordinate of cell (i, j, k), x-fastest ordering.
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.xc(i), self.yc(j), self.zc(k)]
    }

    pub fn xc(&self, i: usize) -> f64 {
        -self.r + (i as f64 + 0.5) * self.dx()
    }

    pub fn yc(&self, j: usize) -> f64 {
        -self.r + (j as f64 + 0.5) * self.dy()
    }

    pub fn zc(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dz()
    }

    /// x-coordinate of the i-th x-face (i = 0..=nx).
    pub fn xf(&self, i: usize) -> f64 {
        -self.r + i as f64 * self.dx()
    }

    pub fn yf(&self, j: usize) -> f64 {
        -self.r + j as f64 * self.dy()
    }

    pub fn zf(&self, k: usize) -> f64 {
        k as f64 * self.dz()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    /// Smallest spacing, used by CFL estimates.
    pub fn min_spacing(&self) -> f64 {
        if self.is_slab() {
            self.dx().min(self.dz())
        } else {
            self.dx().min(self.dy()).min(self.dz())
        }
    }
}
