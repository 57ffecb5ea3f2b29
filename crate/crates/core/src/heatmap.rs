//! Hot-spot rasters from released locations via isotropic Gaussian KDE.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let b = Self { xmin, xmax, ymin, ymax };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax].iter().all(|v| v.is_finite());
        if !finite || self.xmax <= self.xmin || self.ymax <= self.ymin {
            return Err(Error::InvalidInput(format!("degenerate grid bounds {self:?}")));
        }
        Ok(())
    }

    /// Bounding box of `points` padded by `margin` on every side.
    pub fn covering(points: &[GeoPoint], margin: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("no points to cover".into()));
        }
        let mut b = Self {
            xmin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymin: f64::INFINITY,
            ymax: f64::NEG_INFINITY,
        };
        for p in points {
            b.xmin = b.xmin.min(p.x);
            b.xmax = b.xmax.max(p.x);
            b.ymin = b.ymin.min(p.y);
            b.ymax = b.ymax.max(p.y);
        }
        Self::new(b.xmin - margin, b.xmax + margin, b.ymin - margin, b.ymax + margin)
    }
}

/// Conventional small and large bandwidths for a utility radius `r`.
pub fn default_bandwidths(r: f64) -> (f64, f64) {
    (0.5 * r, 2.0 * r)
}

/// KDE intensities at cell centres, row-major with `y` rows and `x` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatGrid {
    pub bounds: Bounds,
    pub nx: usize,
    pub ny: usize,
    pub bandwidth: f64,
    pub values: Vec<f64>,
}

impl HeatGrid {
    pub fn cell_width(&self) -> f64 {
        (self.bounds.xmax - self.bounds.xmin) / self.nx as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.bounds.ymax - self.bounds.ymin) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> GeoPoint {
        GeoPoint::new(
            self.bounds.xmin + (ix as f64 + 0.5) * self.cell_width(),
            self.bounds.ymin + (iy as f64 + 0.5) * self.cell_height(),
        )
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    /// Integral of the surface, approximated by the midpoint rule.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// `(ix, iy)` of the largest cell; first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.nx, best / self.nx)
    }
}

/// Evaluates `Σ_i (2πσ²)⁻¹ exp(−|c − p_i|² / 2σ²)` at every cell centre `c`.
pub fn render_heatmap(
    points: &[GeoPoint],
    bandwidth: f64,
    bounds: Bounds,
    resolution: (usize, usize),
) -> Result<HeatGrid> {
    if points.is_empty() {
        return Err(Error::InvalidInput("heat map needs at least one point".into()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    bounds.validate()?;
    let (nx, ny) = resolution;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidInput("grid resolution must be at least 1x1".into()));
    }
    let mut grid = HeatGrid { bounds, nx, ny, bandwidth, values: vec![0.0; nx * ny] };
    let norm = 1.0 / (2.0 * PI * bandwidth * bandwidth);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let (dx, dy) = (grid.cell_width(), grid.cell_height());
    grid.values.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
        let cy = bounds.ymin + (iy as f64 + 0.5) * dy;
        for (ix, cell) in row.iter_mut().enumerate() {
            let cx = bounds.xmin + (ix as f64 + 0.5) * dx;
            *cell = points
                .iter()
                .map(|p| {
                    let d2 = (cx - p.x).powi(2) + (cy - p.y).powi(2);
                    norm * (-d2 * inv).exp()
                })
                .sum();
        }
    });
    Ok(grid)
}
