use std::f64::consts::TAU;

use crate::world_map::{normalize_angle, OccupancyGrid, Pose, WorldError};

/// Geometry of the discretized pose space: a regular `nx * ny` spatial grid
/// and `theta_bins` orientation layers. Layer `t` holds heading `t * 2π / T`.
///
/// States are stored layer-major: `index = t * nx * ny + iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub origin: (f64, f64),
    pub theta_bins: usize,
}

impl StateGrid {
    pub fn new(
        nx: usize,
        ny: usize,
        cell_size: f64,
        origin: (f64, f64),
        theta_bins: usize,
    ) -> Result<Self, WorldError> {
        if nx == 0 || ny == 0 || theta_bins == 0 {
            return Err(WorldError::InvalidGeometry(format!(
                "state grid dimensions must be positive, got {nx}x{ny}x{theta_bins}"
            )));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(WorldError::InvalidGeometry(format!("cell size must be positive, got {cell_size}")));
        }
        Ok(StateGrid { nx, ny, cell_size, origin, theta_bins })
    }

    /// Covers the map extent with cells of `cell_size`.
    pub fn covering(map: &OccupancyGrid, cell_size: f64, theta_bins: usize) -> Result<Self, WorldError> {
        let (x0, y0, x1, y1) = map.bounds();
        let nx = cells_spanning(x1 - x0, cell_size);
        let ny = cells_spanning(y1 - y0, cell_size);
        StateGrid::new(nx, ny, cell_size, (x0, y0), theta_bins)
    }

    pub fn layer_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn state_count(&self) -> usize {
        self.layer_len() * self.theta_bins
    }

    pub fn theta_step(&self) -> f64 {
        TAU / self.theta_bins as f64
    }

    pub fn layer_theta(&self, t: usize) -> f64 {
        t as f64 * self.theta_step()
    }

    /// Nearest layer for a heading.
    pub fn theta_bin(&self, theta: f64) -> usize {
        let t = (normalize_angle(theta) / self.theta_step()).round() as usize;
        t % self.theta_bins
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let gx = (x - self.origin.0) / self.cell_size;
        let gy = (y - self.origin.1) / self.cell_size;
        if !(gx >= 0.0 && gy >= 0.0) {
            return None;
        }
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        // points on the far boundary belong to the last cell
        let ix = if ix == self.nx && gx == self.nx as f64 { ix - 1 } else { ix };
        let iy = if iy == self.ny && gy == self.ny as f64 { iy - 1 } else { iy };
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.cell_size,
            self.origin.1 + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn index(&self, ix: usize, iy: usize, t: usize) -> usize {
        t * self.layer_len() + iy * self.nx + ix
    }

    /// Inverse of [`StateGrid::index`].
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let layer = self.layer_len();
        let t = index / layer;
        let rem = index % layer;
        (rem % self.nx, rem / self.nx, t)
    }

    pub fn state_pose(&self, index: usize) -> Pose {
        let (ix, iy, t) = self.coords(index);
        let (x, y) = self.cell_center(ix, iy);
        Pose::new(x, y, self.layer_theta(t))
    }

    /// State index nearest to a pose, if its position is inside the grid.
    pub fn state_of(&self, pose: &Pose) -> Option<usize> {
        let (ix, iy) = self.cell_of(pose.x, pose.y)?;
        Some(self.index(ix, iy, self.theta_bin(pose.theta)))
    }

    /// Per-cell mask of spatial cells whose center lies on a non-occupied map
    /// cell.
    pub fn free_mask(&self, map: &OccupancyGrid) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.layer_len());
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (x, y) = self.cell_center(ix, iy);
                mask.push(map.is_free_at(x, y));
            }
        }
        mask
    }
}

fn cells_spanning(extent: f64, cell: f64) -> usize {
    ((extent / cell) - 1e-9).ceil().max(1.0) as usize
}

/// Number of discrete poses for a rectangular environment at the given
/// spatial and angular resolution.
pub fn state_count(width_m: f64, height_m: f64, cell_m: f64, angular_res_deg: f64) -> u64 {
    let nx = cells_spanning(width_m, cell_m) as u64;
    let ny = cells_spanning(height_m, cell_m) as u64;
    let nt = cells_spanning(360.0, angular_res_deg) as u64;
    nx * ny * nt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_map::Occupancy;

    #[test]
    fn thirty_meter_square_state_count() {
        assert_eq!(state_count(30.0, 30.0, 0.15, 2.0), 7_200_000);
    }

    #[test]
    fn index_round_trip() {
        let g = StateGrid::new(7, 5, 0.2, (1.0, -1.0), 6).unwrap();
        for i in 0..g.state_count() {
            let (ix, iy, t) = g.coords(i);
            assert_eq!(g.index(ix, iy, t), i);
        }
        assert_eq!(g.state_of(&g.state_pose(123)), Some(123));
    }

    #[test]
    fn theta_bins_wrap() {
        let g = StateGrid::new(1, 1, 1.0, (0.0, 0.0), 8).unwrap();
        assert_eq!(g.theta_bin(0.0), 0);
        assert_eq!(g.theta_bin(TAU - 0.01), 0);
        assert_eq!(g.theta_bin(std::f64::consts::FRAC_PI_4 * 3.0), 3);
    }

    #[test]
    fn covering_and_free_mask() {
        let mut map = OccupancyGrid::new(10, 6, 0.1, (0.0, 0.0), Occupancy::Free).unwrap();
        map.fill_rect(0.0, 0.0, 0.3, 0.6, Occupancy::Occupied);
        let g = StateGrid::covering(&map, 0.3, 4).unwrap();
        assert_eq!((g.nx, g.ny), (4, 2));
        let mask = g.free_mask(&map);
        assert!(!mask[0]);
        assert!(mask[1]);
        // the last column's centers (x = 1.05) fall outside the 1 m map
        assert!(!mask[3]);
    }
}
