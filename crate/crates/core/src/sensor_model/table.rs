//! Precomputed expected-distance indices and likelihood rows.
//!
//! `P(s | l)` for a range reading becomes two nested lookups: the expected
//! bin for the state and beam direction, then the likelihood row of that
//! bin.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use super::{beam_distribution, known_obstacle_density, BeamModelParams, Discretization, SensorModelError};
use crate::belief::{LikelihoodSource, StateGrid};
use crate::world_map::{ray_cast, Beam, OccupancyGrid, Pose, WorldError};

pub const TABLE_MAGIC: [u8; 4] = *b"MLST";
pub const TABLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table would hold {entries} entries, above the configured cap of {cap}")]
    TooLarge { entries: usize, cap: usize },
    #[error("beam model row for expected bin {bin} is not a proper distribution")]
    ImproperRow { bin: usize },
    #[error("table angular bins ({table}) must be a positive multiple of the state grid's ({grid})")]
    AngularMismatch { table: usize, grid: usize },
    #[error(transparent)]
    Model(#[from] SensorModelError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("corrupt table blob: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Guard against accidentally huge tables.
#[derive(Debug, Clone, Copy)]
pub struct TableLimits {
    pub max_entries: usize,
}

impl Default for TableLimits {
    fn default() -> Self {
        TableLimits { max_entries: 1 << 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ExpectedIndex {
    Byte(Vec<u8>),
    Wide(Vec<u16>),
}

impl ExpectedIndex {
    fn get(&self, i: usize) -> usize {
        match self {
            ExpectedIndex::Byte(v) => v[i] as usize,
            ExpectedIndex::Wide(v) => v[i] as usize,
        }
    }

    fn len(&self) -> usize {
        match self {
            ExpectedIndex::Byte(v) => v.len(),
            ExpectedIndex::Wide(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorTable {
    params: BeamModelParams,
    grid: StateGrid,
    table_bins: usize,
    free: Vec<bool>,
    expected: ExpectedIndex,
    likelihood: Vec<f64>,
    // derived caches, rebuilt on load
    short: Vec<f64>,
    average: Vec<f64>,
}

/// Builds a table over the map's own cell grid.
pub fn build_sensor_table(
    map: &OccupancyGrid,
    params: &BeamModelParams,
    theta_bins: usize,
) -> Result<SensorTable, TableError> {
    let grid = StateGrid::new(map.width(), map.height(), map.resolution(), map.origin(), theta_bins)?;
    SensorTable::build(map, params, &grid, theta_bins, TableLimits::default())
}

impl SensorTable {
    /// Ray casts a canonical forward beam from every free cell center at each
    /// of `table_bins` headings. `table_bins` must be a multiple of the state
    /// grid's orientation layers.
    pub fn build(
        map: &OccupancyGrid,
        params: &BeamModelParams,
        grid: &StateGrid,
        table_bins: usize,
        limits: TableLimits,
    ) -> Result<Self, TableError> {
        params.validate()?;
        if table_bins == 0 || table_bins % grid.theta_bins != 0 {
            return Err(TableError::AngularMismatch { table: table_bins, grid: grid.theta_bins });
        }
        let layer = grid.layer_len();
        let entries = layer
            .checked_mul(table_bins)
            .ok_or(TableError::TooLarge { entries: usize::MAX, cap: limits.max_entries })?;
        if entries > limits.max_entries {
            return Err(TableError::TooLarge { entries, cap: limits.max_entries });
        }
        let disc = params.discretization();
        let free = grid.free_mask(map);
        let step = std::f64::consts::TAU / table_bins as f64;
        let bins: Vec<u16> = (0..entries)
            .into_par_iter()
            .map(|i| {
                let t = i / layer;
                let c = i % layer;
                if !free[c] {
                    return 0;
                }
                let (x, y) = grid.cell_center(c % grid.nx, c / grid.nx);
                let pose = Pose::new(x, y, t as f64 * step);
                let d = ray_cast(map, &pose, 0.0, params.max_range).expect("free cell centers lie on the map");
                disc.bin(d) as u16
            })
            .collect();
        let expected = if params.n <= 256 {
            ExpectedIndex::Byte(bins.into_iter().map(|b| b as u8).collect())
        } else {
            ExpectedIndex::Wide(bins)
        };
        let likelihood = likelihood_rows(params)?;
        Self::assemble(*params, grid.clone(), table_bins, free, expected, likelihood)
    }

    fn assemble(
        params: BeamModelParams,
        grid: StateGrid,
        table_bins: usize,
        free: Vec<bool>,
        expected: ExpectedIndex,
        likelihood: Vec<f64>,
    ) -> Result<Self, TableError> {
        let short = short_rows(&params)?;
        let mut table = SensorTable {
            params,
            grid,
            table_bins,
            free,
            expected,
            likelihood,
            short,
            average: Vec::new(),
        };
        table.average = table.compute_average();
        Ok(table)
    }

    fn compute_average(&self) -> Vec<f64> {
        let n = self.params.n;
        let layer = self.grid.layer_len();
        let mut hist = vec![0u64; n];
        let mut states = 0u64;
        for t in 0..self.table_bins {
            for c in (0..layer).filter(|&c| self.free[c]) {
                hist[self.expected.get(t * layer + c)] += 1;
                states += 1;
            }
        }
        let mut avg = vec![0.0; n];
        if states == 0 {
            return avg;
        }
        for (k, &h) in hist.iter().enumerate() {
            if h == 0 {
                continue;
            }
            let w = h as f64 / states as f64;
            for (i, a) in avg.iter_mut().enumerate() {
                *a += w * self.likelihood[k * n + i];
            }
        }
        avg
    }

    pub fn params(&self) -> &BeamModelParams {
        &self.params
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn discretization(&self) -> Discretization {
        self.params.discretization()
    }

    pub fn table_bins(&self) -> usize {
        self.table_bins
    }

    pub fn free_mask(&self) -> &[bool] {
        &self.free
    }

    /// True when expected indices are stored one byte per entry.
    pub fn is_byte_indexed(&self) -> bool {
        matches!(self.expected, ExpectedIndex::Byte(_))
    }

    pub fn entries(&self) -> usize {
        self.expected.len()
    }

    pub fn likelihood_row(&self, k: usize) -> &[f64] {
        let n = self.params.n;
        &self.likelihood[k * n..(k + 1) * n]
    }

    /// Table layer for a world-frame beam direction.
    pub fn table_layer(&self, direction: f64) -> usize {
        let step = std::f64::consts::TAU / self.table_bins as f64;
        let t = (crate::world_map::normalize_angle(direction) / step).round() as usize;
        t % self.table_bins
    }

    pub fn expected_bin_at(&self, cell: usize, table_layer: usize) -> usize {
        self.expected.get(table_layer * self.grid.layer_len() + cell)
    }

    fn cell_for(&self, pose: &Pose) -> Result<usize, TableError> {
        let (ix, iy) = self
            .grid
            .cell_of(pose.x, pose.y)
            .ok_or(WorldError::OutOfBounds { x: pose.x, y: pose.y })?;
        Ok(iy * self.grid.nx + ix)
    }

    pub fn expected_bin(&self, pose: &Pose, beam: &Beam) -> Result<usize, TableError> {
        let cell = self.cell_for(pose)?;
        Ok(self.expected_bin_at(cell, self.table_layer(pose.theta + beam.bearing)))
    }

    /// `P(measured | pose)` by two nested lookups.
    pub fn lookup_likelihood(&self, pose: &Pose, beam: &Beam, measured: f64) -> Result<f64, TableError> {
        let k = self.expected_bin(pose, beam)?;
        let i = self.discretization().bin(measured);
        Ok(self.likelihood[k * self.params.n + i])
    }

    /// `P_short(d_i | pose)`: known-obstacle mass strictly beyond the
    /// measured bin.
    pub fn p_short(&self, pose: &Pose, beam: &Beam, measured_bin: usize) -> Result<f64, TableError> {
        let k = self.expected_bin(pose, beam)?;
        Ok(self.short_entry(k, measured_bin))
    }

    pub fn short_entry(&self, expected_bin: usize, measured_bin: usize) -> f64 {
        self.short[expected_bin * self.params.n + measured_bin]
    }

    /// Likelihood averaged over a uniform prior on free states.
    pub fn average_likelihood(&self, measured: f64) -> f64 {
        self.average[self.discretization().bin(measured)]
    }

    pub fn average_row(&self) -> &[f64] {
        &self.average
    }

    /// Likelihood source for one reading against a state grid with the same
    /// spatial layout.
    pub fn beam_likelihood(&self, bearing: f64, measured: f64) -> BeamLikelihood<'_> {
        let n = self.params.n;
        let i = self.discretization().bin(measured);
        let column = (0..n).map(|k| self.likelihood[k * n + i]).collect();
        BeamLikelihood { table: self, layers: self.layer_map(bearing), column }
    }

    /// For each state-grid layer, the table layer seen by a beam at `bearing`.
    pub fn layer_map(&self, bearing: f64) -> Vec<usize> {
        (0..self.grid.theta_bins)
            .map(|t| self.table_layer(self.grid.layer_theta(t) + bearing))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TableError> {
        let p = &self.params;
        w.write_all(&TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        for v in [self.grid.nx, self.grid.ny, self.grid.theta_bins, self.table_bins, p.n] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in [p.delta_d(), p.max_range, p.sigma, p.c_r, p.c_d, self.grid.cell_size, self.grid.origin.0, self.grid.origin.1] {
            w.write_all(&v.to_le_bytes())?;
        }
        match &self.expected {
            ExpectedIndex::Byte(v) => {
                w.write_all(&[1u8])?;
                w.write_all(v)?;
            }
            ExpectedIndex::Wide(v) => {
                w.write_all(&[2u8])?;
                for b in v {
                    w.write_all(&b.to_le_bytes())?;
                }
            }
        }
        for v in &self.likelihood {
            w.write_all(&v.to_le_bytes())?;
        }
        let mask: Vec<u8> = self.free.iter().map(|&f| f as u8).collect();
        w.write_all(&mask)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TableError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != TABLE_MAGIC {
            return Err(TableError::Corrupt("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != TABLE_VERSION {
            return Err(TableError::Corrupt(format!("unsupported version {version}")));
        }
        let nx = read_u32(&mut r)? as usize;
        let ny = read_u32(&mut r)? as usize;
        let theta_bins = read_u32(&mut r)? as usize;
        let table_bins = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let delta_d = read_f64(&mut r)?;
        let max_range = read_f64(&mut r)?;
        let sigma = read_f64(&mut r)?;
        let c_r = read_f64(&mut r)?;
        let c_d = read_f64(&mut r)?;
        let cell_size = read_f64(&mut r)?;
        let ox = read_f64(&mut r)?;
        let oy = read_f64(&mut r)?;
        let params = BeamModelParams::new(sigma, c_r, c_d, n, max_range)?;
        if (params.delta_d() - delta_d).abs() > 1e-12 * max_range {
            return Err(TableError::Corrupt("delta_d disagrees with n and max_range".into()));
        }
        let grid = StateGrid::new(nx, ny, cell_size, (ox, oy), theta_bins)?;
        if table_bins == 0 || table_bins % theta_bins != 0 {
            return Err(TableError::AngularMismatch { table: table_bins, grid: theta_bins });
        }
        let entries = nx * ny * table_bins;
        let mut width = [0u8; 1];
        r.read_exact(&mut width)?;
        let expected = match width[0] {
            1 => {
                let mut v = vec![0u8; entries];
                r.read_exact(&mut v)?;
                ExpectedIndex::Byte(v)
            }
            2 => {
                let mut raw = vec![0u8; entries * 2];
                r.read_exact(&mut raw)?;
                ExpectedIndex::Wide(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
            }
            other => return Err(TableError::Corrupt(format!("bad index width {other}"))),
        };
        if (0..entries).any(|i| expected.get(i) >= n) {
            return Err(TableError::Corrupt("expected index out of range".into()));
        }
        let mut likelihood = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            likelihood.push(read_f64(&mut r)?);
        }
        let mut mask = vec![0u8; nx * ny];
        r.read_exact(&mut mask)?;
        let free = mask.into_iter().map(|b| b != 0).collect();
        Self::assemble(params, grid, table_bins, free, expected, likelihood)
    }
}

fn likelihood_rows(params: &BeamModelParams) -> Result<Vec<f64>, TableError> {
    let disc = params.discretization();
    let mut rows = Vec::with_capacity(params.n * params.n);
    for k in 0..params.n {
        let dist = beam_distribution(params, disc.center(k))?;
        if !dist.is_proper() {
            return Err(TableError::ImproperRow { bin: k });
        }
        rows.extend_from_slice(&dist.probs);
    }
    Ok(rows)
}

fn short_rows(params: &BeamModelParams) -> Result<Vec<f64>, TableError> {
    let disc = params.discretization();
    let n = params.n;
    let mut rows = vec![0.0; n * n];
    for k in 0..n {
        let pm = known_obstacle_density(params, disc.center(k))?;
        let mut tail = 0.0;
        for i in (0..n).rev() {
            rows[k * n + i] = tail;
            tail += pm[i];
        }
    }
    Ok(rows)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TableError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, TableError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Per-state likelihood of one range reading, backed by a [`SensorTable`].
pub struct BeamLikelihood<'a> {
    table: &'a SensorTable,
    layers: Vec<usize>,
    column: Vec<f64>,
}

impl LikelihoodSource for BeamLikelihood<'_> {
    fn likelihood(&self, layer: usize, cell: usize) -> f64 {
        self.column[self.table.expected_bin_at(cell, self.layers[layer])]
    }

    fn fill_layer(&self, layer: usize, out: &mut [f64]) {
        let base = self.layers[layer] * self.table.grid.layer_len();
        let len = out.len();
        match &self.table.expected {
            ExpectedIndex::Byte(v) => {
                for (o, &k) in out.iter_mut().zip(&v[base..base + len]) {
                    *o = self.column[k as usize];
                }
            }
            ExpectedIndex::Wide(v) => {
                for (o, &k) in out.iter_mut().zip(&v[base..base + len]) {
                    *o = self.column[k as usize];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_map::Occupancy;

    fn room() -> OccupancyGrid {
        let mut map = OccupancyGrid::new(20, 12, 0.25, (0.0, 0.0), Occupancy::Free).unwrap();
        map.fill_rect(0.0, 0.0, 5.0, 0.25, Occupancy::Occupied);
        map.fill_rect(0.0, 2.75, 5.0, 3.0, Occupancy::Occupied);
        map.fill_rect(3.0, 1.0, 3.5, 1.5, Occupancy::Occupied);
        map
    }

    #[test]
    fn single_free_cell_sees_max_range() {
        let map = OccupancyGrid::new(1, 1, 0.5, (0.0, 0.0), Occupancy::Free).unwrap();
        let params = BeamModelParams::with_defaults(32, 4.0).unwrap();
        let table = build_sensor_table(&map, &params, 8).unwrap();
        for t in 0..8 {
            assert_eq!(table.expected_bin_at(0, t), 31);
        }
    }

    #[test]
    fn rows_match_beam_distribution_exactly() {
        let params = BeamModelParams::new(0.2, 0.02, 0.85, 40, 5.0).unwrap();
        let table = build_sensor_table(&room(), &params, 4).unwrap();
        let disc = params.discretization();
        for k in 0..params.n {
            let direct = beam_distribution(&params, disc.center(k)).unwrap();
            assert_eq!(table.likelihood_row(k), &direct.probs[..]);
        }
    }

    #[test]
    fn byte_and_wide_indices() {
        let map = room();
        let byte = build_sensor_table(&map, &BeamModelParams::with_defaults(256, 5.0).unwrap(), 2).unwrap();
        assert!(byte.is_byte_indexed());
        let wide = build_sensor_table(&map, &BeamModelParams::with_defaults(300, 5.0).unwrap(), 2).unwrap();
        assert!(!wide.is_byte_indexed());
    }

    #[test]
    fn size_cap_enforced() {
        let map = room();
        let params = BeamModelParams::with_defaults(32, 5.0).unwrap();
        let grid = StateGrid::covering(&map, 0.25, 4).unwrap();
        let err = SensorTable::build(&map, &params, &grid, 4, TableLimits { max_entries: 100 }).unwrap_err();
        assert!(matches!(err, TableError::TooLarge { entries: 960, cap: 100 }));
    }

    #[test]
    fn blob_round_trip() {
        let params = BeamModelParams::with_defaults(48, 5.0).unwrap();
        let table = build_sensor_table(&room(), &params, 6).unwrap();
        let mut blob = Vec::new();
        table.write_to(&mut blob).unwrap();
        assert_eq!(&blob[..4], b"MLST");
        let back = SensorTable::read_from(&blob[..]).unwrap();
        assert_eq!(back, table);
        assert!(SensorTable::read_from(&blob[..blob.len() - 1]).is_err());
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert!(matches!(SensorTable::read_from(&bad[..]), Err(TableError::Corrupt(_))));
    }

    #[test]
    fn average_over_single_state() {
        let map = OccupancyGrid::new(1, 1, 0.5, (0.0, 0.0), Occupancy::Free).unwrap();
        let params = BeamModelParams::with_defaults(16, 4.0).unwrap();
        let table = build_sensor_table(&map, &params, 1).unwrap();
        let pose = Pose::new(0.25, 0.25, 0.0);
        let beam = Beam::new(0.0, 4.0).unwrap();
        for m in [0.1, 1.3, 4.0] {
            assert_eq!(table.average_likelihood(m), table.lookup_likelihood(&pose, &beam, m).unwrap());
        }
    }

    #[test]
    fn average_over_two_states() {
        // two free cells separated from a wall by different distances
        let mut map = OccupancyGrid::new(3, 1, 1.0, (0.0, 0.0), Occupancy::Free).unwrap();
        map.set(2, 0, Occupancy::Occupied);
        let params = BeamModelParams::new(0.3, 0.01, 0.9, 16, 4.0).unwrap();
        let table = build_sensor_table(&map, &params, 1).unwrap();
        let beam = Beam::new(0.0, 4.0).unwrap();
        let a = table.lookup_likelihood(&Pose::new(0.5, 0.5, 0.0), &beam, 1.2).unwrap();
        let b = table.lookup_likelihood(&Pose::new(1.5, 0.5, 0.0), &beam, 1.2).unwrap();
        assert!((table.average_likelihood(1.2) - 0.5 * (a + b)).abs() < 1e-15);
    }

    #[test]
    fn p_short_extremes() {
        let params = BeamModelParams::new(0.1, 0.01, 0.9, 50, 5.0).unwrap();
        let mut map = OccupancyGrid::new(60, 3, 0.1, (0.0, 0.0), Occupancy::Free).unwrap();
        for iy in 0..3 {
            map.set(35, iy, Occupancy::Occupied);
        }
        let table = build_sensor_table(&map, &params, 4).unwrap();
        let pose = Pose::new(0.55, 0.15, 0.0);
        let beam = Beam::new(0.0, 5.0).unwrap();
        let disc = params.discretization();
        assert_eq!(table.p_short(&pose, &beam, 49).unwrap(), 0.0);
        assert!(table.p_short(&pose, &beam, disc.bin(1.0)).unwrap() > 1.0 - 1e-9);
        assert!(table.p_short(&pose, &beam, disc.bin(4.5)).unwrap() < 1e-9);
    }
}
