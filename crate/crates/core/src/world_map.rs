//! Static occupancy-grid world model and ray casting.
//!
//! The map is immutable after loading. Cell `(ix, iy)` covers the square
//! `[origin_x + ix*res, origin_x + (ix+1)*res) x [origin_y + iy*res, ...)`,
//! and row 0 is the minimum-y row.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occupancy {
    Free,
    Occupied,
    Unknown,
}

impl Occupancy {
    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '.' => Some(Occupancy::Free),
            '#' => Some(Occupancy::Occupied),
            '?' => Some(Occupancy::Unknown),
            _ => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Occupancy::Free => '.',
            Occupancy::Occupied => '#',
            Occupancy::Unknown => '?',
        }
    }

    /// Unknown cells do not stop beams.
    pub fn blocks_beam(self) -> bool {
        self == Occupancy::Occupied
    }
}

/// Robot pose in world coordinates. `theta` is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta: normalize_angle(theta) }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_to_pi(theta: f64) -> f64 {
    let t = normalize_angle(theta);
    if t > std::f64::consts::PI {
        t - TAU
    } else {
        t
    }
}

/// A single range-sensor beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    /// Radians relative to the robot heading.
    pub bearing: f64,
    pub max_range: f64,
}

impl Beam {
    pub fn new(bearing: f64, max_range: f64) -> Result<Self, WorldError> {
        if !(max_range > 0.0) || !bearing.is_finite() {
            return Err(WorldError::InvalidBeam { bearing, max_range });
        }
        Ok(Beam { bearing, max_range })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("pose ({x:.3}, {y:.3}) lies outside the map bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid beam: bearing {bearing}, max_range {max_range}")]
    InvalidBeam { bearing: f64, max_range: f64 },
    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: malformed header: {msg}")]
    Header { line: usize, msg: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: illegal cell symbol {symbol:?}")]
    IllegalSymbol { line: usize, column: usize, symbol: char },
    #[error("expected {expected} map rows, found {found}")]
    MissingRows { expected: usize, found: usize },
    #[error("line {line}: unexpected trailing content")]
    TrailingRows { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Supported map serializations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    /// `MAP <w> <h> <res> <ox> <oy>` followed by `h` rows of `.#?`.
    Ascii,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<Occupancy>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        fill: Occupancy,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::InvalidGeometry(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(WorldError::InvalidGeometry(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        Ok(OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            cells: vec![fill; width * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    /// World-space extent `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.width as f64 * self.resolution,
            self.origin.1 + self.height as f64 * self.resolution,
        )
    }

    pub fn get(&self, ix: usize, iy: usize) -> Occupancy {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: Occupancy) {
        self.cells[iy * self.width + ix] = value;
    }

    pub fn cells(&self) -> &[Occupancy] {
        &self.cells
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.bounds();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Cell containing a world point, or `None` outside the map. Points on the
    /// upper boundary map to the last row/column.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let gx = ((x - self.origin.0) / self.resolution).floor() as usize;
        let gy = ((y - self.origin.1) / self.resolution).floor() as usize;
        Some((gx.min(self.width - 1), gy.min(self.height - 1)))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// True if the point is inside the map and not on an occupied cell.
    pub fn is_free_at(&self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some((ix, iy)) => !self.get(ix, iy).blocks_beam(),
            None => false,
        }
    }

    /// Marks every cell whose center lies inside the axis-aligned rectangle.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, value: Occupancy) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                let (cx, cy) = self.cell_center(ix, iy);
                if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                    self.set(ix, iy, value);
                }
            }
        }
    }

    /// Distance from `pose` along `pose.theta + bearing` to the entry face of
    /// the first occupied cell, clamped to `max_range`.
    pub fn ray_cast(&self, pose: &Pose, bearing: f64, max_range: f64) -> Result<f64, WorldError> {
        ray_cast(self, pose, bearing, max_range)
    }
}

impl fmt::Display for OccupancyGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "MAP {} {} {} {} {}",
            self.width, self.height, self.resolution, self.origin.0, self.origin.1
        )?;
        for iy in 0..self.height {
            let row: String = (0..self.width).map(|ix| self.get(ix, iy).symbol()).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

pub fn load_map<R: BufRead>(source: R, format: MapFormat) -> Result<OccupancyGrid, MapError> {
    match format {
        MapFormat::Ascii => load_ascii(source),
    }
}

pub fn write_map<W: Write>(map: &OccupancyGrid, mut sink: W) -> std::io::Result<()> {
    write!(sink, "{map}")
}

fn load_ascii<R: BufRead>(source: R) -> Result<OccupancyGrid, MapError> {
    let mut lines = source.lines().enumerate();
    let (header_no, header) = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() || line.trim_start().starts_with("//") {
                    continue;
                }
                break (i + 1, line);
            }
            None => {
                return Err(MapError::Header { line: 1, msg: "empty input".into() });
            }
        }
    };
    let header_err = |msg: &str| MapError::Header { line: header_no, msg: msg.to_string() };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "MAP" {
        return Err(header_err("expected `MAP <width> <height> <resolution> <origin_x> <origin_y>`"));
    }
    let width: usize = fields[1].parse().map_err(|_| header_err("width is not an integer"))?;
    let height: usize = fields[2].parse().map_err(|_| header_err("height is not an integer"))?;
    let resolution: f64 = fields[3].parse().map_err(|_| header_err("resolution is not a number"))?;
    let ox: f64 = fields[4].parse().map_err(|_| header_err("origin_x is not a number"))?;
    let oy: f64 = fields[5].parse().map_err(|_| header_err("origin_y is not a number"))?;
    if !ox.is_finite() || !oy.is_finite() {
        return Err(header_err("origin must be finite"));
    }
    let mut grid = OccupancyGrid::new(width, height, resolution, (ox, oy), Occupancy::Free)
        .map_err(|e| header_err(&e.to_string()))?;

    let mut row = 0usize;
    for (i, line) in lines {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        if row == height {
            return Err(MapError::TrailingRows { line: line_no });
        }
        let symbols: Vec<char> = trimmed.chars().collect();
        if symbols.len() != width {
            return Err(MapError::DimensionMismatch {
                line: line_no,
                expected: width,
                found: symbols.len(),
            });
        }
        for (ix, &c) in symbols.iter().enumerate() {
            let occ = Occupancy::from_symbol(c).ok_or(MapError::IllegalSymbol {
                line: line_no,
                column: ix + 1,
                symbol: c,
            })?;
            grid.set(ix, row, occ);
        }
        row += 1;
    }
    if row != height {
        return Err(MapError::MissingRows { expected: height, found: row });
    }
    Ok(grid)
}

/// Supercover grid walk from the pose point. The hit distance is the entry
/// face of the first occupied cell; when the ray passes exactly through a
/// cell corner both side neighbours are tested.
pub fn ray_cast(
    map: &OccupancyGrid,
    pose: &Pose,
    bearing: f64,
    max_range: f64,
) -> Result<f64, WorldError> {
    let (mut cx, mut cy) = map
        .cell_of(pose.x, pose.y)
        .ok_or(WorldError::OutOfBounds { x: pose.x, y: pose.y })?;
    if !(max_range > 0.0) {
        return Ok(0.0f64.max(max_range));
    }
    if map.get(cx, cy).blocks_beam() {
        return Ok(0.0);
    }
    let res = map.resolution;
    let angle = pose.theta + bearing;
    let (dy, dx) = angle.sin_cos();
    let gx = (pose.x - map.origin.0) / res;
    let gy = (pose.y - map.origin.1) / res;
    let limit = max_range / res;

    let (step_x, mut t_max_x, t_delta_x) = axis_setup(gx, cx, dx);
    let (step_y, mut t_max_y, t_delta_y) = axis_setup(gy, cy, dy);
    let w = map.width as isize;
    let h = map.height as isize;
    let blocked = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && x < w && y < h && map.get(x as usize, y as usize).blocks_beam()
    };

    loop {
        let t = t_max_x.min(t_max_y);
        if t >= limit {
            return Ok(max_range);
        }
        let tie = (t_max_x - t_max_y).abs() <= 1e-12 * t.max(1.0);
        let (nx, ny) = if tie {
            let sx = cx as isize + step_x;
            let sy = cy as isize + step_y;
            if blocked(sx, cy as isize) || blocked(cx as isize, sy) {
                return Ok(t * res);
            }
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
            (sx, sy)
        } else if t_max_x < t_max_y {
            t_max_x += t_delta_x;
            (cx as isize + step_x, cy as isize)
        } else {
            t_max_y += t_delta_y;
            (cx as isize, cy as isize + step_y)
        };
        if nx < 0 || ny < 0 || nx >= w || ny >= h {
            return Ok(max_range);
        }
        if blocked(nx, ny) {
            return Ok(t * res);
        }
        cx = nx as usize;
        cy = ny as usize;
    }
}

fn axis_setup(g: f64, cell: usize, d: f64) -> (isize, f64, f64) {
    if d > 0.0 {
        (1, (cell as f64 + 1.0 - g) / d, 1.0 / d)
    } else if d < 0.0 {
        (-1, (g - cell as f64) / -d, -1.0 / d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}
