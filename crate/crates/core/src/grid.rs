//! Integer class rasters with an axis-aligned geotransform.
//!
//! A [`RasterGrid`] stores its lower-left corner (`xll`, `yll`) because that
//! is what the text format carries; the top-left origin used for indexing is
//! derived from it. Keeping the serialized quantities as the stored ones makes
//! `parse_grid(write_grid(g)) == g` hold exactly for every grid.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest whole-cell tile shift accepted by [`TileShift::new`].
pub const DEFAULT_MAX_SHIFT: i32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must have at least one row and one column (got {rows}x{cols})")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("cell size must be positive and finite (got {0})")]
    InvalidCellSize(f64),
    #[error("value count {actual} does not match {rows}x{cols}")]
    ValueCount { rows: usize, cols: usize, actual: usize },
    #[error("malformed header at line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("non-integer cell value {token:?} at line {line}")]
    BadValue { line: usize, token: String },
    #[error("row length mismatch at line {line}: expected {expected} values, found {found}")]
    RowLength { line: usize, expected: usize, found: usize },
    #[error("row count mismatch at line {line}: expected {expected} rows, found {found}")]
    RowCount { line: usize, expected: usize, found: usize },
    #[error("point ({x}, {y}) is outside the grid extent [{min_x}, {max_x}] x [{min_y}, {max_y}]")]
    OutOfExtent { x: f64, y: f64, min_x: f64, max_x: f64, min_y: f64, max_y: f64 },
    #[error("layer {index} does not share the geometry of the first layer")]
    GeometryMismatch { index: usize },
    #[error("shifted code ranges of layers {first} and {second} overlap")]
    OverlappingCodes { first: usize, second: usize },
    #[error("shifted code {code} of layer {index} collides with the output nodata value")]
    NodataCollision { index: usize, code: i32 },
    #[error("shifted codes of layer {index} overflow a 32-bit integer")]
    CodeOverflow { index: usize },
    #[error("no tiles to mosaic")]
    NoTiles,
    #[error("tile {index} is incompatible with the reference tile: {reason}")]
    IncompatibleTile { index: usize, reason: String },
    #[error("expected {expected} tile shifts, got {actual}")]
    ShiftCount { expected: usize, actual: usize },
    #[error("reference tile index {0} is out of range")]
    BadReference(usize),
    #[error("reference tile must not be shifted (got dx={dx}, dy={dy})")]
    ShiftedReference { dx: i32, dy: i32 },
    #[error("tile shift ({dx}, {dy}) exceeds the limit of {max} cells")]
    ShiftTooLarge { dx: i32, dy: i32, max: i32 },
}

/// 0-based cell position, rows counted from the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(row {}, col {})", self.row, self.col)
    }
}

/// Whole-cell translation of a tile: `dx` cells towards +x (east), `dy`
/// cells towards +y (north).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileShift {
    pub dx: i32,
    pub dy: i32,
}

impl TileShift {
    pub const ZERO: TileShift = TileShift { dx: 0, dy: 0 };

    pub fn new(dx: i32, dy: i32) -> Result<Self, GridError> {
        Self::with_limit(dx, dy, DEFAULT_MAX_SHIFT)
    }

    pub fn with_limit(dx: i32, dy: i32, max: i32) -> Result<Self, GridError> {
        if dx.abs() > max || dy.abs() > max {
            return Err(GridError::ShiftTooLarge { dx, dy, max });
        }
        Ok(Self { dx, dy })
    }
}

/// Axis-aligned extent in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    rows: usize,
    cols: usize,
    xll: f64,
    yll: f64,
    cell_size: f64,
    nodata: i32,
    values: Vec<i32>,
}

impl RasterGrid {
    /// Builds a grid from its lower-left corner, as stored in grid files.
    pub fn from_lower_left(
        rows: usize,
        cols: usize,
        xll: f64,
        yll: f64,
        cell_size: f64,
        nodata: i32,
        values: Vec<i32>,
    ) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::EmptyGrid { rows, cols });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::InvalidCellSize(cell_size));
        }
        if values.len() != rows * cols {
            return Err(GridError::ValueCount { rows, cols, actual: values.len() });
        }
        Ok(Self { rows, cols, xll, yll, cell_size, nodata, values })
    }

    /// Builds a grid from the outer top-left corner of the top-left cell.
    pub fn from_origin(
        rows: usize,
        cols: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        nodata: i32,
        values: Vec<i32>,
    ) -> Result<Self, GridError> {
        let yll = origin_y - rows as f64 * cell_size;
        Self::from_lower_left(rows, cols, origin_x, yll, cell_size, nodata, values)
    }

    pub fn filled(
        rows: usize,
        cols: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        nodata: i32,
        value: i32,
    ) -> Result<Self, GridError> {
        Self::from_origin(rows, cols, origin_x, origin_y, cell_size, nodata, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn nodata(&self) -> i32 {
        self.nodata
    }

    pub fn xll(&self) -> f64 {
        self.xll
    }

    pub fn yll(&self) -> f64 {
        self.yll
    }

    pub fn origin_x(&self) -> f64 {
        self.xll
    }

    pub fn origin_y(&self) -> f64 {
        self.yll + self.rows as f64 * self.cell_size
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: CellIndex) -> Option<i32> {
        (index.row < self.rows && index.col < self.cols).then(|| self.values[index.row * self.cols + index.col])
    }

    /// Value at a signed position; `None` outside the grid.
    pub fn get_signed(&self, row: i64, col: i64) -> Option<i32> {
        if row < 0 || col < 0 {
            return None;
        }
        self.get(CellIndex::new(row as usize, col as usize))
    }

    pub fn set(&mut self, index: CellIndex, value: i32) {
        assert!(index.row < self.rows && index.col < self.cols, "cell {index} out of range");
        self.values[index.row * self.cols + index.col] = value;
    }

    pub fn is_nodata(&self, value: i32) -> bool {
        value == self.nodata
    }

    /// Whether two grids share dimensions and geotransform.
    pub fn same_geometry(&self, other: &RasterGrid) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.xll == other.xll
            && self.yll == other.yll
            && self.cell_size == other.cell_size
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, index: CellIndex) -> (f64, f64) {
        (self.center_x(index.col), self.center_y(index.row))
    }

    fn center_x(&self, col: usize) -> f64 {
        self.xll + (col as f64 + 0.5) * self.cell_size
    }

    fn center_y(&self, row: usize) -> f64 {
        self.origin_y() - (row as f64 + 0.5) * self.cell_size
    }

    /// Outer extent of the grid.
    pub fn bounds(&self) -> Bounds {
        Bounds {
            min_x: self.xll,
            max_x: self.xll + self.cols as f64 * self.cell_size,
            min_y: self.yll,
            max_y: self.origin_y(),
        }
    }

    /// Outer extent grown by half a cell on every side; points inside it have
    /// a well-defined nearest cell center.
    pub fn lookup_bounds(&self) -> Bounds {
        let b = self.bounds();
        let half = self.cell_size / 2.0;
        Bounds { min_x: b.min_x - half, max_x: b.max_x + half, min_y: b.min_y - half, max_y: b.max_y + half }
    }

    /// Index of the cell whose center is nearest to `(x, y)`.
    ///
    /// Ties go to the smaller row, then the smaller column.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Result<CellIndex, GridError> {
        let b = self.lookup_bounds();
        if !b.contains(x, y) {
            return Err(GridError::OutOfExtent {
                x,
                y,
                min_x: b.min_x,
                max_x: b.max_x,
                min_y: b.min_y,
                max_y: b.max_y,
            });
        }
        // Squared Euclidean distance separates by axis, so each axis is
        // resolved on its own against the two nearest candidate centers.
        let col_guess = (x - self.xll) / self.cell_size - 0.5;
        let col = nearest_on_axis(col_guess, self.cols, |c| (x - self.center_x(c)).abs());
        let row_guess = (self.origin_y() - y) / self.cell_size - 0.5;
        let row = nearest_on_axis(row_guess, self.rows, |r| (y - self.center_y(r)).abs());
        Ok(CellIndex { row, col })
    }

    /// Value of the cell nearest to `(x, y)`.
    pub fn value_at(&self, x: f64, y: f64) -> Result<i32, GridError> {
        let idx = self.world_to_cell(x, y)?;
        Ok(self.values[idx.row * self.cols + idx.col])
    }

    pub fn cells(&self) -> impl Iterator<Item = (CellIndex, i32)> + '_ {
        let cols = self.cols;
        self.values.iter().enumerate().map(move |(i, &v)| (CellIndex::new(i / cols, i % cols), v))
    }
}

fn nearest_on_axis(guess: f64, len: usize, dist: impl Fn(usize) -> f64) -> usize {
    let max = (len - 1) as f64;
    let lo = guess.floor().clamp(0.0, max) as usize;
    let hi = (lo + 1).min(len - 1);
    if hi != lo && dist(hi) < dist(lo) {
        hi
    } else {
        lo
    }
}

const HEADER_KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"];

/// Parses the six-line header / row-major body text format.
pub fn parse_grid(text: &str) -> Result<RasterGrid, GridError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header: [Option<&str>; 6] = [None; 6];
    let mut last_header_line = 0;
    for _ in 0..HEADER_KEYS.len() {
        let (line_no, line) = lines
            .next()
            .ok_or(GridError::Header { line: last_header_line + 1, message: "unexpected end of header".into() })?;
        last_header_line = line_no;
        let mut parts = line.split_whitespace();
        let (Some(key), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(GridError::Header {
                line: line_no,
                message: format!("expected `<key> <value>`, found {line:?}"),
            });
        };
        let slot = HEADER_KEYS
            .iter()
            .position(|k| k.eq_ignore_ascii_case(key))
            .ok_or_else(|| GridError::Header { line: line_no, message: format!("unknown key {key:?}") })?;
        if header[slot].replace(value).is_some() {
            return Err(GridError::Header { line: line_no, message: format!("duplicate key {key:?}") });
        }
    }

    let header_value = |slot: usize| header[slot].expect("all six distinct keys were seen");
    let parse_count = |slot: usize| {
        header_value(slot).parse::<usize>().map_err(|_| GridError::Header {
            line: last_header_line,
            message: format!("{} must be a non-negative integer", HEADER_KEYS[slot]),
        })
    };
    let parse_float = |slot: usize| {
        header_value(slot).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| GridError::Header {
            line: last_header_line,
            message: format!("{} must be a finite number", HEADER_KEYS[slot]),
        })
    };
    let cols = parse_count(0)?;
    let rows = parse_count(1)?;
    let xll = parse_float(2)?;
    let yll = parse_float(3)?;
    let cell_size = parse_float(4)?;
    let nodata = header_value(5)
        .parse::<i32>()
        .map_err(|_| GridError::Header { line: last_header_line, message: "NODATA_value must be an integer".into() })?;

    let mut values = Vec::with_capacity(rows.saturating_mul(cols));
    let mut seen_rows = 0;
    let mut last_line = last_header_line;
    for (line_no, line) in lines {
        last_line = line_no;
        if line.trim().is_empty() {
            continue;
        }
        if seen_rows == rows {
            return Err(GridError::RowCount { line: line_no, expected: rows, found: seen_rows + 1 });
        }
        let before = values.len();
        for token in line.split_whitespace() {
            let v =
                token.parse::<i32>().map_err(|_| GridError::BadValue { line: line_no, token: token.to_string() })?;
            values.push(v);
        }
        let found = values.len() - before;
        if found != cols {
            return Err(GridError::RowLength { line: line_no, expected: cols, found });
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(GridError::RowCount { line: last_line, expected: rows, found: seen_rows });
    }
    RasterGrid::from_lower_left(rows, cols, xll, yll, cell_size, nodata, values)
}

/// Serializes a grid in the text format read by [`parse_grid`].
pub fn write_grid(grid: &RasterGrid) -> String {
    let mut out = String::with_capacity(64 + grid.values.len() * 4);
    // f64 Display prints the shortest representation that parses back to the same bits.
    let _ = writeln!(out, "ncols {}", grid.cols);
    let _ = writeln!(out, "nrows {}", grid.rows);
    let _ = writeln!(out, "xllcorner {}", grid.xll);
    let _ = writeln!(out, "yllcorner {}", grid.yll);
    let _ = writeln!(out, "cellsize {}", grid.cell_size);
    let _ = writeln!(out, "NODATA_value {}", grid.nodata);
    for row in grid.values.chunks(grid.cols) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Merges co-registered layers into one grid by adding a per-layer code
/// offset. Each cell takes the shifted value of the first layer (in argument
/// order) that has data there; the output uses the first layer's nodata.
pub fn merge_layers(layers: &[(&RasterGrid, i32)]) -> Result<RasterGrid, GridError> {
    let (first, _) = *layers.first().ok_or(GridError::NoTiles)?;
    let nodata = first.nodata;

    let mut ranges: Vec<Option<(i64, i64)>> = Vec::with_capacity(layers.len());
    for (index, (layer, offset)) in layers.iter().enumerate() {
        if !layer.same_geometry(first) {
            return Err(GridError::GeometryMismatch { index });
        }
        let range = layer.values.iter().filter(|&&v| v != layer.nodata).map(|&v| v as i64 + *offset as i64).fold(
            None,
            |acc: Option<(i64, i64)>, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            },
        );
        if let Some((lo, hi)) = range {
            if lo < i32::MIN as i64 || hi > i32::MAX as i64 {
                return Err(GridError::CodeOverflow { index });
            }
        }
        ranges.push(range);
    }
    for i in 0..ranges.len() {
        for j in i + 1..ranges.len() {
            if let (Some((a_lo, a_hi)), Some((b_lo, b_hi))) = (ranges[i], ranges[j]) {
                if a_lo <= b_hi && b_lo <= a_hi {
                    return Err(GridError::OverlappingCodes { first: i, second: j });
                }
            }
        }
    }

    let mut values = vec![nodata; first.values.len()];
    for (index, (layer, offset)) in layers.iter().enumerate() {
        for (out, &raw) in values.iter_mut().zip(&layer.values) {
            if *out != nodata || raw == layer.nodata {
                continue;
            }
            let code = raw + offset;
            if code == nodata {
                return Err(GridError::NodataCollision { index, code });
            }
            *out = code;
        }
    }
    RasterGrid::from_lower_left(first.rows, first.cols, first.xll, first.yll, first.cell_size, nodata, values)
}

/// Placement of a tile on the reference tile's cell lattice.
struct Placement {
    /// Lattice column of the tile's left edge.
    col0: i64,
    /// Lattice row (counted upwards) of the tile's bottom edge.
    up0: i64,
}

/// Mosaics tiles onto the reference tile's lattice after applying whole-cell
/// shifts. Where shifted tiles overlap, the reference tile has priority,
/// followed by the remaining tiles in list order. Nodata cells do not cover
/// anything, so a lower-priority tile shows through them.
pub fn mosaic(tiles: &[RasterGrid], reference: usize, shifts: &[TileShift]) -> Result<RasterGrid, GridError> {
    if tiles.is_empty() {
        return Err(GridError::NoTiles);
    }
    if shifts.len() != tiles.len() {
        return Err(GridError::ShiftCount { expected: tiles.len(), actual: shifts.len() });
    }
    let reference_tile = tiles.get(reference).ok_or(GridError::BadReference(reference))?;
    if shifts[reference] != TileShift::ZERO {
        let s = shifts[reference];
        return Err(GridError::ShiftedReference { dx: s.dx, dy: s.dy });
    }
    let cs = reference_tile.cell_size;
    let nodata = reference_tile.nodata;

    let mut placements = Vec::with_capacity(tiles.len());
    for (index, (tile, shift)) in tiles.iter().zip(shifts).enumerate() {
        if tile.cell_size != cs {
            return Err(GridError::IncompatibleTile {
                index,
                reason: format!("cell size {} differs from {}", tile.cell_size, cs),
            });
        }
        if tile.nodata != nodata {
            return Err(GridError::IncompatibleTile {
                index,
                reason: format!("nodata {} differs from {}", tile.nodata, nodata),
            });
        }
        let col = lattice_offset(tile.xll - reference_tile.xll, cs).ok_or_else(|| GridError::IncompatibleTile {
            index,
            reason: "x origin is not on the reference cell lattice".into(),
        })?;
        let up = lattice_offset(tile.yll - reference_tile.yll, cs).ok_or_else(|| GridError::IncompatibleTile {
            index,
            reason: "y origin is not on the reference cell lattice".into(),
        })?;
        placements.push(Placement { col0: col + shift.dx as i64, up0: up + shift.dy as i64 });
    }

    let min_col = placements.iter().map(|p| p.col0).min().unwrap_or(0);
    let min_up = placements.iter().map(|p| p.up0).min().unwrap_or(0);
    let max_col = tiles.iter().zip(&placements).map(|(t, p)| p.col0 + t.cols as i64).max().unwrap_or(0);
    let max_up = tiles.iter().zip(&placements).map(|(t, p)| p.up0 + t.rows as i64).max().unwrap_or(0);
    let cols = (max_col - min_col) as usize;
    let rows = (max_up - min_up) as usize;

    let mut values = vec![nodata; rows * cols];
    let mut order = Vec::with_capacity(tiles.len());
    order.push(reference);
    order.extend((0..tiles.len()).filter(|&i| i != reference));
    for &i in &order {
        let tile = &tiles[i];
        let p = &placements[i];
        // Output row 0 is the top lattice row `max_up - 1`.
        let top_out_row = (max_up - (p.up0 + tile.rows as i64)) as usize;
        let left_out_col = (p.col0 - min_col) as usize;
        for r in 0..tile.rows {
            let src = &tile.values[r * tile.cols..(r + 1) * tile.cols];
            let start = (top_out_row + r) * cols + left_out_col;
            for (out, &v) in values[start..start + tile.cols].iter_mut().zip(src) {
                if *out == nodata && v != nodata {
                    *out = v;
                }
            }
        }
    }

    let xll = reference_tile.xll + min_col as f64 * cs;
    let yll = reference_tile.yll + min_up as f64 * cs;
    RasterGrid::from_lower_left(rows, cols, xll, yll, cs, nodata, values)
}

fn lattice_offset(delta: f64, cell_size: f64) -> Option<i64> {
    let cells = delta / cell_size;
    let rounded = cells.round();
    ((cells - rounded).abs() <= 1e-6).then_some(rounded as i64)
}
