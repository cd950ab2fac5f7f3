//! Spatio-temporal grid data model: regions, hourly rainfall fields and
//! sequences, terrain channel stacks, and event tables, with bit-exact
//! file formats in [`io`].
//!
//! All types are immutable after construction; constructors validate every
//! invariant so downstream code can rely on well-formed data.

pub mod io;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

// ── Region ────────────────────────────────────────────────────────────────────

/// A square study area divided into grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: String,
    pub height_cells: usize,
    pub width_cells: usize,
    pub cell_size_km: f64,
}

impl Region {
    pub fn new(
        region_id: impl Into<String>,
        height_cells: usize,
        width_cells: usize,
        cell_size_km: f64,
    ) -> Result<Self> {
        let region_id = region_id.into();
        if height_cells < 3 || width_cells < 3 {
            return Err(Error::validation(format!(
                "region {region_id}: grid must be at least 3x3, got {height_cells}x{width_cells}"
            )));
        }
        if !(cell_size_km > 0.0) || !cell_size_km.is_finite() {
            return Err(Error::validation(format!(
                "region {region_id}: cell size must be positive, got {cell_size_km}"
            )));
        }
        if region_id.is_empty() || region_id.chars().any(|c| c.is_control() || c == ',') {
            return Err(Error::validation(
                "region id must be non-empty and free of control characters and commas",
            ));
        }
        Ok(Region {
            region_id,
            height_cells,
            width_cells,
            cell_size_km,
        })
    }

    /// 10 x 10 cells at 1 km.
    pub fn default_size(region_id: impl Into<String>) -> Self {
        Region::new(region_id, 10, 10, 1.0).expect("default region dimensions are valid")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height_cells, self.width_cells)
    }
}

// ── Rainfall ──────────────────────────────────────────────────────────────────

/// Where a rainfall field came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Observed,
    Forecast,
    Augmented,
}

impl Provenance {
    pub fn code(self) -> char {
        match self {
            Provenance::Observed => 'O',
            Provenance::Forecast => 'F',
            Provenance::Augmented => 'A',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'O' => Some(Provenance::Observed),
            'F' => Some(Provenance::Forecast),
            'A' => Some(Provenance::Augmented),
            _ => None,
        }
    }
}

/// One hourly precipitation grid (mm/h).
#[derive(Debug, Clone, PartialEq)]
pub struct RainfallField {
    pub region: Region,
    /// Hours since the dataset epoch (hour 0).
    pub t_index: i64,
    pub values: Array2<f32>,
    pub provenance: Provenance,
}

impl RainfallField {
    pub fn new(
        region: Region,
        t_index: i64,
        values: Array2<f32>,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.dim() != region.shape() {
            return Err(Error::validation(format!(
                "rainfall grid {:?} does not match region {} shape {:?}",
                values.dim(),
                region.region_id,
                region.shape()
            )));
        }
        for &v in values.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "rainfall values must be finite and non-negative, found {v}"
                )));
            }
        }
        Ok(RainfallField {
            region,
            t_index,
            values,
            provenance,
        })
    }

    /// All-zero field, useful as a neutral element in tests and synthesis.
    pub fn zeros(region: Region, t_index: i64, provenance: Provenance) -> Self {
        let values = Array2::zeros(region.shape());
        RainfallField {
            region,
            t_index,
            values,
            provenance,
        }
    }
}

/// Hourly-contiguous run of rainfall fields over one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RainfallSequence {
    fields: Vec<RainfallField>,
}

impl RainfallSequence {
    pub fn new(fields: Vec<RainfallField>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::validation("rainfall sequence must not be empty"))?;
        let region = first.region.clone();
        let epoch = first.t_index;
        for (i, f) in fields.iter().enumerate() {
            if f.region != region {
                return Err(Error::validation(format!(
                    "sequence mixes regions {} and {}",
                    region.region_id, f.region.region_id
                )));
            }
            if f.t_index != epoch + i as i64 {
                return Err(Error::validation(format!(
                    "sequence not hourly-contiguous: step {i} has t_index {}, expected {}",
                    f.t_index,
                    epoch + i as i64
                )));
            }
        }
        Ok(RainfallSequence { fields })
    }

    pub fn fields(&self) -> &[RainfallField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn region(&self) -> &Region {
        &self.fields[0].region
    }

    /// t_index of the first field.
    pub fn epoch(&self) -> i64 {
        self.fields[0].t_index
    }

    pub fn field(&self, i: usize) -> &RainfallField {
        &self.fields[i]
    }

    /// Sub-sequence covering t_index values `from..=to`.
    pub fn slice_hours(&self, from: i64, to: i64) -> Result<RainfallSequence> {
        let epoch = self.epoch();
        if from < epoch || to >= epoch + self.len() as i64 || from > to {
            return Err(Error::validation(format!(
                "hour range {from}..={to} outside sequence {}..={}",
                epoch,
                epoch + self.len() as i64 - 1
            )));
        }
        let a = (from - epoch) as usize;
        let b = (to - epoch) as usize;
        RainfallSequence::new(self.fields[a..=b].to_vec())
    }
}

// ── Terrain ───────────────────────────────────────────────────────────────────

pub const SOIL_CATEGORIES: usize = 10;
pub const VEGETATION_CATEGORIES: usize = 11;
pub const SLOPE_DIRECTIONS: usize = 8;
/// soil + vegetation + slope direction + elevation.
pub const TERRAIN_CHANNELS: usize = SOIL_CATEGORIES + VEGETATION_CATEGORIES + SLOPE_DIRECTIONS + 1;

const ONE_HOT_TOL: f64 = 1e-6;

/// Geographically anchored per-cell features for one region.
///
/// Categorical groups are stored one-hot; `elevation` holds raw meters and
/// `elevation_norm` a per-region z-scored copy (all zeros for a flat region).
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    pub region: Region,
    pub soil: Array3<f32>,
    pub vegetation: Array3<f32>,
    pub slope_dir: Array3<f32>,
    pub elevation: Array2<f32>,
    pub elevation_norm: Array2<f64>,
}

impl TerrainGrid {
    pub fn new(
        region: Region,
        soil: Array3<f32>,
        vegetation: Array3<f32>,
        slope_dir: Array3<f32>,
        elevation: Array2<f32>,
    ) -> Result<Self> {
        let (h, w) = region.shape();
        for (name, arr, cats) in [
            ("soil", &soil, SOIL_CATEGORIES),
            ("vegetation", &vegetation, VEGETATION_CATEGORIES),
            ("slope_dir", &slope_dir, SLOPE_DIRECTIONS),
        ] {
            if arr.dim() != (cats, h, w) {
                return Err(Error::validation(format!(
                    "{name} channels {:?} do not match expected ({cats}, {h}, {w})",
                    arr.dim()
                )));
            }
            validate_one_hot(name, arr)?;
        }
        if elevation.dim() != (h, w) {
            return Err(Error::validation(format!(
                "elevation {:?} does not match region shape ({h}, {w})",
                elevation.dim()
            )));
        }
        if elevation.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("elevation must be finite"));
        }
        let elevation_norm = normalize_elevation(&elevation);
        Ok(TerrainGrid {
            region,
            soil,
            vegetation,
            slope_dir,
            elevation,
            elevation_norm,
        })
    }

    /// Copy with `delta` added to the normalized elevation channel.
    ///
    /// This is the augmentation hook: categorical channels and the raw
    /// elevation stay untouched, so the grid's geography never moves.
    pub fn perturb_elevation_norm(&self, delta: &Array2<f64>) -> Result<TerrainGrid> {
        if delta.dim() != self.region.shape() {
            return Err(Error::validation("elevation perturbation must match region shape"));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("elevation perturbation must be finite"));
        }
        let mut out = self.clone();
        out.elevation_norm += delta;
        Ok(out)
    }

    /// Index of the soil category set at `(y, x)`.
    pub fn soil_category(&self, y: usize, x: usize) -> usize {
        argmax_channel(&self.soil, y, x)
    }

    /// Index of the slope direction category set at `(y, x)`.
    pub fn slope_category(&self, y: usize, x: usize) -> usize {
        argmax_channel(&self.slope_dir, y, x)
    }
}

fn argmax_channel(arr: &Array3<f32>, y: usize, x: usize) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for c in 0..arr.dim().0 {
        if arr[[c, y, x]] > best_v {
            best_v = arr[[c, y, x]];
            best = c;
        }
    }
    best
}

fn validate_one_hot(name: &str, arr: &Array3<f32>) -> Result<()> {
    let (c, h, w) = arr.dim();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0f64;
            for k in 0..c {
                let v = f64::from(arr[[k, y, x]]);
                if !v.is_finite() || (v.abs() > ONE_HOT_TOL && (v - 1.0).abs() > ONE_HOT_TOL) {
                    return Err(Error::validation(format!(
                        "{name} channel {k} at ({y}, {x}) is {v}, expected 0 or 1"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ONE_HOT_TOL {
                return Err(Error::validation(format!(
                    "{name} one-hot group sums to {sum} at ({y}, {x}), expected 1"
                )));
            }
        }
    }
    Ok(())
}

/// Per-region z-score; a constant grid maps to all zeros.
pub fn normalize_elevation(elevation: &Array2<f32>) -> Array2<f64> {
    let n = elevation.len() as f64;
    let mean = elevation.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = elevation
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        Array2::zeros(elevation.dim())
    } else {
        elevation.mapv(|v| (f64::from(v) - mean) / sd)
    }
}

// ── Events ────────────────────────────────────────────────────────────────────

/// One landslide occurrence: region, hour, and cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub region_id: String,
    pub t_index: i64,
    pub y: usize,
    pub x: usize,
}

/// Table of landslide events across regions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTable {
    pub rows: Vec<EventRecord>,
}

impl EventTable {
    pub fn new(rows: Vec<EventRecord>) -> Self {
        EventTable { rows }
    }

    /// True when some event for `region_id` has `t_index` in `(after, after + horizon]`.
    pub fn any_in_horizon(&self, region_id: &str, after: i64, horizon: i64) -> bool {
        self.rows
            .iter()
            .any(|r| r.region_id == region_id && r.t_index > after && r.t_index <= after + horizon)
    }

    /// Check each row against its region's bounds and the dataset time range.
    pub fn validate(&self, regions: &[Region], hours: i64) -> Result<()> {
        for row in &self.rows {
            let region = regions
                .iter()
                .find(|r| r.region_id == row.region_id)
                .ok_or_else(|| {
                    Error::validation(format!("event references unknown region {}", row.region_id))
                })?;
            if row.t_index < 0 || row.t_index >= hours {
                return Err(Error::validation(format!(
                    "event at hour {} outside dataset range 0..{hours}",
                    row.t_index
                )));
            }
            if row.y >= region.height_cells || row.x >= region.width_cells {
                return Err(Error::validation(format!(
                    "event cell ({}, {}) outside region {} of {}x{}",
                    row.y, row.x, region.region_id, region.height_cells, region.width_cells
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> Region {
        Region::default_size("R00")
    }

    #[test]
    fn region_rejects_tiny_grids() {
        assert!(Region::new("bad", 2, 10, 1.0).is_err());
        assert!(Region::new("bad", 10, 2, 1.0).is_err());
        assert!(Region::new("bad", 10, 10, 0.0).is_err());
    }

    #[test]
    fn rainfall_rejects_negative_values() {
        let mut values = Array2::zeros((10, 10));
        values[[3, 4]] = -1.0;
        assert!(RainfallField::new(region(), 0, values, Provenance::Observed).is_err());
    }

    #[test]
    fn rainfall_rejects_nan() {
        let mut values = Array2::zeros((10, 10));
        values[[0, 0]] = f32::NAN;
        assert!(RainfallField::new(region(), 0, values, Provenance::Observed).is_err());
    }

    #[test]
    fn sequence_requires_hourly_contiguity() {
        let f0 = RainfallField::zeros(region(), 0, Provenance::Observed);
        let f2 = RainfallField::zeros(region(), 2, Provenance::Observed);
        assert!(RainfallSequence::new(vec![f0, f2]).is_err());
    }

    #[test]
    fn sequence_slice_by_hours() {
        let fields = (0..48)
            .map(|t| RainfallField::zeros(region(), t, Provenance::Observed))
            .collect();
        let seq = RainfallSequence::new(fields).unwrap();
        let sub = seq.slice_hours(8, 15).unwrap();
        assert_eq!(sub.len(), 8);
        assert_eq!(sub.epoch(), 8);
    }

    #[test]
    fn terrain_rejects_double_category() {
        let mut soil = Array3::zeros((SOIL_CATEGORIES, 10, 10));
        soil.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        soil[[1, 5, 5]] = 1.0; // second category in one cell
        let mut veg = Array3::zeros((VEGETATION_CATEGORIES, 10, 10));
        veg.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let mut slope = Array3::zeros((SLOPE_DIRECTIONS, 10, 10));
        slope.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let elev = Array2::zeros((10, 10));
        assert!(TerrainGrid::new(region(), soil, veg, slope, elev).is_err());
    }

    #[test]
    fn terrain_rejects_all_zero_group() {
        let soil = Array3::zeros((SOIL_CATEGORIES, 10, 10));
        let mut veg = Array3::zeros((VEGETATION_CATEGORIES, 10, 10));
        veg.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let mut slope = Array3::zeros((SLOPE_DIRECTIONS, 10, 10));
        slope.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let elev = Array2::zeros((10, 10));
        assert!(TerrainGrid::new(region(), soil, veg, slope, elev).is_err());
    }

    #[test]
    fn elevation_normalization_is_zero_mean_unit_variance() {
        let elev = Array2::from_shape_fn((10, 10), |(y, x)| (y * 13 + x * 7) as f32 * 3.5 + 120.0);
        let norm = normalize_elevation(&elev);
        let n = norm.len() as f64;
        let mean = norm.iter().sum::<f64>() / n;
        let var = norm.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "var {var}");
    }

    #[test]
    fn flat_elevation_normalizes_to_zeros() {
        let elev = Array2::from_elem((10, 10), 42.0f32);
        let norm = normalize_elevation(&elev);
        assert!(norm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn event_horizon_is_half_open() {
        let table = EventTable::new(vec![EventRecord {
            region_id: "R00".into(),
            t_index: 1000,
            y: 3,
            x: 4,
        }]);
        // label window (t, t+8]
        assert!(table.any_in_horizon("R00", 992, 8));
        assert!(table.any_in_horizon("R00", 999, 8));
        assert!(!table.any_in_horizon("R00", 1000, 8)); // event not strictly after
        assert!(!table.any_in_horizon("R00", 991, 8));
        assert!(!table.any_in_horizon("R01", 999, 8));
    }

    #[test]
    fn event_validation_checks_bounds() {
        let regions = vec![region()];
        let table = EventTable::new(vec![EventRecord {
            region_id: "R00".into(),
            t_index: 5,
            y: 10,
            x: 0,
        }]);
        assert!(table.validate(&regions, 100).is_err());
    }
}
