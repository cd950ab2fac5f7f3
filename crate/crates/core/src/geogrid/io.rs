//! File formats for rainfall stacks, terrain grids, and event tables.
//!
//! Rainfall and terrain files are a text manifest followed by a `---` line
//! and a raw payload of 32-bit little-endian reals. The bytes are a pure
//! function of the content: identical data serializes identically on every
//! platform.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::geogrid::{
    EventRecord, EventTable, Provenance, RainfallField, RainfallSequence, Region, TerrainGrid,
    SLOPE_DIRECTIONS, SOIL_CATEGORIES, TERRAIN_CHANNELS, VEGETATION_CATEGORIES,
};

const RAINFALL_MAGIC: &str = "lews rainfall-stack v1";
const TERRAIN_MAGIC: &str = "lews terrain v1";
const SEPARATOR: &[u8] = b"---\n";

// ── Rainfall stacks ───────────────────────────────────────────────────────────

/// Serialize a rainfall sequence: manifest, separator, then `[t][row][col]`
/// f32 little-endian payload.
pub fn write_rainfall_stack(seq: &RainfallSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = rainfall_stack_bytes(seq);
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// The exact bytes `write_rainfall_stack` produces.
pub fn rainfall_stack_bytes(seq: &RainfallSequence) -> Vec<u8> {
    let region = seq.region();
    let provenance: String = seq.fields().iter().map(|f| f.provenance.code()).collect();
    let mut out = Vec::new();
    out.extend_from_slice(RAINFALL_MAGIC.as_bytes());
    out.push(b'\n');
    push_kv(&mut out, "region_id", &region.region_id);
    push_kv(&mut out, "H", &region.height_cells.to_string());
    push_kv(&mut out, "W", &region.width_cells.to_string());
    push_kv(&mut out, "cell_km", &region.cell_size_km.to_string());
    push_kv(&mut out, "epoch", &seq.epoch().to_string());
    push_kv(&mut out, "dt_hours", "1");
    push_kv(&mut out, "T", &seq.len().to_string());
    push_kv(&mut out, "provenance", &provenance);
    out.extend_from_slice(SEPARATOR);
    for field in seq.fields() {
        for &v in field.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Inverse of [`write_rainfall_stack`].
pub fn read_rainfall_stack(path: impl AsRef<Path>) -> Result<RainfallSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let p = path.display().to_string();
    let (manifest, payload) = split_file(&bytes, &p)?;
    let mut lines = manifest.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != RAINFALL_MAGIC {
        return Err(Error::format(p, format!("bad magic line {magic:?}")));
    }
    let kv = parse_kv(lines, &p)?;
    let region = Region::new(
        get(&kv, "region_id", &p)?,
        parse_num(&kv, "H", &p)?,
        parse_num(&kv, "W", &p)?,
        parse_num(&kv, "cell_km", &p)?,
    )?;
    let epoch: i64 = parse_num(&kv, "epoch", &p)?;
    let dt: i64 = parse_num(&kv, "dt_hours", &p)?;
    if dt != 1 {
        return Err(Error::format(p, format!("dt_hours must be 1, got {dt}")));
    }
    let t: usize = parse_num(&kv, "T", &p)?;
    let provenance = get(&kv, "provenance", &p)?;
    if provenance.chars().count() != t {
        return Err(Error::format(
            p,
            format!("provenance list has {} entries, expected {t}", provenance.len()),
        ));
    }
    let (h, w) = region.shape();
    let values = decode_payload(payload, t * h * w, &p)?;
    let mut fields = Vec::with_capacity(t);
    for (i, code) in provenance.chars().enumerate() {
        let prov = Provenance::from_code(code)
            .ok_or_else(|| Error::format(p.clone(), format!("unknown provenance code {code:?}")))?;
        let grid = Array2::from_shape_vec((h, w), values[i * h * w..(i + 1) * h * w].to_vec())
            .expect("payload length checked");
        fields.push(RainfallField::new(region.clone(), epoch + i as i64, grid, prov)?);
    }
    RainfallSequence::new(fields)
}

// ── Terrain grids ─────────────────────────────────────────────────────────────

/// Fixed channel order: soil 0-9, vegetation 10-20, slope 21-28, elevation 29.
pub fn write_terrain(grid: &TerrainGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = terrain_bytes(grid);
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// The exact bytes `write_terrain` produces.
pub fn terrain_bytes(grid: &TerrainGrid) -> Vec<u8> {
    let region = &grid.region;
    let mut out = Vec::new();
    out.extend_from_slice(TERRAIN_MAGIC.as_bytes());
    out.push(b'\n');
    push_kv(&mut out, "region_id", &region.region_id);
    push_kv(&mut out, "H", &region.height_cells.to_string());
    push_kv(&mut out, "W", &region.width_cells.to_string());
    push_kv(&mut out, "cell_km", &region.cell_size_km.to_string());
    push_kv(&mut out, "channels", &TERRAIN_CHANNELS.to_string());
    out.extend_from_slice(SEPARATOR);
    for arr in [&grid.soil, &grid.vegetation, &grid.slope_dir] {
        for &v in arr.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &v in grid.elevation.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`write_terrain`]; re-validates one-hot groups on load.
pub fn read_terrain(path: impl AsRef<Path>) -> Result<TerrainGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let p = path.display().to_string();
    let (manifest, payload) = split_file(&bytes, &p)?;
    let mut lines = manifest.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != TERRAIN_MAGIC {
        return Err(Error::format(p, format!("bad magic line {magic:?}")));
    }
    let kv = parse_kv(lines, &p)?;
    let region = Region::new(
        get(&kv, "region_id", &p)?,
        parse_num(&kv, "H", &p)?,
        parse_num(&kv, "W", &p)?,
        parse_num(&kv, "cell_km", &p)?,
    )?;
    let channels: usize = parse_num(&kv, "channels", &p)?;
    if channels != TERRAIN_CHANNELS {
        return Err(Error::format(
            p,
            format!("expected {TERRAIN_CHANNELS} channels, got {channels}"),
        ));
    }
    let (h, w) = region.shape();
    let values = decode_payload(payload, TERRAIN_CHANNELS * h * w, &p)?;
    let plane = h * w;
    let take3 = |start: usize, count: usize| {
        Array3::from_shape_vec((count, h, w), values[start * plane..(start + count) * plane].to_vec())
            .expect("payload length checked")
    };
    let soil = take3(0, SOIL_CATEGORIES);
    let vegetation = take3(SOIL_CATEGORIES, VEGETATION_CATEGORIES);
    let slope_dir = take3(SOIL_CATEGORIES + VEGETATION_CATEGORIES, SLOPE_DIRECTIONS);
    let elev_start = (TERRAIN_CHANNELS - 1) * plane;
    let elevation = Array2::from_shape_vec((h, w), values[elev_start..].to_vec())
        .expect("payload length checked");
    TerrainGrid::new(region, soil, vegetation, slope_dir, elevation)
}

// ── Event tables ──────────────────────────────────────────────────────────────

pub fn write_events(table: &EventTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("region_id,t_index,y,x\n");
    for r in &table.rows {
        out.push_str(&format!("{},{},{},{}\n", r.region_id, r.t_index, r.y, r.x));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventTable> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(p.clone(), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "region_id,t_index,y,x" {
        return Err(Error::format(p, format!("bad event header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::format(p, format!("line {}: expected 4 fields", i + 2)));
        }
        let parse_field = |s: &str, what: &str| {
            s.parse::<i64>()
                .map_err(|_| Error::format(p.clone(), format!("line {}: bad {what} {s:?}", i + 2)))
        };
        rows.push(EventRecord {
            region_id: parts[0].to_string(),
            t_index: parse_field(parts[1], "t_index")?,
            y: parse_field(parts[2], "y")? as usize,
            x: parse_field(parts[3], "x")? as usize,
        });
    }
    Ok(EventTable::new(rows))
}

// ── Manifest plumbing ─────────────────────────────────────────────────────────

pub(crate) fn push_kv(out: &mut Vec<u8>, key: &str, value: &str) {
    out.extend_from_slice(key.as_bytes());
    out.extend_from_slice(b" = ");
    out.extend_from_slice(value.as_bytes());
    out.push(b'\n');
}

pub(crate) fn split_file<'a>(bytes: &'a [u8], path: &str) -> Result<(&'a str, &'a [u8])> {
    let sep = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| Error::format(path.to_string(), "missing --- separator"))?;
    let manifest = std::str::from_utf8(&bytes[..sep])
        .map_err(|_| Error::format(path.to_string(), "manifest is not UTF-8"))?;
    Ok((manifest, &bytes[sep + SEPARATOR.len()..]))
}

pub(crate) fn parse_kv<'a>(
    lines: impl Iterator<Item = &'a str>,
    path: &str,
) -> Result<Vec<(String, String)>> {
    let mut kv = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::format(path.to_string(), format!("bad manifest line {line:?}")))?;
        kv.push((k.to_string(), v.to_string()));
    }
    Ok(kv)
}

pub(crate) fn get(kv: &[(String, String)], key: &str, path: &str) -> Result<String> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::format(path.to_string(), format!("missing manifest key {key}")))
}

pub(crate) fn parse_num<T: std::str::FromStr>(kv: &[(String, String)], key: &str, path: &str) -> Result<T> {
    let raw = get(kv, key, path)?;
    raw.parse::<T>()
        .map_err(|_| Error::format(path.to_string(), format!("bad value for {key}: {raw:?}")))
}

pub(crate) fn decode_payload(payload: &[u8], expected_words: usize, path: &str) -> Result<Vec<f32>> {
    if payload.len() != expected_words * 4 {
        return Err(Error::format(
            path.to_string(),
            format!(
                "payload holds {} bytes, manifest implies {}",
                payload.len(),
                expected_words * 4
            ),
        ));
    }
    let mut values = Vec::with_capacity(expected_words);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if v.is_nan() {
            return Err(Error::format(path.to_string(), "NaN in payload"));
        }
        values.push(v);
    }
    Ok(values)
}
