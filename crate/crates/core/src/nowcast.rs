//! Rainfall nowcasting by semi-Lagrangian advection.
//!
//! The latest observed field is pushed along a motion field, one hour at a
//! time, to produce forecasts up to several hours ahead. Motion is held
//! constant across lead times: the scheme extrapolates, it does not model
//! growth or decay.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geogrid::{Provenance, RainfallField};
use crate::motion::{sample_bilinear, MotionField};

/// One backward semi-Lagrangian step: `out(p) = in(p - dt * w(p))`.
///
/// Sampling is bilinear with zero inflow at the boundary, so mass neither
/// wraps nor appears at edges. The result carries `Forecast` provenance and a
/// timestamp advanced by `dt` rounded to the nearest whole hour.
pub fn advect_step(field: &RainfallField, motion: &MotionField, dt: f64) -> Result<RainfallField> {
    if motion.region != field.region {
        return Err(Error::validation("advection motion must match the field region"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::validation("advection dt must be a positive number of hours"));
    }
    let source = field.values.mapv(f64::from);
    let values = Array2::from_shape_fn(field.values.dim(), |(y, x)| {
        let sy = y as f64 - dt * motion.v[[y, x]];
        let sx = x as f64 - dt * motion.u[[y, x]];
        sample_bilinear(&source, sy, sx).max(0.0) as f32
    });
    RainfallField::new(
        field.region.clone(),
        field.t_index + dt.round() as i64,
        values,
        Provenance::Forecast,
    )
}

/// Iterate [`advect_step`] with `dt = 1` to produce `horizon` hourly fields
/// at timestamps `latest + 1 ..= latest + horizon`.
pub fn forecast(
    latest: &RainfallField,
    motion: &MotionField,
    horizon: usize,
) -> Result<Vec<RainfallField>> {
    if horizon < 1 {
        return Err(Error::validation("forecast horizon must be at least 1 hour"));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut current = latest.clone();
    for _ in 0..horizon {
        current = advect_step(&current, motion, 1.0)?;
        out.push(current.clone());
    }
    Ok(out)
}
