//! Training-view augmentation: temporally correlated displacement of the
//! rainfall sequence plus zero-mean noise.
//!
//! The displacement is a cumulative random walk, so consecutive hours move
//! together the way a forecast position error drifts, rather than jittering
//! independently. Terrain is geographically anchored and never shifted; only
//! its continuous channel (normalized elevation) receives noise, since
//! perturbing one-hot categories would break their invariant.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geogrid::{Provenance, RainfallField, RainfallSequence, TerrainGrid};

/// Per-hour spatial offsets forming a random walk.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementPath {
    /// Cumulative (dx, dy) offset in cells at each step.
    pub offsets: Vec<(f64, f64)>,
    /// Independent per-step increments; `offsets` are their prefix sums.
    pub increments: Vec<(f64, f64)>,
}

impl DisplacementPath {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// A path of `len` zero offsets (the identity displacement).
    pub fn zero(len: usize) -> Self {
        DisplacementPath {
            offsets: vec![(0.0, 0.0); len],
            increments: vec![(0.0, 0.0); len],
        }
    }
}

/// Augmentation noise scales; all zero means the identity augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Random-walk increment scale, cells per step per axis.
    pub sigma_disp: f64,
    /// Rainfall noise scale, mm/h.
    pub sigma_rain_noise: f64,
    /// Normalized-elevation noise scale.
    pub sigma_terrain_noise: f64,
    /// Master seed; per-sample streams are derived from it.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            sigma_disp: 0.5,
            sigma_rain_noise: 0.5,
            sigma_terrain_noise: 0.05,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, sigma) in [
            ("sigma_disp", self.sigma_disp),
            ("sigma_rain_noise", self.sigma_rain_noise),
            ("sigma_terrain_noise", self.sigma_terrain_noise),
        ] {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::validation(format!(
                    "{name} must be finite and non-negative, got {sigma}"
                )));
            }
        }
        Ok(())
    }
}

/// Draw a `len`-step random-walk path with per-axis increments
/// `Normal(0, sigma_disp^2)`.
///
/// Each step draws the x increment, then the y increment; the sampling order
/// is part of the reproducibility contract.
pub fn sample_displacement_path(
    len: usize,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<DisplacementPath> {
    cfg.validate()?;
    if len < 1 {
        return Err(Error::validation("displacement path length must be at least 1"));
    }
    let normal = Normal::new(0.0, cfg.sigma_disp).expect("validated sigma");
    let mut increments = Vec::with_capacity(len);
    let mut offsets = Vec::with_capacity(len);
    let (mut ox, mut oy) = (0.0, 0.0);
    for _ in 0..len {
        let ex = normal.sample(rng);
        let ey = normal.sample(rng);
        increments.push((ex, ey));
        ox += ex;
        oy += ey;
        offsets.push((ox, oy));
    }
    Ok(DisplacementPath { offsets, increments })
}

/// Bilinear sample of `grid` at `(y, x)` with `fill` outside the domain.
fn sample_bilinear_fill(grid: &Array2<f64>, y: f64, x: f64, fill: f64) -> f64 {
    let (h, w) = grid.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 {
            return fill;
        }
        let (yy, xx) = (yy as usize, xx as usize);
        if yy >= h || xx >= w {
            fill
        } else {
            grid[[yy, xx]]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Shift each field of `seq` by its cumulative offset.
///
/// Field `t` is resampled at `p - offsets[t]` with bilinear interpolation and
/// `fill` outside the domain, so a positive `dx` moves the pattern east. The
/// output carries `Augmented` provenance.
pub fn apply_displacement(
    seq: &RainfallSequence,
    path: &DisplacementPath,
    fill: f32,
) -> Result<RainfallSequence> {
    if path.len() != seq.len() {
        return Err(Error::validation(format!(
            "displacement path length {} does not match sequence length {}",
            path.len(),
            seq.len()
        )));
    }
    if !(fill >= 0.0) || !fill.is_finite() {
        return Err(Error::validation("displacement fill must be finite and non-negative"));
    }
    let mut fields = Vec::with_capacity(seq.len());
    for (field, &(dx, dy)) in seq.fields().iter().zip(&path.offsets) {
        let source = field.values.mapv(f64::from);
        let values = Array2::from_shape_fn(field.values.dim(), |(y, x)| {
            let v = sample_bilinear_fill(&source, y as f64 - dy, x as f64 - dx, f64::from(fill));
            v.max(0.0) as f32
        });
        fields.push(RainfallField::new(
            field.region.clone(),
            field.t_index,
            values,
            Provenance::Augmented,
        )?);
    }
    RainfallSequence::new(fields)
}

/// Add per-cell `Normal(0, sigma^2)` noise to every field, clamping at zero.
pub fn add_rain_noise(
    seq: &RainfallSequence,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<RainfallSequence> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::validation("rain noise sigma must be finite and non-negative"));
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut fields = Vec::with_capacity(seq.len());
    for field in seq.fields() {
        let values = field
            .values
            .mapv(|v| (f64::from(v) + normal.sample(rng)).max(0.0) as f32);
        fields.push(RainfallField::new(
            field.region.clone(),
            field.t_index,
            values,
            Provenance::Augmented,
        )?);
    }
    RainfallSequence::new(fields)
}

/// Add per-cell `Normal(0, sigma^2)` noise to the normalized elevation channel.
pub fn add_terrain_noise(
    terrain: &TerrainGrid,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<TerrainGrid> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::validation("terrain noise sigma must be finite and non-negative"));
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let delta = Array2::from_shape_fn(terrain.region.shape(), |_| normal.sample(rng));
    terrain.perturb_elevation_norm(&delta)
}

/// Produce one augmented view of a (rainfall, terrain) pair.
///
/// Draw order is fixed — displacement path, rainfall noise, terrain noise —
/// so a given RNG stream always yields the same view. Terrain spatial
/// positions never shift; rainfall stays non-negative.
pub fn augment_fields(
    rain: &RainfallSequence,
    terrain: &TerrainGrid,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(RainfallSequence, TerrainGrid)> {
    cfg.validate()?;
    let path = sample_displacement_path(rain.len(), cfg, rng)?;
    let displaced = apply_displacement(rain, &path, 0.0)?;
    let noised = add_rain_noise(&displaced, cfg.sigma_rain_noise, rng)?;
    let terrain = add_terrain_noise(terrain, cfg.sigma_terrain_noise, rng)?;
    Ok((noised, terrain))
}
