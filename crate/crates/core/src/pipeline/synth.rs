//! Synthetic scenario generation: random terrain, advected Gaussian rain
//! cells, and a transparent ground-truth trigger oracle.
//!
//! The oracle labels a cell-hour as a landslide event when the antecedent
//! precipitation index (an exponentially decayed rainfall accumulation)
//! crosses a threshold from below while the cell is susceptible. It is the
//! labeling ground truth for everything downstream; its parameters live in
//! the config and claim no physical fidelity.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geogrid::{
    EventRecord, EventTable, Provenance, RainfallField, RainfallSequence, Region, TerrainGrid,
    SLOPE_DIRECTIONS, SOIL_CATEGORIES, VEGETATION_CATEGORIES,
};
use crate::rng::{stream, tag};

/// Which cells can produce an event: steep slope direction and soil that is
/// not sealed. Categories are indices into the one-hot terrain groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SusceptibilityRule {
    pub steep_slope_dirs: Vec<usize>,
    pub paved_soils: Vec<usize>,
}

impl Default for SusceptibilityRule {
    fn default() -> Self {
        SusceptibilityRule {
            steep_slope_dirs: vec![0, 1, 2],
            paved_soils: vec![0],
        }
    }
}

impl SusceptibilityRule {
    pub fn validate(&self) -> Result<()> {
        if self.steep_slope_dirs.iter().any(|&d| d >= SLOPE_DIRECTIONS) {
            return Err(Error::validation("steep slope category out of range"));
        }
        if self.paved_soils.iter().any(|&s| s >= SOIL_CATEGORIES) {
            return Err(Error::validation("paved soil category out of range"));
        }
        Ok(())
    }

    /// True when `(y, x)` of `terrain` can trigger an event.
    pub fn susceptible(&self, terrain: &TerrainGrid, y: usize, x: usize) -> bool {
        self.steep_slope_dirs.contains(&terrain.slope_category(y, x))
            && !self.paved_soils.contains(&terrain.soil_category(y, x))
    }
}

/// Everything the generator needs; every field has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_regions: usize,
    /// Hours of data per region (hour 0 is the dataset epoch).
    pub hours: i64,
    pub height: usize,
    pub width: usize,
    pub cell_km: f64,
    /// Initial number of live rain cells per region.
    pub initial_cells: usize,
    /// Probability of spawning a new rain cell each hour.
    pub birth_rate: f64,
    /// Rain-cell lifetime bounds (hours).
    pub lifetime_min: f64,
    pub lifetime_max: f64,
    /// Peak intensity of a rain cell (mm/h); per-cell amplitude is drawn
    /// uniformly from [amplitude/2, amplitude].
    pub amplitude: f64,
    /// Spatial footprint of a rain cell (cells).
    pub cell_sigma: f64,
    /// Region-level wind speed range (cells/h).
    pub speed_min: f64,
    pub speed_max: f64,
    /// Wind-direction drift rate bound (radians/h); each region's wind
    /// rotates slowly so motion covers many directions over time.
    pub wind_rotation: f64,
    /// Antecedent-precipitation decay factor w in (0, 1).
    pub api_decay: f64,
    /// Trigger threshold for the antecedent-precipitation index.
    pub api_threshold: f64,
    pub susceptibility: SusceptibilityRule,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_regions: 19,
            hours: 17_520,
            height: 10,
            width: 10,
            cell_km: 1.0,
            initial_cells: 2,
            birth_rate: 0.10,
            lifetime_min: 6.0,
            lifetime_max: 30.0,
            amplitude: 12.0,
            cell_sigma: 2.5,
            speed_min: 0.4,
            speed_max: 1.2,
            wind_rotation: 0.03,
            api_decay: 0.85,
            api_threshold: 40.0,
            susceptibility: SusceptibilityRule::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 {
            return Err(Error::validation("need at least one region"));
        }
        if self.hours < 1 {
            return Err(Error::validation("need at least one hour"));
        }
        if self.height < 3 || self.width < 3 {
            return Err(Error::validation("regions must be at least 3x3 cells"));
        }
        if !(self.api_decay > 0.0 && self.api_decay < 1.0) {
            return Err(Error::validation(format!(
                "decay factor must lie in (0, 1), got {}",
                self.api_decay
            )));
        }
        if !(self.api_threshold > 0.0) {
            return Err(Error::validation("trigger threshold must be positive"));
        }
        for (name, v) in [
            ("birth_rate", self.birth_rate),
            ("amplitude", self.amplitude),
            ("cell_sigma", self.cell_sigma),
            ("speed_min", self.speed_min),
            ("speed_max", self.speed_max),
            ("wind_rotation", self.wind_rotation),
            ("lifetime_min", self.lifetime_min),
            ("lifetime_max", self.lifetime_max),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.speed_max < self.speed_min || self.lifetime_max < self.lifetime_min {
            return Err(Error::validation("range bounds out of order"));
        }
        if !(self.birth_rate <= 1.0) {
            return Err(Error::validation("birth rate is a probability"));
        }
        self.susceptibility.validate()
    }
}

/// One region's share of the synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionData {
    pub region: Region,
    pub terrain: TerrainGrid,
    pub rain: RainfallSequence,
}

/// The full synthetic dataset: per-region data plus the ground-truth events.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub regions: Vec<RegionData>,
    pub events: EventTable,
}

/// Generate the full dataset described by `cfg`, deterministically in
/// `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut regions = Vec::with_capacity(cfg.n_regions);
    let mut events = Vec::new();
    for i in 0..cfg.n_regions {
        let region_id = format!("R{i:02}");
        let region = Region::new(&region_id, cfg.height, cfg.width, cfg.cell_km)?;
        let terrain = synth_terrain(
            region.clone(),
            &mut stream(cfg.seed, &[tag("synth-terrain"), i as u64]),
        )?;
        let rain = synth_rain(
            region.clone(),
            cfg,
            &mut stream(cfg.seed, &[tag("synth-rain"), i as u64]),
        )?;
        events.extend(api_events(
            &rain,
            &terrain,
            cfg.api_decay,
            cfg.api_threshold,
            &cfg.susceptibility,
        ));
        regions.push(RegionData { region, terrain, rain });
    }
    Ok(SynthDataset { regions, events: EventTable::new(events) })
}

/// The ground-truth trigger oracle.
///
/// Tracks the antecedent-precipitation index A_t = decay·A_{t−1} + r_t per
/// cell and records an event whenever A crosses the threshold from below at
/// a susceptible cell. One crossing yields one event; the index must fall
/// back under the threshold before the same cell can fire again.
pub fn api_events(
    rain: &RainfallSequence,
    terrain: &TerrainGrid,
    decay: f64,
    threshold: f64,
    rule: &SusceptibilityRule,
) -> Vec<EventRecord> {
    let (h, w) = rain.region().shape();
    let region_id = rain.region().region_id.clone();
    let mut api = Array2::<f64>::zeros((h, w));
    let mut events = Vec::new();
    for field in rain.fields() {
        for y in 0..h {
            for x in 0..w {
                let prev = api[[y, x]];
                let next = decay * prev + f64::from(field.values[[y, x]]);
                api[[y, x]] = next;
                if prev < threshold && next >= threshold && rule.susceptible(terrain, y, x) {
                    events.push(EventRecord {
                        region_id: region_id.clone(),
                        t_index: field.t_index,
                        y,
                        x,
                    });
                }
            }
        }
    }
    events
}

// ── Terrain synthesis ─────────────────────────────────────────────────────────

/// Random terrain: nearest-seed (Voronoi) patches for every categorical
/// group and a smooth elevation surface built from Gaussian hills.
pub fn synth_terrain(region: Region, rng: &mut impl Rng) -> Result<TerrainGrid> {
    let (h, w) = region.shape();
    let soil = voronoi_one_hot(h, w, SOIL_CATEGORIES, 6, rng);
    let vegetation = voronoi_one_hot(h, w, VEGETATION_CATEGORIES, 6, rng);
    let slope_dir = voronoi_one_hot(h, w, SLOPE_DIRECTIONS, 5, rng);

    let mut elevation = Array2::<f32>::zeros((h, w));
    let hills = 4;
    for _ in 0..hills {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let amp = rng.gen_range(50.0..400.0);
        let sigma = rng.gen_range(2.0..5.0);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                elevation[[y, x]] += (amp * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
            }
        }
    }
    TerrainGrid::new(region, soil, vegetation, slope_dir, elevation)
}

/// One-hot categorical field where each cell takes the category of its
/// nearest seed point; `n_seeds` patches drawn over `categories` labels.
fn voronoi_one_hot(
    h: usize,
    w: usize,
    categories: usize,
    n_seeds: usize,
    rng: &mut impl Rng,
) -> Array3<f32> {
    let seeds: Vec<(f64, f64, usize)> = (0..n_seeds)
        .map(|_| {
            (
                rng.gen_range(0.0..h as f64),
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0..categories),
            )
        })
        .collect();
    let mut out = Array3::<f32>::zeros((categories, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &(sy, sx, _)) in seeds.iter().enumerate() {
                let d = (y as f64 - sy).powi(2) + (x as f64 - sx).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            out[[seeds[best].2, y, x]] = 1.0;
        }
    }
    out
}

// ── Rainfall synthesis ────────────────────────────────────────────────────────

struct RainCell {
    y: f64,
    x: f64,
    /// Per-cell velocity jitter on top of the region wind (cells/h).
    dy: f64,
    dx: f64,
    amplitude: f64,
    sigma: f64,
    age: f64,
    lifetime: f64,
}

impl RainCell {
    /// Smooth birth/death envelope: ramps over ~3 h at each end of life, so
    /// intensity genuinely grows and decays rather than only translating.
    fn envelope(&self) -> f64 {
        let ramp = 3.0;
        (self.age / ramp).min((self.lifetime - self.age) / ramp).min(1.0).max(0.0)
    }
}

/// Rainfall as a sum of Gaussian cells advected by a slowly rotating
/// region-level wind, with random cell birth and death.
pub fn synth_rain(region: Region, cfg: &SynthConfig, rng: &mut impl Rng) -> Result<RainfallSequence> {
    let (h, w) = region.shape();
    // Cells live on an expanded domain so they can enter and leave the grid.
    let margin = 3.0 * cfg.cell_sigma;
    let speed = rng.gen_range(cfg.speed_min..=cfg.speed_max);
    let mut wind_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let wind_drift = rng.gen_range(-cfg.wind_rotation..=cfg.wind_rotation);
    let jitter = Normal::new(0.0, 0.1).expect("valid jitter distribution");

    let mut spawn = |rng: &mut dyn rand::RngCore, age: f64| RainCell {
        y: rng.gen_range(-margin..h as f64 + margin),
        x: rng.gen_range(-margin..w as f64 + margin),
        dy: jitter.sample(rng),
        dx: jitter.sample(rng),
        amplitude: rng.gen_range(0.5..=1.0) * cfg.amplitude,
        sigma: cfg.cell_sigma * rng.gen_range(0.7..=1.3),
        age,
        lifetime: rng.gen_range(cfg.lifetime_min..=cfg.lifetime_max),
    };

    let mut cells: Vec<RainCell> = (0..cfg.initial_cells)
        .map(|_| {
            let mut c = spawn(rng, 0.0);
            c.age = rng.gen_range(0.0..c.lifetime);
            c
        })
        .collect();

    let mut fields = Vec::with_capacity(cfg.hours as usize);
    for t in 0..cfg.hours {
        let mut values = Array2::<f32>::zeros((h, w));
        for cell in &cells {
            let a = cell.amplitude * cell.envelope();
            if a <= 0.0 {
                continue;
            }
            let two_s2 = 2.0 * cell.sigma * cell.sigma;
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cell.y).powi(2) + (x as f64 - cell.x).powi(2);
                    values[[y, x]] += (a * (-d2 / two_s2).exp()) as f32;
                }
            }
        }
        fields.push(RainfallField::new(
            region.clone(),
            t,
            values,
            Provenance::Observed,
        )?);

        // Advance the weather one hour.
        wind_angle += wind_drift;
        let (wy, wx) = (speed * wind_angle.sin(), speed * wind_angle.cos());
        for cell in &mut cells {
            cell.y += wy + cell.dy;
            cell.x += wx + cell.dx;
            cell.age += 1.0;
        }
        cells.retain(|c| {
            c.age < c.lifetime
                && c.y > -2.0 * margin
                && c.y < h as f64 + 2.0 * margin
                && c.x > -2.0 * margin
                && c.x < w as f64 + 2.0 * margin
        });
        if rng.gen_bool(cfg.birth_rate) {
            cells.push(spawn(rng, 0.0));
        }
    }
    RainfallSequence::new(fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_regions: 2,
            hours: 120,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    /// Uniform-category terrain for oracle tests: every cell shares one
    /// soil/vegetation/slope category.
    fn uniform_terrain(region: Region, soil_cat: usize, slope_cat: usize) -> TerrainGrid {
        let (h, w) = region.shape();
        let mut soil = Array3::<f32>::zeros((SOIL_CATEGORIES, h, w));
        soil.index_axis_mut(ndarray::Axis(0), soil_cat).fill(1.0);
        let mut veg = Array3::<f32>::zeros((VEGETATION_CATEGORIES, h, w));
        veg.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let mut slope = Array3::<f32>::zeros((SLOPE_DIRECTIONS, h, w));
        slope.index_axis_mut(ndarray::Axis(0), slope_cat).fill(1.0);
        let elevation = Array2::from_shape_fn((h, w), |(y, x)| (y * w + x) as f32);
        TerrainGrid::new(region, soil, veg, slope, elevation).unwrap()
    }

    fn constant_rain(region: Region, hours: i64, value: f32) -> RainfallSequence {
        let fields = (0..hours)
            .map(|t| {
                let values = Array2::from_elem(region.shape(), value);
                RainfallField::new(region.clone(), t, values, Provenance::Observed).unwrap()
            })
            .collect();
        RainfallSequence::new(fields).unwrap()
    }

    #[test]
    fn steady_rain_above_saturation_threshold_triggers_events() {
        // Under constant rain r the index approaches r/(1−w); choosing
        // r > θ(1−w) guarantees a crossing in finite time.
        let region = Region::default_size("R00");
        let terrain = uniform_terrain(region.clone(), 2, 0);
        let rule = SusceptibilityRule::default();
        let (decay, threshold) = (0.85, 40.0);
        let r = (threshold * (1.0 - decay) * 1.5) as f32;
        let rain = constant_rain(region, 120, r);
        let events = api_events(&rain, &terrain, decay, threshold, &rule);
        assert!(!events.is_empty());
        // The crossing hour is the same for every cell (identical forcing),
        // and every cell is susceptible, so one event per cell.
        assert_eq!(events.len(), 100);
        let t0 = events[0].t_index;
        assert!(events.iter().all(|e| e.t_index == t0));
    }

    #[test]
    fn rain_below_saturation_threshold_never_triggers() {
        // r < θ(1−w) caps the index at r/(1−w) < θ: no event, ever.
        let region = Region::default_size("R00");
        let terrain = uniform_terrain(region.clone(), 2, 0);
        let rule = SusceptibilityRule::default();
        let (decay, threshold) = (0.85, 40.0);
        let r = (threshold * (1.0 - decay) * 0.9) as f32;
        let rain = constant_rain(region, 500, r);
        assert!(api_events(&rain, &terrain, decay, threshold, &rule).is_empty());
    }

    #[test]
    fn paved_or_flat_cells_never_trigger() {
        let region = Region::default_size("R00");
        let rule = SusceptibilityRule::default();
        let rain = constant_rain(region.clone(), 60, 30.0);
        // Paved soil (category 0) blocks events even on a steep slope.
        let paved = uniform_terrain(region.clone(), 0, 0);
        assert!(api_events(&rain, &paved, 0.85, 40.0, &rule).is_empty());
        // Gentle slope direction (category 7, not in the steep set) blocks too.
        let gentle = uniform_terrain(region, 2, 7);
        assert!(api_events(&rain, &gentle, 0.85, 40.0, &rule).is_empty());
    }

    #[test]
    fn one_crossing_yields_one_event_until_index_falls_back() {
        // 20 wet hours, then dry long enough for the index to decay back
        // under the threshold, then wet again: exactly two events.
        let region = Region::new("R00", 3, 3, 1.0).unwrap();
        let terrain = uniform_terrain(region.clone(), 2, 0);
        let rule = SusceptibilityRule::default();
        let (decay, threshold) = (0.5f64, 10.0f64);
        let wet = 30.0f32; // steady state 60 > 10
        let mut values = Vec::new();
        values.extend(std::iter::repeat(wet).take(20));
        values.extend(std::iter::repeat(0.0f32).take(30));
        values.extend(std::iter::repeat(wet).take(20));
        let fields = values
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                RainfallField::new(
                    region.clone(),
                    t as i64,
                    Array2::from_elem((3, 3), v),
                    Provenance::Observed,
                )
                .unwrap()
            })
            .collect();
        let rain = RainfallSequence::new(fields).unwrap();
        let events = api_events(&rain, &terrain, decay, threshold, &rule);
        // 9 susceptible cells, two crossings each.
        assert_eq!(events.len(), 18);
        let hours: std::collections::BTreeSet<i64> =
            events.iter().map(|e| e.t_index).collect();
        assert_eq!(hours.len(), 2);
    }

    #[test]
    fn zero_amplitude_means_no_rain_and_no_events() {
        let cfg = SynthConfig { amplitude: 0.0, ..small_cfg() };
        let data = synth_generate(&cfg).unwrap();
        assert!(data.events.rows.is_empty());
        for rd in &data.regions {
            for f in rd.rain.fields() {
                assert!(f.values.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn same_seed_reproduces_identical_datasets() {
        let cfg = small_cfg();
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_dataset_is_well_formed() {
        let cfg = small_cfg();
        let data = synth_generate(&cfg).unwrap();
        assert_eq!(data.regions.len(), 2);
        for rd in &data.regions {
            assert_eq!(rd.rain.len() as i64, cfg.hours);
            assert_eq!(rd.rain.epoch(), 0);
            assert_eq!(rd.terrain.region, rd.region);
        }
        // Region ids are distinct and zero-padded for stable ordering.
        assert_eq!(data.regions[0].region.region_id, "R00");
        assert_eq!(data.regions[1].region.region_id, "R01");
        data.events
            .validate(
                &data.regions.iter().map(|r| r.region.clone()).collect::<Vec<_>>(),
                cfg.hours,
            )
            .unwrap();
    }

    #[test]
    fn default_style_config_produces_rain_and_events() {
        // The generator has to produce actual weather: nonzero rain, some
        // dry spells (for the rainy-hour filter), and a nonempty event
        // table at the default thresholds.
        let cfg = SynthConfig { n_regions: 4, hours: 800, seed: 3, ..SynthConfig::default() };
        let data = synth_generate(&cfg).unwrap();
        let mut wet_hours = 0usize;
        let mut total_hours = 0usize;
        for rd in &data.regions {
            for f in rd.rain.fields() {
                total_hours += 1;
                let max = f.values.iter().cloned().fold(0.0f32, f32::max);
                if max > 0.5 {
                    wet_hours += 1;
                }
            }
        }
        let wet_frac = wet_hours as f64 / total_hours as f64;
        assert!(wet_frac > 0.1 && wet_frac < 0.98, "wet fraction {wet_frac}");
        assert!(!data.events.rows.is_empty());
    }
}
