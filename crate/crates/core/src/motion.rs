//! Dense motion estimation from consecutive rainfall fields.
//!
//! Coarse-to-fine pyramidal Lucas-Kanade with a ridge-regularized window
//! solve. The flow convention matches the advection operator in
//! [`crate::nowcast`]: a pattern at position `p` moves to `p + (u, v)` over
//! one hour, with `u` along columns (east) and `v` along rows.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geogrid::{RainfallField, Region};

/// Per-cell horizontal displacement velocity in cells/hour.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub region: Region,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl MotionField {
    pub fn new(region: Region, u: Array2<f64>, v: Array2<f64>, max_speed: f64) -> Result<Self> {
        if u.dim() != region.shape() || v.dim() != region.shape() {
            return Err(Error::validation("motion components must match region shape"));
        }
        for &c in u.iter().chain(v.iter()) {
            if !c.is_finite() {
                return Err(Error::validation("motion components must be finite"));
            }
            if c.abs() > max_speed {
                return Err(Error::validation(format!(
                    "motion component {c} exceeds max speed {max_speed}"
                )));
            }
        }
        Ok(MotionField { region, u, v })
    }

    /// Spatially constant motion, mostly for tests and forecasting drills.
    pub fn uniform(region: Region, u: f64, v: f64) -> Self {
        let shape = region.shape();
        MotionField {
            region,
            u: Array2::from_elem(shape, u),
            v: Array2::from_elem(shape, v),
        }
    }

    pub fn zero(region: Region) -> Self {
        Self::uniform(region, 0.0, 0.0)
    }
}

/// Lucas-Kanade parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Window half-width; radius 2 gives a 5x5 window.
    pub window_radius: usize,
    pub pyramid_levels: usize,
    pub ridge_lambda: f64,
    pub iterations_per_level: usize,
    /// Component clamp in cells/hour.
    pub max_speed: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            window_radius: 2,
            pyramid_levels: 2,
            ridge_lambda: 1e-3,
            iterations_per_level: 3,
            max_speed: 5.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::validation("window radius must be at least 1"));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::validation("pyramid levels must be at least 1"));
        }
        if !(self.ridge_lambda > 0.0) {
            return Err(Error::validation("ridge lambda must be positive"));
        }
        if self.iterations_per_level < 1 {
            return Err(Error::validation("iterations per level must be at least 1"));
        }
        if !(self.max_speed > 0.0) {
            return Err(Error::validation("max speed must be positive"));
        }
        Ok(())
    }
}

// ── Window solve ──────────────────────────────────────────────────────────────

/// Solve the ridge-regularized normal equations for one window.
///
/// Minimizes `sum_window (Ix*u + Iy*v + It)^2 + lambda*(u^2 + v^2)` over the
/// window centered at `center`, clamped to the grid. The ridge term keeps the
/// 2x2 system solvable even for textureless windows, where the solution
/// degrades to (0, 0).
pub fn lk_solve_window(
    ix: &Array2<f64>,
    iy: &Array2<f64>,
    it: &Array2<f64>,
    center: (usize, usize),
    cfg: &FlowConfig,
) -> (f64, f64) {
    let (h, w) = ix.dim();
    debug_assert_eq!(iy.dim(), (h, w));
    debug_assert_eq!(it.dim(), (h, w));
    let r = cfg.window_radius as isize;
    let (cy, cx) = (center.0 as isize, center.1 as isize);
    let y0 = (cy - r).max(0) as usize;
    let y1 = ((cy + r) as usize).min(h - 1);
    let x0 = (cx - r).max(0) as usize;
    let x1 = ((cx + r) as usize).min(w - 1);

    let (mut gxx, mut gxy, mut gyy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let gx = ix[[y, x]];
            let gy = iy[[y, x]];
            let gt = it[[y, x]];
            gxx += gx * gx;
            gxy += gx * gy;
            gyy += gy * gy;
            bx += gx * gt;
            by += gy * gt;
        }
    }
    let l = cfg.ridge_lambda;
    let det = (gxx + l) * (gyy + l) - gxy * gxy;
    let u = ((gyy + l) * (-bx) - gxy * (-by)) / det;
    let v = ((gxx + l) * (-by) - gxy * (-bx)) / det;
    (u, v)
}

// ── Pyramid machinery ─────────────────────────────────────────────────────────

/// 2x box downsample; odd trailing rows/columns average over the cells present.
fn downsample(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = src.dim();
    let (h2, w2) = ((h + 1) / 2, (w + 1) / 2);
    Array2::from_shape_fn((h2, w2), |(y, x)| {
        let mut sum = 0.0;
        let mut count = 0.0;
        for dy in 0..2 {
            for dx in 0..2 {
                let (sy, sx) = (2 * y + dy, 2 * x + dx);
                if sy < h && sx < w {
                    sum += src[[sy, sx]];
                    count += 1.0;
                }
            }
        }
        sum / count
    })
}

/// Nearest-neighbour upsample of a flow component, doubling the velocity to
/// account for the resolution change.
fn upsample_flow(src: &Array2<f64>, target: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(target, |(y, x)| {
        let sy = (y / 2).min(src.dim().0 - 1);
        let sx = (x / 2).min(src.dim().1 - 1);
        src[[sy, sx]] * 2.0
    })
}

/// Bilinear sample with zero outside the domain, matching the advection
/// boundary policy.
pub(crate) fn sample_bilinear(grid: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = grid.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 {
            return 0.0;
        }
        let (yy, xx) = (yy as usize, xx as usize);
        if yy >= h || xx >= w {
            0.0
        } else {
            grid[[yy, xx]]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Advect `grid` by one step of the flow: `out(p) = grid(p - w(p))`.
fn warp_forward(grid: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(grid.dim(), |(y, x)| {
        sample_bilinear(grid, y as f64 - v[[y, x]], x as f64 - u[[y, x]])
    })
}

/// Central differences in the interior, one-sided at the borders.
fn spatial_gradients(grid: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = grid.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        if x == 0 {
            grid[[y, 1]] - grid[[y, 0]]
        } else if x == w - 1 {
            grid[[y, w - 1]] - grid[[y, w - 2]]
        } else {
            (grid[[y, x + 1]] - grid[[y, x - 1]]) / 2.0
        }
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        if y == 0 {
            grid[[1, x]] - grid[[0, x]]
        } else if y == h - 1 {
            grid[[h - 1, x]] - grid[[h - 2, x]]
        } else {
            (grid[[y + 1, x]] - grid[[y - 1, x]]) / 2.0
        }
    });
    (gx, gy)
}

// ── Flow estimation ───────────────────────────────────────────────────────────

/// Estimate the motion field from the three most recent rainfall fields.
///
/// Builds box-downsampled pyramids, then refines a single flow estimate from
/// coarse to fine. Each refinement warps the earlier frame of a pair toward
/// the later one, solves the window system at every cell for both frame pairs
/// `(f0, f1)` and `(f1, f2)`, and applies the mean of the two per-cell
/// solutions. Final speeds are clamped per component to `cfg.max_speed`.
pub fn estimate_flow(
    f0: &RainfallField,
    f1: &RainfallField,
    f2: &RainfallField,
    cfg: &FlowConfig,
) -> Result<MotionField> {
    cfg.validate()?;
    if f0.region != f1.region || f1.region != f2.region {
        return Err(Error::validation("flow inputs must share one region"));
    }
    if f1.t_index != f0.t_index + 1 || f2.t_index != f1.t_index + 1 {
        return Err(Error::validation(format!(
            "flow inputs must be consecutive hours, got {}, {}, {}",
            f0.t_index, f1.t_index, f2.t_index
        )));
    }

    let to_f64 = |f: &RainfallField| f.values.mapv(f64::from);
    let frames = [to_f64(f0), to_f64(f1), to_f64(f2)];

    // Pyramids, finest first; stop before a level drops below 3 cells a side.
    let mut pyramids: Vec<[Array2<f64>; 3]> = vec![frames];
    for _ in 1..cfg.pyramid_levels {
        let prev = pyramids.last().unwrap();
        let (h, w) = prev[0].dim();
        if (h + 1) / 2 < 3 || (w + 1) / 2 < 3 {
            break;
        }
        pyramids.push([
            downsample(&prev[0]),
            downsample(&prev[1]),
            downsample(&prev[2]),
        ]);
    }

    let coarsest = pyramids.len() - 1;
    let mut u = Array2::zeros(pyramids[coarsest][0].dim());
    let mut v = Array2::zeros(pyramids[coarsest][0].dim());

    for level in (0..pyramids.len()).rev() {
        let [l0, l1, l2] = &pyramids[level];
        if level != coarsest {
            u = upsample_flow(&u, l0.dim());
            v = upsample_flow(&v, l0.dim());
        }
        // velocities at this level are full-resolution cells/h divided by 2^level
        let level_clamp = cfg.max_speed / (1u64 << level) as f64;
        for _ in 0..cfg.iterations_per_level {
            let warped0 = warp_forward(l0, &u, &v);
            let warped1 = warp_forward(l1, &u, &v);
            let (ix0, iy0) = spatial_gradients(&warped0);
            let (ix1, iy1) = spatial_gradients(&warped1);
            let it0 = l1 - &warped0;
            let it1 = l2 - &warped1;
            let (h, w) = l0.dim();
            let mut du = Array2::zeros((h, w));
            let mut dv = Array2::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    let (a_u, a_v) = lk_solve_window(&ix0, &iy0, &it0, (y, x), cfg);
                    let (b_u, b_v) = lk_solve_window(&ix1, &iy1, &it1, (y, x), cfg);
                    du[[y, x]] = (a_u + b_u) / 2.0;
                    dv[[y, x]] = (a_v + b_v) / 2.0;
                }
            }
            u += &du;
            v += &dv;
            u.mapv_inplace(|c| c.clamp(-level_clamp, level_clamp));
            v.mapv_inplace(|c| c.clamp(-level_clamp, level_clamp));
        }
    }

    u.mapv_inplace(|c| c.clamp(-cfg.max_speed, cfg.max_speed));
    v.mapv_inplace(|c| c.clamp(-cfg.max_speed, cfg.max_speed));
    MotionField::new(f0.region.clone(), u, v, cfg.max_speed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geogrid::Provenance;

    fn field(region: &Region, t: i64, values: Array2<f32>) -> RainfallField {
        RainfallField::new(region.clone(), t, values, Provenance::Observed).unwrap()
    }

    fn gaussian_blob(shape: (usize, usize), cy: f64, cx: f64, sigma: f64, amp: f32) -> Array2<f32> {
        Array2::from_shape_fn(shape, |(y, x)| {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            amp * (-d2 / (2.0 * sigma * sigma)).exp() as f32
        })
    }

    /// Mean flow over cells whose gradient magnitude exceeds 10% of the max.
    fn mean_flow_high_gradient(flow: &MotionField, reference: &Array2<f32>) -> (f64, f64) {
        let ref64 = reference.mapv(f64::from);
        let (gx, gy) = spatial_gradients(&ref64);
        let mag = Array2::from_shape_fn(ref64.dim(), |(y, x)| {
            (gx[[y, x]].powi(2) + gy[[y, x]].powi(2)).sqrt()
        });
        let max = mag.iter().cloned().fold(0.0f64, f64::max);
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut n = 0.0;
        for y in 0..ref64.dim().0 {
            for x in 0..ref64.dim().1 {
                if mag[[y, x]] > 0.1 * max {
                    su += flow.u[[y, x]];
                    sv += flow.v[[y, x]];
                    n += 1.0;
                }
            }
        }
        (su / n, sv / n)
    }

    fn translated_blob_frames(region: &Region, dx: f64, dy: f64) -> [RainfallField; 3] {
        let (h, w) = region.shape();
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        [
            field(region, 0, gaussian_blob((h, w), cy - dy, cx - dx, 2.0, 10.0)),
            field(region, 1, gaussian_blob((h, w), cy, cx, 2.0, 10.0)),
            field(region, 2, gaussian_blob((h, w), cy + dy, cx + dx, 2.0, 10.0)),
        ]
    }

    #[test]
    fn window_solve_stationary_scene_is_zero() {
        let ix = Array2::from_elem((5, 5), 1.3);
        let iy = Array2::from_elem((5, 5), -0.7);
        let it = Array2::zeros((5, 5));
        let (u, v) = lk_solve_window(&ix, &iy, &it, (2, 2), &FlowConfig::default());
        assert_eq!((u, v), (0.0, 0.0));
    }

    #[test]
    fn window_solve_flat_texture_is_zero() {
        let ix = Array2::zeros((5, 5));
        let iy = Array2::zeros((5, 5));
        let it = Array2::from_elem((5, 5), 3.0);
        let (u, v) = lk_solve_window(&ix, &iy, &it, (2, 2), &FlowConfig::default());
        assert_eq!((u, v), (0.0, 0.0));
    }

    #[test]
    fn window_solve_matches_hand_solution() {
        // Ix=1, Iy=0, It=-1 over the full 5x5 window: u = 25 / (25 + lambda)
        let ix = Array2::from_elem((5, 5), 1.0);
        let iy = Array2::zeros((5, 5));
        let it = Array2::from_elem((5, 5), -1.0);
        let cfg = FlowConfig::default();
        let (u, v) = lk_solve_window(&ix, &iy, &it, (2, 2), &cfg);
        let expected = 25.0 / (25.0 + cfg.ridge_lambda);
        assert!((u - expected).abs() < 1e-12, "u = {u}, expected {expected}");
        assert_eq!(v, 0.0);
    }

    #[test]
    fn identical_fields_give_exactly_zero_flow() {
        let region = Region::default_size("R00");
        let values = gaussian_blob((10, 10), 4.0, 6.0, 2.0, 8.0);
        let f0 = field(&region, 0, values.clone());
        let f1 = field(&region, 1, values.clone());
        let f2 = field(&region, 2, values);
        let flow = estimate_flow(&f0, &f1, &f2, &FlowConfig::default()).unwrap();
        assert!(flow.u.iter().all(|&c| c == 0.0));
        assert!(flow.v.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn recovers_eastward_translation() {
        let region = Region::new("R00", 20, 20, 1.0).unwrap();
        let [f0, f1, f2] = translated_blob_frames(&region, 1.0, 0.0);
        let flow = estimate_flow(&f0, &f1, &f2, &FlowConfig::default()).unwrap();
        let (mu, mv) = mean_flow_high_gradient(&flow, &f1.values);
        assert!((mu - 1.0).abs() < 0.2, "mean u = {mu}");
        assert!(mv.abs() < 0.2, "mean v = {mv}");
    }

    #[test]
    fn recovers_northward_translation() {
        let region = Region::new("R00", 20, 20, 1.0).unwrap();
        let [f0, f1, f2] = translated_blob_frames(&region, 0.0, -1.0);
        let flow = estimate_flow(&f0, &f1, &f2, &FlowConfig::default()).unwrap();
        let (mu, mv) = mean_flow_high_gradient(&flow, &f1.values);
        assert!(mu.abs() < 0.2, "mean u = {mu}");
        assert!((mv + 1.0).abs() < 0.2, "mean v = {mv}");
    }

    #[test]
    fn rejects_non_consecutive_frames() {
        let region = Region::default_size("R00");
        let f0 = RainfallField::zeros(region.clone(), 0, Provenance::Observed);
        let f1 = RainfallField::zeros(region.clone(), 1, Provenance::Observed);
        let f3 = RainfallField::zeros(region, 3, Provenance::Observed);
        assert!(estimate_flow(&f0, &f1, &f3, &FlowConfig::default()).is_err());
    }

    #[test]
    fn all_zero_rain_yields_finite_zero_flow() {
        let region = Region::default_size("R00");
        let f0 = RainfallField::zeros(region.clone(), 0, Provenance::Observed);
        let f1 = RainfallField::zeros(region.clone(), 1, Provenance::Observed);
        let f2 = RainfallField::zeros(region, 2, Provenance::Observed);
        let flow = estimate_flow(&f0, &f1, &f2, &FlowConfig::default()).unwrap();
        assert!(flow.u.iter().chain(flow.v.iter()).all(|&c| c == 0.0));
    }

    #[test]
    fn rotating_inputs_rotates_flow() {
        // The index transform rot(a)[y, x] = a[x, w-1-y] sends a displacement
        // (u, v) in the original frames to (v, -u) in the rotated frames.
        let region = Region::new("R00", 20, 20, 1.0).unwrap();
        let [f0, f1, f2] = translated_blob_frames(&region, 1.0, 0.4);
        let cfg = FlowConfig::default();
        let flow = estimate_flow(&f0, &f1, &f2, &cfg).unwrap();

        let rot = |a: &Array2<f32>| -> Array2<f32> {
            let (h, w) = a.dim();
            Array2::from_shape_fn((w, h), |(y, x)| a[[x, w - 1 - y]])
        };
        let rf = |f: &RainfallField| field(&region, f.t_index, rot(&f.values));
        let flow_r = estimate_flow(&rf(&f0), &rf(&f1), &rf(&f2), &cfg).unwrap();

        let (h, w) = (20usize, 20usize);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                // rotated cell (y, x) pulls from original cell (x, w-1-y)
                let (yo, xo) = (x, w - 1 - y);
                let (u, v) = (flow.u[[yo, xo]], flow.v[[yo, xo]]);
                let (ur, vr) = (flow_r.u[[y, x]], flow_r.v[[y, x]]);
                assert!(
                    (ur - v).abs() < 1e-6 && (vr - -u).abs() < 1e-6,
                    "at ({y}, {x}): rotated ({ur}, {vr}) vs expected ({v}, {})",
                    -u
                );
            }
        }
    }
}
