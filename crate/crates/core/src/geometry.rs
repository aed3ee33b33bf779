//! Frustum geometry, polar/Cartesian point mappings and whole-frame resampling.
//!
//! Coordinates follow image conventions: `x` is the column, `y` the row, with
//! `y` growing downwards away from the probe. A beam at angle `alpha` (radians,
//! measured from the downward vertical) and depth `r` lands at
//!
//! ```text
//! x = apex_x + r sin(alpha)
//! y = apex_y + r cos(alpha)
//! ```
//!
//! Polar frames are stored angle-major: row `i` holds the samples along the
//! beam at angle `alpha_i`, column `j` the depth `r_j`. Both axes are uniform
//! partitions of the frustum extent with endpoints included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for points produced by the forward mapping that land a rounding error
/// outside the grid or frustum.
const EDGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrustumGeometry {
    pub apex_x: f64,
    pub apex_y: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl FrustumGeometry {
    /// Convex-probe sector for a `height x width` frame: apex at top centre,
    /// +/-30 degrees, depth from 4 px to the bottom row.
    pub fn default_for(height: usize, width: usize) -> Self {
        Self {
            apex_x: (width as f64 - 1.0) / 2.0,
            apex_y: 0.0,
            alpha_min: -std::f64::consts::FRAC_PI_6,
            alpha_max: std::f64::consts::FRAC_PI_6,
            r_min: 4.0,
            r_max: height as f64 - 1.0,
        }
    }

    /// Checks the parameter invariants that do not depend on a frame size.
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.apex_x,
            self.apex_y,
            self.alpha_min,
            self.alpha_max,
            self.r_min,
            self.r_max,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("geometry has non-finite parameters"));
        }
        if self.alpha_min >= self.alpha_max {
            return Err(Error::domain(format!(
                "alpha_min {} must be below alpha_max {}",
                self.alpha_min, self.alpha_max
            )));
        }
        if self.r_min < 0.0 || self.r_min >= self.r_max {
            return Err(Error::domain(format!(
                "radial extent [{}, {}] is empty or negative",
                self.r_min, self.r_max
            )));
        }
        if self.alpha_min <= -std::f64::consts::FRAC_PI_2 || self.alpha_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::domain("angular extent must stay below the apex"));
        }
        Ok(())
    }

    /// Validates and additionally checks that the whole footprint lies inside
    /// a `height x width` pixel grid.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        let (x_lo, x_hi, y_lo, y_hi) = self.bounding_box();
        let w = width as f64 - 1.0;
        let h = height as f64 - 1.0;
        if x_lo < -EDGE_TOL || y_lo < -EDGE_TOL || x_hi > w + EDGE_TOL || y_hi > h + EDGE_TOL {
            return Err(Error::domain(format!(
                "frustum footprint [{x_lo:.3}, {x_hi:.3}] x [{y_lo:.3}, {y_hi:.3}] exceeds {height}x{width} frame"
            )));
        }
        Ok(())
    }

    /// Tight bounding box `(x_lo, x_hi, y_lo, y_hi)` of the sector.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let mut xs = Vec::with_capacity(6);
        let mut ys = Vec::with_capacity(6);
        let mut push = |r: f64, a: f64| {
            xs.push(self.apex_x + r * a.sin());
            ys.push(self.apex_y + r * a.cos());
        };
        for r in [self.r_min, self.r_max] {
            push(r, self.alpha_min);
            push(r, self.alpha_max);
            if self.alpha_min < 0.0 && self.alpha_max > 0.0 {
                push(r, 0.0);
            }
        }
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min(&xs), max(&xs), min(&ys), max(&ys))
    }

    pub fn contains_polar(&self, r: f64, alpha: f64) -> bool {
        r >= self.r_min - EDGE_TOL
            && r <= self.r_max + EDGE_TOL
            && alpha >= self.alpha_min - EDGE_TOL
            && alpha <= self.alpha_max + EDGE_TOL
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (r, alpha) = self.to_polar(x, y);
        self.contains_polar(r, alpha)
    }

    /// Angle of polar row `i` on an `n_angle` grid.
    pub fn angle_at(&self, i: usize, n_angle: usize) -> f64 {
        self.alpha_min + (self.alpha_max - self.alpha_min) * i as f64 / (n_angle - 1) as f64
    }

    /// Radius of polar column `j` on an `n_depth` grid.
    pub fn radius_at(&self, j: usize, n_depth: usize) -> f64 {
        self.r_min + (self.r_max - self.r_min) * j as f64 / (n_depth - 1) as f64
    }

    /// Geometry expressed in the pixel grid obtained by area-downsampling
    /// with factor `scale` (source px per target px) along both axes.
    pub fn downscaled(&self, scale: f64) -> Self {
        // target pixel k covers source [k*s, (k+1)*s), centre (k+0.5)*s - 0.5
        let map = |v: f64| (v + 0.5) / scale - 0.5;
        Self {
            apex_x: map(self.apex_x),
            apex_y: map(self.apex_y),
            r_min: self.r_min / scale,
            r_max: self.r_max / scale,
            ..*self
        }
    }

    /// Mirror image through the vertical axis of the apex: alpha -> -alpha.
    pub fn mirrored(&self) -> Self {
        Self {
            alpha_min: -self.alpha_max,
            alpha_max: -self.alpha_min,
            ..*self
        }
    }

    /// Euclidean distance from `(x, y)` to the sector; 0 inside.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (r, alpha) = self.to_polar(x, y);
        if alpha >= self.alpha_min && alpha <= self.alpha_max {
            return (self.r_min - r).max(r - self.r_max).max(0.0);
        }
        let (dx, dy) = (x - self.apex_x, y - self.apex_y);
        let edge = |beta: f64| {
            let (s, c) = beta.sin_cos();
            let t = (dx * s + dy * c).clamp(self.r_min, self.r_max);
            (dx - t * s).hypot(dy - t * c)
        };
        edge(self.alpha_min).min(edge(self.alpha_max))
    }

    /// Per-pixel footprint mask: every pixel that bilinear sampling at a point
    /// of the sector can touch, i.e. centres within sqrt(2) px of the sector.
    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        let reach = std::f64::consts::SQRT_2 + EDGE_TOL;
        let mut mask = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                mask.push(self.distance(x as f64, y as f64) <= reach);
            }
        }
        mask
    }

    fn to_polar(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.apex_x;
        let dy = y - self.apex_y;
        let r = dx.hypot(dy);
        let alpha = if r == 0.0 { 0.0 } else { dx.atan2(dy) };
        (r, alpha)
    }
}

/// Read access to a row-major single-channel grid.
pub trait Grid {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn pixels(&self) -> &[f32];

    fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels()[row * self.cols() + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianFrame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub mask: Vec<bool>,
}

impl CartesianFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("empty frame"));
        }
        if pixels.len() != height * width || mask.len() != height * width {
            return Err(Error::domain(format!(
                "frame buffers of length {} / {} do not match {height}x{width}",
                pixels.len(),
                mask.len()
            )));
        }
        for (i, (&p, &m)) in pixels.iter().zip(&mask).enumerate() {
            if m && !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("pixel {i} = {p} outside [0, 1]")));
            }
            if !m && p != 0.0 {
                return Err(Error::domain(format!("pixel {i} outside the mask is {p}, not 0")));
            }
        }
        Ok(Self {
            height,
            width,
            pixels,
            mask,
        })
    }

    /// Builds a frame whose mask is the geometric footprint extended by any
    /// non-zero pixel (area-downsampled borders bleed past pixel centres).
    pub fn with_footprint(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        geom: &FrustumGeometry,
    ) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::domain("pixel buffer does not match frame size"));
        }
        let mask = geom
            .mask(height, width)
            .into_iter()
            .zip(&pixels)
            .map(|(m, &p)| m || p != 0.0)
            .collect();
        Self::new(height, width, pixels, mask)
    }

    /// Uniform frame: `value` inside the footprint, 0 outside.
    pub fn constant(height: usize, width: usize, geom: &FrustumGeometry, value: f32) -> Self {
        let mask = geom.mask(height, width);
        let pixels = mask.iter().map(|&m| if m { value } else { 0.0 }).collect();
        Self {
            height,
            width,
            pixels,
            mask,
        }
    }

    /// Samples an intensity function at every in-footprint pixel centre.
    pub fn from_fn(
        height: usize,
        width: usize,
        geom: &FrustumGeometry,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Self {
        let mask = geom.mask(height, width);
        let mut pixels = vec![0.0f32; height * width];
        for y in 0..height {
            for x in 0..width {
                let k = y * width + x;
                if mask[k] {
                    pixels[k] = f(x as f64, y as f64).clamp(0.0, 1.0) as f32;
                }
            }
        }
        Self {
            height,
            width,
            pixels,
            mask,
        }
    }
}

impl Grid for CartesianFrame {
    fn rows(&self) -> usize {
        self.height
    }
    fn cols(&self) -> usize {
        self.width
    }
    fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame {
    pub n_angle: usize,
    pub n_depth: usize,
    pub pixels: Vec<f32>,
}

impl PolarFrame {
    pub fn new(n_angle: usize, n_depth: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != n_angle * n_depth {
            return Err(Error::domain(format!(
                "polar buffer of length {} does not match {n_angle}x{n_depth}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::domain(format!("polar pixel {p} outside [0, 1]")));
        }
        Ok(Self {
            n_angle,
            n_depth,
            pixels,
        })
    }
}

impl Grid for PolarFrame {
    fn rows(&self) -> usize {
        self.n_angle
    }
    fn cols(&self) -> usize {
        self.n_depth
    }
    fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

/// Raw grid view used by the generic helpers.
pub struct GridRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f32],
}

impl Grid for GridRef<'_> {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn pixels(&self) -> &[f32] {
        self.data
    }
}

pub fn polar_to_cartesian_point(r: f64, alpha: f64, geom: &FrustumGeometry) -> Result<(f64, f64)> {
    if !geom.contains_polar(r, alpha) {
        return Err(Error::domain(format!(
            "(r={r}, alpha={alpha}) outside frustum r in [{}, {}], alpha in [{}, {}]",
            geom.r_min, geom.r_max, geom.alpha_min, geom.alpha_max
        )));
    }
    let (s, c) = alpha.sin_cos();
    Ok((geom.apex_x + r * s, geom.apex_y + r * c))
}

/// Inverse mapping. The apex itself maps to `(0, 0)`.
pub fn cartesian_to_polar_point(x: f64, y: f64, geom: &FrustumGeometry) -> Result<(f64, f64)> {
    if y < geom.apex_y {
        return Err(Error::domain(format!(
            "point ({x}, {y}) lies above the apex row {}",
            geom.apex_y
        )));
    }
    Ok(geom.to_polar(x, y))
}

/// Bilinear interpolation at continuous coordinates `(u, v)` = (column, row).
/// Exact at grid nodes; 0 outside the grid.
pub fn bilinear_sample<G: Grid + ?Sized>(grid: &G, u: f64, v: f64) -> f64 {
    let (rows, cols) = (grid.rows(), grid.cols());
    let u_max = cols as f64 - 1.0;
    let v_max = rows as f64 - 1.0;
    if !(u >= -EDGE_TOL && u <= u_max + EDGE_TOL && v >= -EDGE_TOL && v <= v_max + EDGE_TOL) {
        return 0.0;
    }
    let u = u.clamp(0.0, u_max);
    let v = v.clamp(0.0, v_max);
    let c0 = (u.floor() as usize).min(cols - 1);
    let r0 = (v.floor() as usize).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let r1 = (r0 + 1).min(rows - 1);
    let fu = u - c0 as f64;
    let fv = v - r0 as f64;
    let p = grid.pixels();
    let q = |r: usize, c: usize| f64::from(p[r * cols + c]);
    let top = q(r0, c0) + fu * (q(r0, c1) - q(r0, c0));
    let bottom = q(r1, c0) + fu * (q(r1, c1) - q(r1, c0));
    top + fv * (bottom - top)
}

fn check_polar_dims(n_angle: usize, n_depth: usize) -> Result<()> {
    if n_angle < 2 || n_depth < 2 {
        return Err(Error::domain(format!(
            "polar grid {n_angle}x{n_depth} needs at least 2 samples per axis"
        )));
    }
    Ok(())
}

/// Resamples a Cartesian frame onto the uniform `n_angle x n_depth` polar grid.
pub fn scan_convert_to_polar(
    frame: &CartesianFrame,
    geom: &FrustumGeometry,
    n_angle: usize,
    n_depth: usize,
) -> Result<PolarFrame> {
    geom.validate()?;
    check_polar_dims(n_angle, n_depth)?;
    let trig: Vec<(f64, f64)> = (0..n_angle).map(|i| geom.angle_at(i, n_angle).sin_cos()).collect();
    let radii: Vec<f64> = (0..n_depth).map(|j| geom.radius_at(j, n_depth)).collect();
    let mut pixels = Vec::with_capacity(n_angle * n_depth);
    for &(s, c) in &trig {
        for &r in &radii {
            let x = geom.apex_x + r * s;
            let y = geom.apex_y + r * c;
            pixels.push(bilinear_sample(frame, x, y).clamp(0.0, 1.0) as f32);
        }
    }
    Ok(PolarFrame {
        n_angle,
        n_depth,
        pixels,
    })
}

/// Resamples a polar frame back onto a `height x width` Cartesian grid.
/// Pixels outside the frustum are 0 and unmasked.
pub fn scan_convert_to_cartesian(
    frame: &PolarFrame,
    geom: &FrustumGeometry,
    height: usize,
    width: usize,
) -> Result<CartesianFrame> {
    geom.validate()?;
    check_polar_dims(frame.n_angle, frame.n_depth)?;
    if height == 0 || width == 0 {
        return Err(Error::domain("empty output frame"));
    }
    let d_alpha = (geom.alpha_max - geom.alpha_min) / (frame.n_angle - 1) as f64;
    let d_r = (geom.r_max - geom.r_min) / (frame.n_depth - 1) as f64;
    let mut pixels = vec![0.0f32; height * width];
    let mut mask = vec![false; height * width];
    for y in 0..height {
        for x in 0..width {
            let (r, alpha) = geom.to_polar(x as f64, y as f64);
            if !geom.contains_polar(r, alpha) {
                continue;
            }
            let k = y * width + x;
            mask[k] = true;
            let row = (alpha - geom.alpha_min) / d_alpha;
            let col = (r - geom.r_min) / d_r;
            pixels[k] = bilinear_sample(frame, col, row).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(CartesianFrame {
        height,
        width,
        pixels,
        mask,
    })
}

/// Overlap weights of target cells onto source cells for area averaging
/// along one axis. Entry `t` lists `(source index, weight)` with weights
/// summing to 1.
fn area_weights(source: usize, target: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = source as f64 / target as f64;
    (0..target)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = (t + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(source);
            (first..last)
                .filter_map(|s| {
                    let overlap = hi.min((s + 1) as f64) - lo.max(s as f64);
                    (overlap > 1e-12).then(|| (s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-average (box filter) downsampling of a raw row-major grid.
/// Returns the new pixels and, per target pixel, whether any contributing
/// source pixel was flagged in `source_mask`.
pub fn downsample_grid(
    rows: usize,
    cols: usize,
    data: &[f32],
    source_mask: Option<&[bool]>,
    target_rows: usize,
    target_cols: usize,
) -> Result<(Vec<f32>, Vec<bool>)> {
    if target_rows == 0 || target_cols == 0 {
        return Err(Error::domain("downsample target must be non-empty"));
    }
    if target_rows > rows || target_cols > cols {
        return Err(Error::domain(format!(
            "upsampling {rows}x{cols} -> {target_rows}x{target_cols} is not supported"
        )));
    }
    if data.len() != rows * cols {
        return Err(Error::domain("grid buffer does not match dimensions"));
    }
    let wr = area_weights(rows, target_rows);
    let wc = area_weights(cols, target_cols);
    let mut out = Vec::with_capacity(target_rows * target_cols);
    let mut mask = Vec::with_capacity(target_rows * target_cols);
    for row_w in &wr {
        for col_w in &wc {
            let mut acc = 0.0f64;
            let mut any = false;
            for &(r, a) in row_w {
                for &(c, b) in col_w {
                    let k = r * cols + c;
                    acc += a * b * f64::from(data[k]);
                    any |= source_mask.map_or(true, |m| m[k]);
                }
            }
            out.push(acc.clamp(0.0, 1.0) as f32);
            mask.push(any);
        }
    }
    Ok((out, mask))
}

pub fn downsample_cartesian(frame: &CartesianFrame, target_h: usize, target_w: usize) -> Result<CartesianFrame> {
    let (pixels, mask) = downsample_grid(
        frame.height,
        frame.width,
        &frame.pixels,
        Some(&frame.mask),
        target_h,
        target_w,
    )?;
    Ok(CartesianFrame {
        height: target_h,
        width: target_w,
        pixels,
        mask,
    })
}

pub fn downsample_polar(frame: &PolarFrame, n_angle: usize, n_depth: usize) -> Result<PolarFrame> {
    let (pixels, _) = downsample_grid(frame.n_angle, frame.n_depth, &frame.pixels, None, n_angle, n_depth)?;
    Ok(PolarFrame {
        n_angle,
        n_depth,
        pixels,
    })
}

/// In-mask RMSE of a Cartesian -> polar -> Cartesian round trip.
pub fn roundtrip_rmse(
    frame: &CartesianFrame,
    geom: &FrustumGeometry,
    n_angle: usize,
    n_depth: usize,
) -> Result<f64> {
    let polar = scan_convert_to_polar(frame, geom, n_angle, n_depth)?;
    let back = scan_convert_to_cartesian(&polar, geom, frame.height, frame.width)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..frame.pixels.len() {
        if frame.mask[k] && back.mask[k] {
            let d = f64::from(frame.pixels[k]) - f64::from(back.pixels[k]);
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::domain("round trip has no in-mask pixels"));
    }
    Ok((sum / count as f64).sqrt())
}
