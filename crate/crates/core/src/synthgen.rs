//! Deterministic ultrasound-like phantom clips with exact ground truth.
//!
//! A clip is rendered at native Cartesian resolution inside a sector-shaped
//! footprint. Every frame contains a depth-attenuated background and a bright
//! pleural arc. B-line clips add one or more radial rays (Gaussian in angle,
//! constant in depth from the pleural line to the bottom of the sector), each
//! visible during one contiguous run of frames. Non-B-line clips always carry
//! A-line arcs at multiples of the pleural depth, B-line clips only sometimes.
//! Clips of either class may also show broad, faint radial bands that differ
//! from B-lines only in angular width. Multiplicative speckle is drawn per
//! frame on a polar beam x sample grid, so it is coarser laterally at depth.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample, CartesianFrame, FrustumGeometry, GridRef, PolarFrame};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Cartesian,
    Polar,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Cartesian => "cartesian",
            Representation::Polar => "polar",
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Representation::Cartesian => 0,
            Representation::Polar => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(Representation::Cartesian),
            1 => Some(Representation::Polar),
            _ => None,
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartesian" => Ok(Representation::Cartesian),
            "polar" => Ok(Representation::Polar),
            other => Err(Error::domain(format!("unknown representation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoClass {
    Bline,
    NonBline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLabels {
    pub video_class: VideoClass,
    pub frame_mask: Vec<bool>,
    /// Per frame, angular intervals `(alpha_lo, alpha_hi)` covering visible B-lines.
    pub bline_intervals: Vec<Vec<(f64, f64)>>,
}

impl ClipLabels {
    pub fn is_bline(&self) -> bool {
        self.video_class == VideoClass::Bline
    }

    /// Indices of frames with at least one visible B-line.
    pub fn bline_frames(&self) -> Vec<usize> {
        self.frame_mask
            .iter()
            .enumerate()
            .filter_map(|(t, &m)| m.then_some(t))
            .collect()
    }

    /// Labels of the mirrored clip: every interval maps through alpha -> -alpha.
    pub fn flipped(&self) -> Self {
        Self {
            video_class: self.video_class,
            frame_mask: self.frame_mask.clone(),
            bline_intervals: self
                .bline_intervals
                .iter()
                .map(|ivs| ivs.iter().map(|&(lo, hi)| (-hi, -lo)).collect())
                .collect(),
        }
    }

    pub fn validate(&self, geom: &FrustumGeometry) -> Result<()> {
        if self.frame_mask.len() != self.bline_intervals.len() {
            return Err(Error::domain("frame mask and intervals differ in length"));
        }
        if self.is_bline() != self.frame_mask.iter().any(|&m| m) {
            return Err(Error::domain("video class disagrees with frame mask"));
        }
        for (m, ivs) in self.frame_mask.iter().zip(&self.bline_intervals) {
            if *m == ivs.is_empty() {
                return Err(Error::domain("frame mask disagrees with intervals"));
            }
            for &(lo, hi) in ivs {
                if lo > hi || lo < geom.alpha_min - 1e-12 || hi > geom.alpha_max + 1e-12 {
                    return Err(Error::domain(format!("interval ({lo}, {hi}) outside the frustum")));
                }
            }
        }
        Ok(())
    }
}

/// A video clip: `frames[t]` is a row-major `height x width` buffer. Polar
/// clips have `height = n_angle`, `width = n_depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub representation: Representation,
    pub geometry: FrustumGeometry,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<f32>>,
}

impl VideoClip {
    pub fn new(
        representation: Representation,
        geometry: FrustumGeometry,
        height: usize,
        width: usize,
        frames: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::domain("clip has no frames"));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.len() != height * width {
                return Err(Error::domain(format!(
                    "frame {t} has {} pixels, expected {height}x{width}",
                    f.len()
                )));
            }
            if let Some(p) = f.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::domain(format!("frame {t} has intensity {p} outside [0, 1]")));
            }
        }
        Ok(Self {
            representation,
            geometry,
            height,
            width,
            frames,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Horizontal mirror image. Cartesian frames are reflected about the
    /// apex column (a plain column reversal for a centred apex), polar frames
    /// reverse the angle axis. The geometry becomes [`FrustumGeometry::mirrored`].
    pub fn flipped(&self) -> Result<Self> {
        let (h, w) = (self.height, self.width);
        let frames = match self.representation {
            Representation::Polar => self
                .frames
                .iter()
                .map(|f| f.chunks(w).rev().flatten().copied().collect())
                .collect(),
            Representation::Cartesian => {
                let ax2 = 2.0 * self.geometry.apex_x;
                let centred = (ax2 - (w as f64 - 1.0)).abs() < 1e-12;
                self.frames
                    .iter()
                    .map(|f| {
                        if centred {
                            f.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
                        } else {
                            let g = GridRef { rows: h, cols: w, data: f };
                            (0..h * w)
                                .map(|k| bilinear_sample(&g, ax2 - (k % w) as f64, (k / w) as f64) as f32)
                                .collect()
                        }
                    })
                    .collect()
            }
        };
        Ok(Self {
            representation: self.representation,
            geometry: self.geometry.mirrored(),
            height: h,
            width: w,
            frames,
        })
    }

    pub fn cartesian_frame(&self, t: usize) -> Result<CartesianFrame> {
        if self.representation != Representation::Cartesian {
            return Err(Error::domain("clip is not Cartesian"));
        }
        CartesianFrame::with_footprint(self.height, self.width, self.frames[t].clone(), &self.geometry)
    }

    pub fn polar_frame(&self, t: usize) -> Result<PolarFrame> {
        if self.representation != Representation::Polar {
            return Err(Error::domain("clip is not polar"));
        }
        PolarFrame::new(self.height, self.width, self.frames[t].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub frames_per_clip: usize,
    pub native_h: usize,
    pub native_w: usize,
    pub geometry: FrustumGeometry,
    pub bline_probability: f64,
    /// Inclusive range of B-line count in a B-line clip.
    pub blines_per_clip: (usize, usize),
    /// Full width at half maximum of the angular profile, radians.
    pub bline_width: f64,
    pub bline_intensity: f64,
    pub flicker_on_fraction: f64,
    pub speckle_variance: f64,
    /// Speckle is drawn on an acquisition grid of this many beams by
    /// `native_w` depth samples and mapped to pixels by nearest neighbour.
    /// 0 draws it independently per pixel.
    pub speckle_beams: usize,
    pub pleural_depth: f64,
    pub pleural_intensity: f64,
    pub a_line_count: usize,
    pub a_line_intensity: f64,
    /// Chance that a B-line clip also shows A-lines; non-B-line clips always do.
    pub a_line_probability_bline: f64,
    /// Inclusive range of radial features (B-lines plus distractor bands) per
    /// clip, drawn identically for both classes; B-line clips turn 1 or more
    /// of them into B-lines and the rest are bands.
    pub rays_per_clip: (usize, usize),
    /// FWHM of a distractor band, radians.
    pub band_width: f64,
    pub band_intensity: f64,
    pub background_level: f64,
    /// Background falls to `exp(-attenuation)` of its value at `r_max`.
    pub attenuation: f64,
    /// Half-range of the per-clip multiplicative gain, e.g. 0.2 -> [0.8, 1.2].
    pub gain_jitter: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            frames_per_clip: 32,
            native_h: 128,
            native_w: 128,
            geometry: FrustumGeometry::default_for(128, 128),
            bline_probability: 0.5,
            blines_per_clip: (1, 2),
            bline_width: 0.03,
            bline_intensity: 0.25,
            flicker_on_fraction: 0.35,
            speckle_variance: 0.09,
            speckle_beams: 128,
            pleural_depth: 30.0,
            pleural_intensity: 0.45,
            a_line_count: 3,
            a_line_intensity: 0.2,
            a_line_probability_bline: 0.5,
            rays_per_clip: (1, 3),
            band_width: 0.06,
            // same angular mass as a B-line
            band_intensity: 0.125,
            background_level: 0.3,
            attenuation: 0.8,
            gain_jitter: 0.2,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip < 2 {
            return Err(Error::domain("frames_per_clip must be at least 2"));
        }
        self.geometry.validate_for(self.native_h, self.native_w)?;
        let unit = [
            ("bline_probability", self.bline_probability),
            ("flicker_on_fraction", self.flicker_on_fraction),
            ("bline_intensity", self.bline_intensity),
            ("pleural_intensity", self.pleural_intensity),
            ("a_line_intensity", self.a_line_intensity),
            ("a_line_probability_bline", self.a_line_probability_bline),
            ("band_intensity", self.band_intensity),
            ("background_level", self.background_level),
            ("gain_jitter", self.gain_jitter),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if self.speckle_variance < 0.0 || self.attenuation < 0.0 {
            return Err(Error::domain("speckle variance and attenuation must be non-negative"));
        }
        let span = self.geometry.alpha_max - self.geometry.alpha_min;
        if !(self.bline_width > 0.0 && self.bline_width < span / 2.0) {
            return Err(Error::domain(format!(
                "bline_width {} must lie in (0, {})",
                self.bline_width,
                span / 2.0
            )));
        }
        if !(self.band_width > 0.0) || self.rays_per_clip.0 > self.rays_per_clip.1 {
            return Err(Error::domain("band_width must be positive and rays_per_clip a valid range"));
        }
        let (lo, hi) = self.blines_per_clip;
        if lo == 0 || lo > hi {
            return Err(Error::domain("blines_per_clip must be a non-empty range starting at 1 or more"));
        }
        if !(self.pleural_depth >= self.geometry.r_min && self.pleural_depth < self.geometry.r_max) {
            return Err(Error::domain("pleural_depth must lie inside the radial extent"));
        }
        Ok(())
    }

    /// Number of consecutive frames during which a B-line is visible.
    pub fn visible_run(&self) -> usize {
        let t = self.frames_per_clip;
        ((self.flicker_on_fraction * t as f64).ceil() as usize).clamp(1, t)
    }
}

/// One B-line: a ray at angle `alpha` visible for frames `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BLineEvent {
    pub alpha: f64,
    pub start: usize,
    pub len: usize,
}

impl BLineEvent {
    pub fn visible_at(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.len
    }
}

/// Everything drawn at random for one clip before rendering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipEvents {
    pub blines: Vec<BLineEvent>,
    /// Broad radial bands; same shape as B-line events but never labelled.
    pub bands: Vec<BLineEvent>,
    pub a_lines: bool,
}

/// Multiplicative speckle: `p * (1 + eta)`, `eta ~ N(0, variance)`, clamped to [0, 1].
pub fn speckle(pixels: &[f32], variance: f64, rng: &mut Stream) -> Vec<f32> {
    if variance <= 0.0 {
        return pixels.to_vec();
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
    pixels
        .iter()
        .map(|&p| {
            let eta: f64 = normal.sample(rng);
            (f64::from(p) * (1.0 + eta)).clamp(0.0, 1.0) as f32
        })
        .collect()
}

/// Speckle drawn per acquisition cell; `cells[k]` is the cell of pixel `k`.
fn acquisition_speckle(pixels: &[f32], cells: &[usize], n_cells: usize, variance: f64, rng: &mut Stream) -> Vec<f32> {
    if variance <= 0.0 {
        return pixels.to_vec();
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
    let eta: Vec<f64> = (0..n_cells).map(|_| normal.sample(rng)).collect();
    pixels
        .iter()
        .zip(cells)
        .map(|(&p, &c)| (f64::from(p) * (1.0 + eta[c])).clamp(0.0, 1.0) as f32)
        .collect()
}

fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma) * (x / sigma)).exp()
}

/// FWHM to standard deviation.
fn fwhm_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

const ARC_SIGMA: f64 = 1.5;

/// Renders a clip from explicit events. Labels derive from `events.blines`.
pub fn render_clip(config: &PhantomConfig, events: &ClipEvents, seed: u64) -> Result<(VideoClip, ClipLabels)> {
    config.validate()?;
    let t_len = config.frames_per_clip;
    let (h, w) = (config.native_h, config.native_w);
    let geom = config.geometry;
    for ev in events.blines.iter().chain(&events.bands) {
        if ev.len == 0 || ev.start + ev.len > t_len {
            return Err(Error::domain(format!("B-line run {}..{} outside clip", ev.start, ev.start + ev.len)));
        }
        if ev.alpha < geom.alpha_min || ev.alpha > geom.alpha_max {
            return Err(Error::domain(format!("B-line angle {} outside frustum", ev.alpha)));
        }
    }
    let mut rng = rng::stream(seed);
    let gain = 1.0 + config.gain_jitter * (2.0 * rng.random::<f64>() - 1.0);

    let mask = geom.mask(h, w);
    let polar: Vec<(f64, f64)> = (0..h * w)
        .map(|k| {
            let dx = (k % w) as f64 - geom.apex_x;
            let dy = (k / w) as f64 - geom.apex_y;
            let r = dx.hypot(dy);
            (r, if r == 0.0 { 0.0 } else { dx.atan2(dy) })
        })
        .collect();

    let span_r = geom.r_max - geom.r_min;
    let background: Vec<f64> = polar
        .iter()
        .zip(&mask)
        .map(|(&(r, _), &inside)| {
            if !inside {
                return 0.0;
            }
            let mut v = config.background_level * (-config.attenuation * (r - geom.r_min) / span_r).exp();
            v += config.pleural_intensity * gaussian(r - config.pleural_depth, ARC_SIGMA);
            if events.a_lines {
                let mut amp = config.a_line_intensity;
                for k in 2..config.a_line_count + 2 {
                    v += amp * gaussian(r - k as f64 * config.pleural_depth, ARC_SIGMA);
                    amp *= 0.7;
                }
            }
            v
        })
        .collect();

    let ray = |k: usize, ev: &BLineEvent, amp: f64, sigma: f64| -> f64 {
        let (r, a) = polar[k];
        if r < config.pleural_depth {
            0.0
        } else {
            amp * gaussian(a - ev.alpha, sigma)
        }
    };
    let (sigma, band_sigma) = (fwhm_sigma(config.bline_width), fwhm_sigma(config.band_width));

    let acquisition = (config.speckle_beams > 0).then(|| {
        let beams = config.speckle_beams;
        let a_step = (geom.alpha_max - geom.alpha_min) / (beams - 1).max(1) as f64;
        let r_step = span_r / (w - 1).max(1) as f64;
        polar
            .iter()
            .map(|&(r, a)| {
                let b = ((a - geom.alpha_min) / a_step).round().clamp(0.0, (beams - 1) as f64) as usize;
                let s = ((r - geom.r_min) / r_step).round().clamp(0.0, (w - 1) as f64) as usize;
                b * w + s
            })
            .collect::<Vec<usize>>()
    });

    let half = config.bline_width / 2.0;
    let mut frames = Vec::with_capacity(t_len);
    let mut frame_mask = Vec::with_capacity(t_len);
    let mut intervals = Vec::with_capacity(t_len);
    let mut clean = vec![0.0f32; h * w];
    for t in 0..t_len {
        let visible: Vec<&BLineEvent> = events.blines.iter().filter(|e| e.visible_at(t)).collect();
        let bands: Vec<&BLineEvent> = events.bands.iter().filter(|e| e.visible_at(t)).collect();
        for k in 0..h * w {
            clean[k] = if mask[k] {
                let v = background[k]
                    + visible.iter().map(|ev| ray(k, ev, config.bline_intensity, sigma)).sum::<f64>()
                    + bands.iter().map(|ev| ray(k, ev, config.band_intensity, band_sigma)).sum::<f64>();
                (gain * v).clamp(0.0, 1.0) as f32
            } else {
                0.0
            };
        }
        frames.push(match &acquisition {
            Some(cells) => acquisition_speckle(&clean, cells, config.speckle_beams * w, config.speckle_variance, &mut rng),
            None => speckle(&clean, config.speckle_variance, &mut rng),
        });
        frame_mask.push(!visible.is_empty());
        intervals.push(
            visible
                .iter()
                .map(|ev| {
                    (
                        (ev.alpha - half).max(geom.alpha_min),
                        (ev.alpha + half).min(geom.alpha_max),
                    )
                })
                .collect(),
        );
    }

    let labels = ClipLabels {
        video_class: if events.blines.is_empty() {
            VideoClass::NonBline
        } else {
            VideoClass::Bline
        },
        frame_mask,
        bline_intervals: intervals,
    };
    let clip = VideoClip {
        representation: Representation::Cartesian,
        geometry: geom,
        height: h,
        width: w,
        frames,
    };
    Ok((clip, labels))
}

/// Draws the clip class and events from `seed`, then renders.
///
/// Both classes draw the same number of radial features with the same flicker
/// run length. B-line clips render one or more of them narrow; everything
/// else is a band kept at least one band width away from every B-line.
pub fn generate_clip(config: &PhantomConfig, seed: u64) -> Result<(VideoClip, ClipLabels)> {
    config.validate()?;
    let mut rng = rng::substream(seed, "events");
    let is_bline = rng.random::<f64>() < config.bline_probability;
    let g = &config.geometry;
    let t_len = config.frames_per_clip;
    let len = config.visible_run();
    let n_rays = rng.random_range(config.rays_per_clip.0..=config.rays_per_clip.1);
    let n_blines = if is_bline {
        let (lo, hi) = config.blines_per_clip;
        rng.random_range(lo..=hi.min(n_rays.max(lo)))
    } else {
        0
    };
    let a_lo = g.alpha_min + config.bline_width;
    let a_hi = g.alpha_max - config.bline_width;
    let mut events = ClipEvents::default();
    for _ in 0..n_blines {
        let alpha = a_lo + (a_hi - a_lo) * rng.random::<f64>();
        let start = rng.random_range(0..=t_len - len);
        events.blines.push(BLineEvent { alpha, start, len });
    }
    for _ in n_blines..n_rays {
        let mut alpha = a_lo + (a_hi - a_lo) * rng.random::<f64>();
        for _ in 0..64 {
            if events.blines.iter().all(|b| (b.alpha - alpha).abs() > config.band_width) {
                break;
            }
            alpha = a_lo + (a_hi - a_lo) * rng.random::<f64>();
        }
        if events.blines.iter().any(|b| (b.alpha - alpha).abs() <= config.band_width) {
            continue;
        }
        let start = rng.random_range(0..=t_len - len);
        events.bands.push(BLineEvent { alpha, start, len });
    }
    events.a_lines = !is_bline || rng.random::<f64>() < config.a_line_probability_bline;
    render_clip(config, &events, rng::child_seed(seed, 0))
}

/// `n_clips` clips; clip `i` uses `rng::child_seed(seed, i)`.
pub fn generate_dataset(config: &PhantomConfig, n_clips: usize, seed: u64) -> Result<Vec<(VideoClip, ClipLabels)>> {
    generate_range(config, seed, 0..n_clips)
}

/// Clips `range` of the dataset defined by `(config, seed)`, independent of
/// which other indices are generated.
pub fn generate_range(
    config: &PhantomConfig,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<(VideoClip, ClipLabels)>> {
    if range.is_empty() {
        return Err(Error::domain("dataset must contain at least one clip"));
    }
    config.validate()?;
    range
        .into_par_iter()
        .map(|i| generate_clip(config, rng::child_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig {
            frames_per_clip: 8,
            native_h: 64,
            native_w: 64,
            geometry: FrustumGeometry::default_for(64, 64),
            pleural_depth: 15.0,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let c = small();
        assert_eq!(generate_clip(&c, 42).unwrap(), generate_clip(&c, 42).unwrap());
        assert_ne!(generate_clip(&c, 42).unwrap().0, generate_clip(&c, 43).unwrap().0);
    }

    #[test]
    fn forced_negative_class() {
        let c = PhantomConfig {
            bline_probability: 0.0,
            ..small()
        };
        for seed in 0..10 {
            let (_, labels) = generate_clip(&c, seed).unwrap();
            assert_eq!(labels.video_class, VideoClass::NonBline);
            assert!(labels.frame_mask.iter().all(|m| !m));
            assert!(labels.bline_intervals.iter().all(Vec::is_empty));
        }
    }

    #[test]
    fn labels_valid() {
        let c = small();
        for seed in 0..20 {
            let (clip, labels) = generate_clip(&c, seed).unwrap();
            labels.validate(&clip.geometry).unwrap();
            assert_eq!(labels.frame_mask.len(), clip.n_frames());
            if labels.is_bline() {
                let run = labels.bline_frames().len();
                assert!(run >= c.visible_run());
            }
        }
    }

    #[test]
    fn speckle_identity_and_bounds() {
        let mut rng = rng::stream(1);
        let px: Vec<f32> = (0..100).map(|i| i as f32 / 99.0).collect();
        assert_eq!(speckle(&px, 0.0, &mut rng), px);
        let noisy = speckle(&px, 4.0, &mut rng);
        assert!(noisy.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn speckle_mean() {
        let mut rng = rng::stream(9);
        let px = vec![0.5f32; 64 * 64];
        let noisy = speckle(&px, 0.01, &mut rng);
        let mean = noisy.iter().map(|&p| f64::from(p)).sum::<f64>() / noisy.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn acquisition_speckle_shared_within_cell() {
        let mut rng = rng::stream(4);
        let px = vec![0.5f32; 6];
        let noisy = acquisition_speckle(&px, &[0, 0, 1, 2, 2, 2], 3, 0.05, &mut rng);
        assert_eq!(noisy[0], noisy[1]);
        assert_eq!(noisy[3], noisy[5]);
        assert_ne!(noisy[1], noisy[2]);

        let c = small();
        let per_pixel = PhantomConfig { speckle_beams: 0, ..c.clone() };
        assert_ne!(generate_clip(&c, 7).unwrap().0, generate_clip(&per_pixel, 7).unwrap().0);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = small();
        c.bline_width = 1.0;
        assert!(generate_clip(&c, 0).is_err());
        let mut c = small();
        c.frames_per_clip = 1;
        assert!(c.validate().is_err());
        let mut c = small();
        c.bline_probability = 1.5;
        assert!(c.validate().is_err());
        assert!(generate_dataset(&small(), 0, 1).is_err());
    }

    #[test]
    fn render_rejects_bad_events() {
        let c = small();
        let ev = BLineEvent {
            alpha: 0.0,
            start: 6,
            len: 4,
        };
        let events = ClipEvents {
            blines: vec![ev],
            ..ClipEvents::default()
        };
        assert!(render_clip(&c, &events, 0).is_err());
    }
}
