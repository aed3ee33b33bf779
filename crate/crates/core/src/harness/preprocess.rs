use rayon::prelude::*;

use super::{validate_arm, InputDims};
use crate::error::{Error, Result};
use crate::geometry::{downsample_grid, downsample_polar, scan_convert_to_polar, FrustumGeometry};
use crate::synthgen::{ClipLabels, Representation, VideoClip};

/// Converts a native-resolution Cartesian clip into the model input for
/// `rep` at `dims`.
///
/// Cartesian inputs are area-downsampled. Polar inputs are scan-converted
/// onto a polar grid with as many angle and depth samples as the native frame
/// has rows and columns, then area-downsampled to `dims.h` angles by
/// `dims.w` depths, so both representations lose detail through the same
/// box filter.
pub fn preprocess(clip: &VideoClip, rep: Representation, dims: InputDims) -> Result<VideoClip> {
    validate_arm(rep, dims)?;
    if clip.representation != Representation::Cartesian {
        return Err(Error::domain("preprocessing expects a native Cartesian clip"));
    }
    let (h, w) = (clip.height, clip.width);
    match rep {
        Representation::Cartesian => {
            let scale = h as f64 / dims.h as f64;
            if ((w as f64 / dims.w as f64) - scale).abs() > 1e-12 {
                return Err(Error::domain(format!("{h}x{w} cannot be scaled uniformly to {dims}")));
            }
            let frames = clip
                .frames
                .iter()
                .map(|f| downsample_grid(h, w, f, None, dims.h, dims.w).map(|(p, _)| p))
                .collect::<Result<Vec<_>>>()?;
            VideoClip::new(rep, clip.geometry.downscaled(scale), dims.h, dims.w, frames)
        }
        Representation::Polar => {
            let (na, nd) = (h, w);
            if dims.h > na || dims.w > nd {
                return Err(Error::domain(format!("{dims} exceeds the native polar grid {na}x{nd}")));
            }
            let frames = (0..clip.n_frames())
                .map(|t| {
                    let cart = clip.cartesian_frame(t)?;
                    let polar = scan_convert_to_polar(&cart, &clip.geometry, na, nd)?;
                    Ok(downsample_polar(&polar, dims.h, dims.w)?.pixels)
                })
                .collect::<Result<Vec<_>>>()?;
            let geom = pooled_polar_geometry(&clip.geometry, (na, nd), (dims.h, dims.w));
            VideoClip::new(rep, geom, dims.h, dims.w, frames)
        }
    }
}

/// Preprocesses every clip in parallel; output order matches input order.
pub fn preprocess_all(clips: &[VideoClip], rep: Representation, dims: InputDims) -> Result<Vec<VideoClip>> {
    clips.par_iter().map(|c| preprocess(c, rep, dims)).collect()
}

/// Angle and depth ranges spanned by the bin centres after box-averaging an
/// endpoint-inclusive `src` polar grid down to `dst` samples.
fn pooled_polar_geometry(geom: &FrustumGeometry, src: (usize, usize), dst: (usize, usize)) -> FrustumGeometry {
    let shrink = |lo: f64, hi: f64, n_src: usize, n_dst: usize| {
        let step = (hi - lo) / (n_src - 1) as f64;
        let first = 0.5 * n_src as f64 / n_dst as f64 - 0.5;
        (lo + first * step, hi - first * step)
    };
    let (alpha_min, alpha_max) = shrink(geom.alpha_min, geom.alpha_max, src.0, dst.0);
    let (r_min, r_max) = shrink(geom.r_min, geom.r_max, src.1, dst.1);
    FrustumGeometry {
        alpha_min,
        alpha_max,
        r_min,
        r_max,
        ..*geom
    }
}

/// Horizontal flip of a clip and its labels.
pub fn flip_augment(clip: &VideoClip, labels: &ClipLabels) -> Result<(VideoClip, ClipLabels)> {
    Ok((clip.flipped()?, labels.flipped()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_clip, PhantomConfig};

    fn native() -> (VideoClip, ClipLabels) {
        let cfg = PhantomConfig {
            frames_per_clip: 3,
            ..PhantomConfig::default()
        };
        generate_clip(&cfg, 5).unwrap()
    }

    #[test]
    fn shapes_and_determinism() {
        let (clip, _) = native();
        let c = preprocess(&clip, Representation::Cartesian, InputDims::new(64, 64)).unwrap();
        assert_eq!((c.height, c.width, c.n_frames()), (64, 64, 3));
        let p = preprocess(&clip, Representation::Polar, InputDims::new(64, 16)).unwrap();
        assert_eq!((p.height, p.width), (64, 16));
        assert_eq!(p, preprocess(&clip, Representation::Polar, InputDims::new(64, 16)).unwrap());
        assert_eq!(c, preprocess(&c, Representation::Cartesian, InputDims::new(64, 64)).unwrap());
    }

    #[test]
    fn pooled_geometry_is_identity_without_pooling() {
        let g = FrustumGeometry::default_for(128, 128);
        assert_eq!(pooled_polar_geometry(&g, (128, 128), (128, 128)), g);
        let h = pooled_polar_geometry(&g, (128, 128), (64, 16));
        assert!((h.alpha_min + h.alpha_max).abs() < 1e-15);
    }

    #[test]
    fn flip_is_involution() {
        let (clip, labels) = native();
        let (f, l) = flip_augment(&clip, &labels).unwrap();
        let (ff, ll) = flip_augment(&f, &l).unwrap();
        assert_eq!(ff, clip);
        assert_eq!(ll, labels);
    }
}
