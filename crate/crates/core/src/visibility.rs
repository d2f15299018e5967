//! Signed warp-error maps on the image and feature domains.
//!
//! `V_0 = W(I_2^Y, f_0) - I_1` and `V_i = W(F_i^Y, f_i) - F_i^l`. Positive
//! values mark regions the reference does not see (rendered red), negative
//! values regions the target does not see (rendered green). Maps are kept
//! raw: no clamping, no normalization.

use ccdc_tensor::{Real, Tensor, Var};

use crate::encoders::{FeaturePyramid, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::imageops::GrayImage;

/// `v0` at image resolution plus one map per feature level.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMaps {
    pub v0: Tensor<f32>,
    pub features: Vec<Tensor<f32>>,
}

impl VisibilityMaps {
    /// Map at scale `i` (0 = image domain).
    pub fn scale(&self, i: usize) -> Option<&Tensor<f32>> {
        match i {
            0 => Some(&self.v0),
            _ => self.features.get(i - 1),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Tensor<f32>> {
        std::iter::once(&self.v0).chain(self.features.iter())
    }
}

fn difference(a: &Tensor<f32>, b: &Tensor<f32>, what: &str) -> Result<Tensor<f32>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.zip_map(b, |x, y| x - y)?)
}

/// `V_0`: warped reference luminance minus target.
pub fn image_visibility(warped_ref_lum: &GrayImage, target: &GrayImage) -> Result<Tensor<f32>> {
    difference(warped_ref_lum.tensor(), target.tensor(), "image visibility")
}

/// `V_1..V_4`: warped reference-luminance features minus target features.
pub fn feature_visibility(
    warped_ref_feat: &FeaturePyramid<f32>,
    target_feat: &FeaturePyramid<f32>,
) -> Result<Vec<Tensor<f32>>> {
    warped_ref_feat
        .levels()
        .iter()
        .zip(target_feat.levels())
        .enumerate()
        .map(|(i, (a, b))| difference(a, b, &format!("feature visibility level {}", i + 1)))
        .collect()
}

/// Graph version of one visibility map.
pub fn visibility_var<'g, T: Real>(warped: Var<'g, T>, target: Var<'g, T>) -> Result<Var<'g, T>> {
    if warped.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "visibility operands differ: {:?} vs {:?}",
            warped.shape(),
            target.shape()
        )));
    }
    Ok(warped.sub(target)?)
}

/// Graph version of all five maps: `[V_0, V_1, …, V_4]`.
pub fn visibility_pyramid<'g, T: Real>(
    warped_ref_lum: Var<'g, T>,
    target: Var<'g, T>,
    warped_ref_feat: &[Var<'g, T>],
    target_feat: &[Var<'g, T>],
) -> Result<Vec<Var<'g, T>>> {
    if warped_ref_feat.len() != PYRAMID_LEVELS || target_feat.len() != PYRAMID_LEVELS {
        return Err(Error::Shape("visibility needs four feature levels per input".into()));
    }
    let mut maps = vec![visibility_var(warped_ref_lum, target)?];
    for (a, b) in warped_ref_feat.iter().zip(target_feat) {
        maps.push(visibility_var(*a, *b)?);
    }
    Ok(maps)
}

/// Renders `v0` (1×H×W) as interleaved RGB8: positive values in red,
/// negative in green, scaled so that `|v| >= full_scale` saturates.
pub fn render_red_green(v0: &Tensor<f32>, full_scale: f32) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match *v0.shape() {
        [1, h, w] => (h, w),
        _ => return Err(Error::Shape(format!("v0 must be 1×H×W, got {:?}", v0.shape()))),
    };
    if !(full_scale > 0.0) {
        return Err(Error::Argument("full scale must be positive".into()));
    }
    let mut rgb = Vec::with_capacity(3 * h * w);
    for &v in v0.data() {
        let level = ((v.abs() / full_scale).min(1.0) * 255.0).round() as u8;
        if v > 0.0 {
            rgb.extend_from_slice(&[level, 0, 0]);
        } else {
            rgb.extend_from_slice(&[0, level, 0]);
        }
    }
    Ok((h, w, rgb))
}
