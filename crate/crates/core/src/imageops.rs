//! Color-space conversion and resampling primitives.
//!
//! Images are stored planar (C×H×W) as `f32` in `[0, 1]`.
//!
//! YUV follows BT.601 (full range, analog chroma scaling):
//!
//! ```text
//! | Y |   |  0.299      0.587      0.114    | | R |
//! | U | = | -0.14713   -0.28886    0.436    | | G |
//! | V |   |  0.615     -0.51499   -0.10001  | | B |
//! ```
//!
//! with `U = 0.436 (B - Y) / (1 - 0.114)` and `V = 0.615 (R - Y) / (1 - 0.299)`
//! evaluated exactly rather than through the rounded matrix entries.

use ccdc_tensor::Tensor;

use crate::error::{Error, Result};

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;
const U_MAX: f64 = 0.436;
const V_MAX: f64 = 0.615;
const U_SCALE: f64 = U_MAX / (1.0 - LUMA_B);
const V_SCALE: f64 = V_MAX / (1.0 - LUMA_R);

/// Smallest side accepted for color and grayscale images.
pub const MIN_IMAGE_SIDE: usize = 8;

fn validate(data: &Tensor<f32>, channels: usize, what: &str) -> Result<(usize, usize)> {
    let (c, h, w) = match *data.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Shape(format!("{what} must be C×H×W, got {:?}", data.shape()))),
    };
    if c != channels {
        return Err(Error::Shape(format!("{what} needs {channels} channel(s), got {c}")));
    }
    if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
        return Err(Error::Shape(format!(
            "{what} is {h}x{w}; both sides must be at least {MIN_IMAGE_SIDE}"
        )));
    }
    if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Argument(format!("{what} value {v} outside [0, 1]")));
    }
    Ok((h, w))
}

fn clamp_unit(data: &Tensor<f32>) -> Tensor<f32> {
    data.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
}

/// 3×H×W RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage(Tensor<f32>);

impl ColorImage {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        validate(&data, 3, "color image")?;
        Ok(ColorImage(data))
    }

    /// Clamps into `[0, 1]` (resampling overshoot) before validating shape.
    pub fn from_clamped(data: Tensor<f32>) -> Result<Self> {
        Self::new(clamp_unit(&data))
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let t = Tensor::from_fn(vec![3, height, width], |i| {
            let (c, rest) = (i / (height * width), i % (height * width));
            f(c, rest / width, rest % width)
        });
        Self::new(t)
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let (h, w) = self.size();
        let d = self.0.data();
        [d[y * w + x], d[h * w + y * w + x], d[2 * h * w + y * w + x]]
    }
}

/// 1×H×W single-channel image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage(Tensor<f32>);

impl GrayImage {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        validate(&data, 1, "grayscale image")?;
        Ok(GrayImage(data))
    }

    pub fn from_clamped(data: Tensor<f32>) -> Result<Self> {
        Self::new(clamp_unit(&data))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.0.data()[y * self.width() + x]
    }
}

fn planes(t: &Tensor<f32>, channels: usize) -> Result<usize> {
    match *t.shape() {
        [c, h, w] if c == channels => Ok(h * w),
        _ => Err(Error::Shape(format!(
            "expected a {channels}×H×W tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// RGB → planar Y, U, V.
pub fn rgb_to_yuv(rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let n = planes(rgb, 3)?;
    let d = rgb.data();
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        let (r, g, b) = (d[i] as f64, d[n + i] as f64, d[2 * n + i] as f64);
        let y = LUMA_R * r + LUMA_G * g + LUMA_B * b;
        out[i] = y as f32;
        out[n + i] = (U_SCALE * (b - y)) as f32;
        out[2 * n + i] = (V_SCALE * (r - y)) as f32;
    }
    Ok(Tensor::new(rgb.shape().to_vec(), out)?)
}

/// Exact inverse of [`rgb_to_yuv`].
pub fn yuv_to_rgb(yuv: &Tensor<f32>) -> Result<Tensor<f32>> {
    let n = planes(yuv, 3)?;
    let d = yuv.data();
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        let (y, u, v) = (d[i] as f64, d[n + i] as f64, d[2 * n + i] as f64);
        let r = y + v / V_SCALE;
        let b = y + u / U_SCALE;
        let g = (y - LUMA_R * r - LUMA_B * b) / LUMA_G;
        out[i] = r as f32;
        out[n + i] = g as f32;
        out[2 * n + i] = b as f32;
    }
    Ok(Tensor::new(yuv.shape().to_vec(), out)?)
}

/// Luma plane of an RGB image.
pub fn luminance(img: &ColorImage) -> GrayImage {
    GrayImage::from_clamped(luma_plane(img.tensor()).expect("color image has 3 planes"))
        .expect("luma of a valid color image is a valid gray image")
}

/// Luma of any 3×H×W tensor (no range checks).
pub fn luma_plane(rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let n = planes(rgb, 3)?;
    let d = rgb.data();
    let data = (0..n)
        .map(|i| (LUMA_R * d[i] as f64 + LUMA_G * d[n + i] as f64 + LUMA_B * d[2 * n + i] as f64) as f32)
        .collect();
    Ok(Tensor::new(vec![1, rgb.shape()[1], rgb.shape()[2]], data)?)
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
pub fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four (index, weight) taps for output coordinate `o` when resampling `n`
/// input samples to `m` output samples.
fn cubic_taps(o: usize, n: usize, m: usize) -> [(usize, f64); 4] {
    let src = (o as f64 + 0.5) * (n as f64 / m as f64) - 0.5;
    let base = src.floor();
    let frac = src - base;
    let mut taps = [(0usize, 0.0f64); 4];
    for (k, tap) in taps.iter_mut().enumerate() {
        let offset = k as f64 - 1.0;
        let idx = (base + offset).clamp(0.0, (n - 1) as f64) as usize;
        *tap = (idx, cubic_weight(frac - offset));
    }
    taps
}

/// Bicubic resampling of a C×H×W tensor to an explicit size. Sample centres
/// sit at half-pixel offsets and borders replicate the edge pixel. The
/// output is not clamped.
pub fn bicubic_resize_to(img: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Shape(format!("expected C×H×W, got {:?}", img.shape()))),
    };
    if height == 0 || width == 0 || h == 0 || w == 0 {
        return Err(Error::Argument(format!("cannot resize {h}x{w} to {height}x{width}")));
    }
    if (height, width) == (h, w) {
        return Ok(img.clone());
    }
    let xt: Vec<_> = (0..width).map(|o| cubic_taps(o, w, width)).collect();
    let yt: Vec<_> = (0..height).map(|o| cubic_taps(o, h, height)).collect();
    let src = img.data();
    // Separable: rows first into an H×width buffer, then columns.
    let mut rows = vec![0.0f64; h * width];
    let mut out = vec![0.0f32; c * height * width];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for (x, taps) in xt.iter().enumerate() {
                rows[y * width + x] =
                    taps.iter().map(|&(i, wt)| wt * plane[y * w + i] as f64).sum();
            }
        }
        for (y, taps) in yt.iter().enumerate() {
            for x in 0..width {
                let v: f64 = taps.iter().map(|&(i, wt)| wt * rows[i * width + x]).sum();
                out[(ch * height + y) * width + x] = v as f32;
            }
        }
    }
    Ok(Tensor::new(vec![c, height, width], out)?)
}

/// Bicubic resampling by a positive scale factor; output sides are
/// `round(side * scale)`.
pub fn bicubic_resize(img: &Tensor<f32>, scale: f64) -> Result<Tensor<f32>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Argument(format!("resize scale must be positive, got {scale}")));
    }
    let (h, w) = match *img.shape() {
        [_, h, w] => (h, w),
        _ => return Err(Error::Shape(format!("expected C×H×W, got {:?}", img.shape()))),
    };
    let oh = (h as f64 * scale).round() as usize;
    let ow = (w as f64 * scale).round() as usize;
    if oh == 0 || ow == 0 {
        return Err(Error::Argument(format!("scale {scale} shrinks {h}x{w} to nothing")));
    }
    bicubic_resize_to(img, oh, ow)
}

/// Spatial sizes of a `levels`-deep halving pyramid: level `i` is
/// `(ceil(H / 2^i), ceil(W / 2^i))`.
pub fn gaussian_pyramid_shapes(height: usize, width: usize, levels: usize) -> Result<Vec<(usize, usize)>> {
    if levels == 0 {
        return Err(Error::Argument("pyramid needs at least one level".into()));
    }
    let min = 1usize << (levels - 1);
    if height < min || width < min {
        return Err(Error::Argument(format!(
            "{height}x{width} is too small for {levels} levels (need sides >= {min})"
        )));
    }
    Ok((0..levels).map(|i| (height.div_ceil(1 << i), width.div_ceil(1 << i))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_rgb(r: f32, g: f32, b: f32) -> ColorImage {
        ColorImage::from_fn(8, 8, |c, _, _| [r, g, b][c]).unwrap()
    }

    #[test]
    fn yuv_of_white_black_and_red() {
        let white = rgb_to_yuv(constant_rgb(1.0, 1.0, 1.0).tensor()).unwrap();
        let n = 64;
        assert!(white.data()[..n].iter().all(|&y| (y - 1.0).abs() < 1e-7));
        assert!(white.data()[n..].iter().all(|&c| c.abs() < 1e-7));
        let black = rgb_to_yuv(constant_rgb(0.0, 0.0, 0.0).tensor()).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        let red = rgb_to_yuv(constant_rgb(1.0, 0.0, 0.0).tensor()).unwrap();
        assert!((red.data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn yuv_matrix_rows_match_documented_coefficients() {
        let u = [-LUMA_R * U_SCALE, -LUMA_G * U_SCALE, (1.0 - LUMA_B) * U_SCALE];
        let v = [(1.0 - LUMA_R) * V_SCALE, -LUMA_G * V_SCALE, -LUMA_B * V_SCALE];
        for (got, want) in u.iter().zip([-0.14713, -0.28886, 0.436]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
        for (got, want) in v.iter().zip([0.615, -0.51499, -0.10001]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn wrong_channel_count_is_a_shape_error() {
        let gray = Tensor::<f32>::zeros(vec![1, 8, 8]);
        assert!(matches!(rgb_to_yuv(&gray), Err(Error::Shape(_))));
        assert!(matches!(ColorImage::new(gray), Err(Error::Shape(_))));
        assert!(GrayImage::new(Tensor::zeros(vec![3, 8, 8])).is_err());
    }

    #[test]
    fn luminance_of_gray_ramp_and_green() {
        let ramp = ColorImage::from_fn(8, 8, |_, y, x| (y * 8 + x) as f32 / 63.0).unwrap();
        let lum = luminance(&ramp);
        for y in 0..8 {
            for x in 0..8 {
                assert!((lum.get(y, x) - (y * 8 + x) as f32 / 63.0).abs() < 1e-6);
            }
        }
        let green = luminance(&constant_rgb(0.0, 1.0, 0.0));
        assert!((green.get(3, 3) - 0.587).abs() < 1e-7);
    }

    #[test]
    fn luminance_of_zero_chroma_roundtrip() {
        let mut yuv = Tensor::zeros(vec![3, 8, 8]);
        for (i, v) in yuv.data_mut()[..64].iter_mut().enumerate() {
            *v = i as f32 / 63.0;
        }
        let rgb = ColorImage::from_clamped(yuv_to_rgb(&yuv).unwrap()).unwrap();
        let y_plane = Tensor::new(vec![1, 8, 8], yuv.data()[..64].to_vec()).unwrap();
        assert!(luminance(&rgb).tensor().max_abs_diff(&y_plane) < 1e-6);
    }

    #[test]
    fn images_reject_out_of_range_and_tiny_inputs() {
        assert!(ColorImage::new(Tensor::full(vec![3, 8, 8], 1.5)).is_err());
        assert!(ColorImage::new(Tensor::full(vec![3, 4, 8], 0.5)).is_err());
        assert!(ColorImage::from_clamped(Tensor::full(vec![3, 8, 8], 1.5)).is_ok());
    }

    #[test]
    fn resize_identity_and_bad_scale() {
        let img = Tensor::from_fn(vec![3, 9, 10], |i| (i % 7) as f32 / 7.0);
        assert_eq!(bicubic_resize(&img, 1.0).unwrap(), img);
        assert!(matches!(bicubic_resize(&img, 0.0), Err(Error::Argument(_))));
        assert!(matches!(bicubic_resize(&img, -2.0), Err(Error::Argument(_))));
        assert_eq!(bicubic_resize(&img, 0.5).unwrap().shape(), &[3, 5, 5]);
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=20 {
            let f = i as f64 / 20.0;
            let s: f64 = (-1..=2).map(|k| cubic_weight(f - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_shapes() {
        assert_eq!(
            gaussian_pyramid_shapes(256, 448, 5).unwrap(),
            vec![(256, 448), (128, 224), (64, 112), (32, 56), (16, 28)]
        );
        assert_eq!(gaussian_pyramid_shapes(64, 64, 1).unwrap(), vec![(64, 64)]);
        assert_eq!(gaussian_pyramid_shapes(100, 100, 3).unwrap(), vec![(100, 100), (50, 50), (25, 25)]);
        assert!(gaussian_pyramid_shapes(8, 64, 5).is_err());
        assert!(gaussian_pyramid_shapes(64, 64, 0).is_err());
    }
}
