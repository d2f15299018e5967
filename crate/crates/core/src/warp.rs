//! Differentiable backward warping `W(I, f)` of images and feature maps.
//!
//! `out(x, y) = I(x + f_x(x, y), y + f_y(x, y))`, sampled bilinearly. Sample
//! coordinates are clamped into `[0, W-1] × [0, H-1]`, so out-of-range
//! lookups replicate the border. Gradients flow to both the input and the
//! flow; along an axis where the clamp is active the flow gradient is zero.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ccdc_tensor::{Graph, Operation, Real, Tensor, TensorError, Var};

use crate::encoders::FeaturePyramid;
use crate::error::{Error, Result};
use crate::flow_estimator::FlowPyramid;

pub const FLOW_MAGIC: &[u8; 4] = b"CCFL";

/// Per-axis sampling position: the two taps, the fractional weight, and
/// whether the clamp is inactive (derivative w.r.t. the flow exists).
#[derive(Clone, Copy)]
struct AxisSample<T> {
    i0: usize,
    i1: usize,
    frac: T,
    free: bool,
}

fn axis_sample<T: Real>(pos: T, n: usize) -> AxisSample<T> {
    let max = T::from_usize(n - 1).unwrap();
    let free = pos >= T::zero() && pos <= max;
    let p = pos.max(T::zero()).min(max);
    let f = p.floor();
    let i0 = f.to_usize().unwrap();
    let i1 = (i0 + 1).min(n - 1);
    AxisSample { i0, i1, frac: p - f, free }
}

fn check_pair<T: Real>(input: &Tensor<T>, flow: &Tensor<T>) -> Result<[usize; 4], TensorError> {
    let [n, c, h, w] = input.dims4()?;
    let [fnb, fc, fh, fw] = flow.dims4()?;
    if fnb != n || fc != 2 || fh != h || fw != w {
        return Err(TensorError::shape(
            "bilinear_warp",
            format!("flow {:?} does not match input {:?}", flow.shape(), input.shape()),
        ));
    }
    if !flow.all_finite() {
        return Err(TensorError::argument("bilinear_warp", "flow contains non-finite values"));
    }
    Ok([n, c, h, w])
}

/// Graph operation; inputs are `[input (N×C×H×W), flow (N×2×H×W)]`.
pub struct BilinearWarp;

impl<T: Real> Operation<T> for BilinearWarp {
    fn name(&self) -> &'static str {
        "bilinear_warp"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let (input, flow) = (inputs[0], inputs[1]);
        let [n, c, h, w] = check_pair(input, flow)?;
        let plane = h * w;
        let mut out = Tensor::zeros(input.shape().to_vec());
        let (src, fl) = (input.data(), flow.data());
        let dst = out.data_mut();
        for b in 0..n {
            let fx = &fl[(2 * b) * plane..(2 * b + 1) * plane];
            let fy = &fl[(2 * b + 1) * plane..(2 * b + 2) * plane];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let sx = axis_sample(T::from_usize(x).unwrap() + fx[p], w);
                    let sy = axis_sample(T::from_usize(y).unwrap() + fy[p], h);
                    let (ax, ay) = (sx.frac, sy.frac);
                    let w00 = (T::one() - ay) * (T::one() - ax);
                    let w01 = (T::one() - ay) * ax;
                    let w10 = ay * (T::one() - ax);
                    let w11 = ay * ax;
                    let (r0, r1) = (sy.i0 * w, sy.i1 * w);
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let s = &src[base..base + plane];
                        dst[base + p] = w00 * s[r0 + sx.i0]
                            + w01 * s[r0 + sx.i1]
                            + w10 * s[r1 + sx.i0]
                            + w11 * s[r1 + sx.i1];
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (input, flow) = (x[0], x[1]);
        let [n, c, h, w] = input.dims4().unwrap();
        let plane = h * w;
        let mut d_input = Tensor::zeros(input.shape().to_vec());
        let mut d_flow = Tensor::zeros(flow.shape().to_vec());
        let (src, fl, gd) = (input.data(), flow.data(), g.data());
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let fx = fl[(2 * b) * plane + p];
                    let fy = fl[(2 * b + 1) * plane + p];
                    let sx = axis_sample(T::from_usize(x).unwrap() + fx, w);
                    let sy = axis_sample(T::from_usize(y).unwrap() + fy, h);
                    let (ax, ay) = (sx.frac, sy.frac);
                    let (r0, r1) = (sy.i0 * w, sy.i1 * w);
                    let mut gx = T::zero();
                    let mut gy = T::zero();
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let go = gd[base + p];
                        let s = &src[base..base + plane];
                        let (v00, v01, v10, v11) =
                            (s[r0 + sx.i0], s[r0 + sx.i1], s[r1 + sx.i0], s[r1 + sx.i1]);
                        let di = &mut d_input.data_mut()[base..base + plane];
                        di[r0 + sx.i0] += go * (T::one() - ay) * (T::one() - ax);
                        di[r0 + sx.i1] += go * (T::one() - ay) * ax;
                        di[r1 + sx.i0] += go * ay * (T::one() - ax);
                        di[r1 + sx.i1] += go * ay * ax;
                        gx += go * ((T::one() - ay) * (v01 - v00) + ay * (v11 - v10));
                        gy += go * ((T::one() - ax) * (v10 - v00) + ax * (v11 - v01));
                    }
                    let df = d_flow.data_mut();
                    if sx.free {
                        df[(2 * b) * plane + p] = gx;
                    }
                    if sy.free {
                        df[(2 * b + 1) * plane + p] = gy;
                    }
                }
            }
        }
        vec![Some(d_input), Some(d_flow)]
    }
}

/// Warps a graph value by a flow of the same spatial size.
pub fn warp<'g, T: Real>(input: Var<'g, T>, flow: Var<'g, T>) -> Result<Var<'g, T>> {
    let [n, _, h, w] = input.dims4()?;
    let [fnb, fc, fh, fw] = flow.dims4()?;
    if (fnb, fc, fh, fw) != (n, 2, h, w) {
        return Err(Error::Shape(format!(
            "flow {:?} cannot warp input {:?}",
            flow.shape(),
            input.shape()
        )));
    }
    Ok(input.graph().apply(BilinearWarp, &[input, flow])?)
}

/// Warps a C×H×W (or N×C×H×W) tensor by a 2×H×W (or N×2×H×W) flow.
pub fn bilinear_warp<T: Real>(input: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = input.dims4()?;
    let [_, fc, fh, fw] = flow.dims4()?;
    if (fc, fh, fw) != (2, h, w) || input.shape().len() != flow.shape().len() {
        return Err(Error::Shape(format!(
            "flow {:?} does not match input {:?}",
            flow.shape(),
            input.shape()
        )));
    }
    let g = Graph::new();
    let out = g.apply(BilinearWarp, &[g.constant(input.clone()), g.constant(flow.clone())])?;
    let value = out.value();
    Ok(Tensor::new(input.shape().to_vec(), value.data().to_vec())?)
}

/// True when `coordinate` lies within `tolerance` of an integer, where
/// bilinear interpolation is not differentiable.
pub fn near_sample_kink(coordinate: f64, tolerance: f64) -> bool {
    (coordinate - coordinate.round()).abs() < tolerance
}

/// 2×H×W displacement field in pixels at its own resolution. Channel 0 is
/// horizontal, channel 1 vertical.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor<f32>);

impl FlowField {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        match *data.shape() {
            [2, _, _] => {}
            _ => return Err(Error::Shape(format!("flow must be 2×H×W, got {:?}", data.shape()))),
        }
        if !data.all_finite() {
            return Err(Error::Argument("flow contains non-finite values".into()));
        }
        Ok(FlowField(data))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField(Tensor::zeros(vec![2, height, width]))
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let plane = height * width;
        FlowField(Tensor::from_fn(vec![2, height, width], |i| if i < plane { dx } else { dy }))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    /// Per-pixel `(dx, dy)`.
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let plane = self.height() * self.width();
        let p = y * self.width() + x;
        (self.0.data()[p], self.0.data()[plane + p])
    }

    /// Resamples to another resolution (bilinear, half-pixel centres) and
    /// rescales displacements by the spatial ratio of each axis.
    pub fn resize(&self, height: usize, width: usize) -> Result<FlowField> {
        if height == 0 || width == 0 {
            return Err(Error::Argument("flow target size must be positive".into()));
        }
        let (h, w) = (self.height(), self.width());
        let ratio_x = width as f64 / w as f64;
        let ratio_y = height as f64 / h as f64;
        let coord = |o: usize, n: usize, m: usize| {
            let s = ((o as f64 + 0.5) * n as f64 / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(n - 1), s - i0 as f64)
        };
        let src = self.0.data();
        let mut out = vec![0.0f32; 2 * height * width];
        for c in 0..2 {
            let gain = if c == 0 { ratio_x } else { ratio_y };
            for oy in 0..height {
                let (y0, y1, fy) = coord(oy, h, height);
                for ox in 0..width {
                    let (x0, x1, fx) = coord(ox, w, width);
                    let at = |y: usize, x: usize| src[(c * h + y) * w + x] as f64;
                    let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                    out[(c * height + oy) * width + ox] = (v * gain) as f32;
                }
            }
        }
        FlowField::new(Tensor::new(vec![2, height, width], out)?)
    }

    /// Writes the `CCFL` debug format: magic, `u16` height, `u16` width, then
    /// the two planes as little-endian `f32`.
    pub fn write_ccfl(&self, mut out: impl Write) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let (h16, w16) = (u16::try_from(h), u16::try_from(w));
        let (Ok(h16), Ok(w16)) = (h16, w16) else {
            return Err(Error::Argument(format!("{h}x{w} flow exceeds the CCFL size limit")));
        };
        let io = |e| Error::io("<ccfl>", e);
        out.write_all(FLOW_MAGIC).map_err(io)?;
        out.write_u16::<LittleEndian>(h16).map_err(io)?;
        out.write_u16::<LittleEndian>(w16).map_err(io)?;
        for &v in self.0.data() {
            out.write_f32::<LittleEndian>(v).map_err(io)?;
        }
        Ok(())
    }

    pub fn to_ccfl_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::with_capacity(8 + 8 * self.height() * self.width());
        self.write_ccfl(&mut bytes)?;
        Ok(bytes)
    }

    pub fn read_ccfl(mut input: impl Read) -> Result<FlowField> {
        let io = |e| Error::io("<ccfl>", e);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != FLOW_MAGIC {
            return Err(Error::Argument("not a CCFL flow file".into()));
        }
        let h = input.read_u16::<LittleEndian>().map_err(io)? as usize;
        let w = input.read_u16::<LittleEndian>().map_err(io)? as usize;
        let mut data = vec![0.0f32; 2 * h * w];
        input.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
        FlowField::new(Tensor::new(vec![2, h, w], data)?)
    }
}

/// Full-resolution image warp by `f_0`; same contract as [`bilinear_warp`].
pub fn warp_image_fullres(img: &Tensor<f32>, flow0: &FlowField) -> Result<Tensor<f32>> {
    bilinear_warp(img, flow0.tensor())
}

/// Warps pyramid level `i` (scales 1..=4) by flow level `i`.
pub fn warp_pyramid(features: &FeaturePyramid<f32>, flows: &FlowPyramid) -> Result<FeaturePyramid<f32>> {
    let mut out = Vec::with_capacity(features.levels().len());
    for (i, level) in features.levels().iter().enumerate() {
        let scale = i + 1;
        let flow = flows
            .level(scale)
            .ok_or_else(|| Error::Shape(format!("flow pyramid has no level {scale}")))?;
        let [_, _, h, w] = level.dims4()?;
        if (flow.height(), flow.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "level {scale}: features are {h}x{w} but flow is {}x{}",
                flow.height(),
                flow.width()
            )));
        }
        out.push(bilinear_warp(level, flow.tensor())?);
    }
    FeaturePyramid::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccdc_tensor::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(vec![1, h, w], |i| i as f32 / (h * w) as f32)
    }

    /// Integer shift with border clamping, computed directly.
    fn clamped_shift(img: &Tensor<f32>, dx: i64, dy: i64) -> Tensor<f32> {
        let (h, w) = (img.shape()[1] as i64, img.shape()[2] as i64);
        Tensor::from_fn(img.shape().to_vec(), |i| {
            let i = i as i64;
            let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
            let sy = (y + dy).clamp(0, h - 1);
            let sx = (x + dx).clamp(0, w - 1);
            img.data()[((ch * h + sy) * w + sx) as usize]
        })
    }

    #[test]
    fn zero_flow_is_exact_identity() {
        let img = Tensor::from_fn(vec![3, 8, 8], |i| ((i * 37) % 101) as f32 / 101.0);
        let out = bilinear_warp(&img, FlowField::zeros(8, 8).tensor()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn integer_flow_matches_clamped_shift() {
        let img = ramp(8, 8);
        let out = bilinear_warp(&img, FlowField::constant(8, 8, 1.0, 0.0).tensor()).unwrap();
        assert_eq!(out, clamped_shift(&img, 1, 0));
        for &(dx, dy) in &[(-2i64, 3i64), (5, -1), (0, -9)] {
            let flow = FlowField::constant(8, 8, dx as f32, dy as f32);
            assert_eq!(bilinear_warp(&img, flow.tensor()).unwrap(), clamped_shift(&img, dx, dy));
        }
    }

    #[test]
    fn half_pixel_flow_averages_neighbours() {
        let img = Tensor::from_fn(vec![1, 8, 8], |i| if i % 8 == 1 { 1.0 } else { 0.0 });
        let out = bilinear_warp(&img, FlowField::constant(8, 8, 0.5, 0.0).tensor()).unwrap();
        assert_eq!(out.data()[0], 0.5);
    }

    #[test]
    fn size_mismatch_and_nan_flow_are_rejected() {
        let img = ramp(8, 8);
        assert!(matches!(
            bilinear_warp(&img, FlowField::zeros(8, 9).tensor()),
            Err(Error::Shape(_))
        ));
        let nan = Tensor::full(vec![2, 8, 8], f32::NAN);
        assert!(FlowField::new(nan.clone()).is_err());
        assert!(bilinear_warp(&img, &nan).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, w) = (5, 5);
        let input = Tensor::from_fn(vec![1, 2, h, w], |_| rng.gen_range(0.0..1.0));
        let flow = Tensor::from_fn(vec![1, 2, h, w], |_| rng.gen_range(-1.5..1.5));
        let coords: Vec<f64> = (0..2 * h * w)
            .map(|i| {
                let (c, p) = (i / (h * w), i % (h * w));
                let base = if c == 0 { (p % w) as f64 } else { (p / w) as f64 };
                base + flow.data()[i]
            })
            .collect();
        let report = check_gradients(
            &[input, flow],
            1e-5,
            |g, v| Ok(g.apply(BilinearWarp, &[v[0], v[1]])?.sum()),
            |which, e| which == 1 && near_sample_kink(coords[e], 1e-3),
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn ccfl_roundtrip() {
        let flow = FlowField::new(Tensor::from_fn(vec![2, 3, 4], |i| i as f32 * 0.25 - 1.0)).unwrap();
        let bytes = flow.to_ccfl_bytes().unwrap();
        assert_eq!(&bytes[..4], b"CCFL");
        assert_eq!(&bytes[4..8], &[3, 0, 4, 0]);
        assert_eq!(bytes.len(), 8 + 4 * 24);
        assert_eq!(FlowField::read_ccfl(bytes.as_slice()).unwrap(), flow);
        assert!(FlowField::read_ccfl(&b"XXXX\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn resizing_scales_displacements() {
        let flow = FlowField::constant(4, 6, 1.5, -0.5);
        let up = flow.resize(8, 12).unwrap();
        assert!(up.tensor().data()[..96].iter().all(|&v| (v - 3.0).abs() < 1e-6));
        assert!(up.tensor().data()[96..].iter().all(|&v| (v + 1.0).abs() < 1e-6));
        let down = flow.resize(1, 3).unwrap();
        assert!((down.at(0, 0).0 - 0.75).abs() < 1e-6);
        assert!((down.at(0, 0).1 + 0.125).abs() < 1e-6);
    }
}
