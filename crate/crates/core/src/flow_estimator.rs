//! FlowNetS-style cross-camera flow estimator with a 4-channel input
//! (grayscale target concatenated with the upsampled RGB reference).
//!
//! The network natively predicts flow at strides 4..64. Strides 4, 8 and 16
//! become scales 2, 3 and 4; scales 1 and 0 are bilinear ×2 upsamplings of
//! the scale-2 prediction with displacements doubled per level. Inputs are
//! reflection-padded (bottom/right) to a multiple of 64 and predictions are
//! cropped back to the pyramid sizes.

use ccdc_tensor::{Binder, Graph, ParamStore, Real, UpsampleMode, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::imageops::{gaussian_pyramid_shapes, ColorImage, GrayImage};
use crate::warp::FlowField;

pub const FLOW_LEVELS: usize = 5;
pub const INPUT_CHANNELS: usize = 4;
const PAD_MULTIPLE: usize = 64;
const SLOPE: f64 = 0.1;

/// Flow fields `f_0..f_4`, `f_i` at scale `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPyramid {
    levels: Vec<FlowField>,
}

impl FlowPyramid {
    pub fn new(levels: Vec<FlowField>) -> Result<Self> {
        if levels.len() != FLOW_LEVELS {
            return Err(Error::Shape(format!(
                "flow pyramid needs {FLOW_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        let sizes = gaussian_pyramid_shapes(levels[0].height(), levels[0].width(), FLOW_LEVELS)?;
        for (i, (f, &(h, w))) in levels.iter().zip(&sizes).enumerate() {
            if (f.height(), f.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "flow level {i} is {}x{}, expected {h}x{w}",
                    f.height(),
                    f.width()
                )));
            }
        }
        Ok(FlowPyramid { levels })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        let sizes = gaussian_pyramid_shapes(height, width, FLOW_LEVELS)?;
        Self::new(sizes.into_iter().map(|(h, w)| FlowField::zeros(h, w)).collect())
    }

    pub fn levels(&self) -> &[FlowField] {
        &self.levels
    }

    pub fn level(&self, scale: usize) -> Option<&FlowField> {
        self.levels.get(scale)
    }
}

/// Mean and maximum displacement magnitude of one flow level, in pixels at
/// that level's resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStats {
    pub mean: f64,
    pub max: f64,
}

pub fn flow_magnitude_stats(pyramid: &FlowPyramid) -> Vec<FlowStats> {
    pyramid
        .levels()
        .iter()
        .map(|f| {
            let plane = f.height() * f.width();
            let d = f.tensor().data();
            let mags = (0..plane).map(|p| (d[p] as f64).hypot(d[plane + p] as f64));
            let (sum, max) = mags.fold((0.0, 0.0f64), |(s, m), v| (s + v, m.max(v)));
            FlowStats { mean: sum / plane as f64, max }
        })
        .collect()
}

/// Contracting part, widths of the original network before the multiplier.
const CONTRACTING: [(&str, usize, usize, usize); 10] = [
    ("conv1", 64, 7, 2),
    ("conv2", 128, 5, 2),
    ("conv3", 256, 5, 2),
    ("conv3_1", 256, 3, 1),
    ("conv4", 512, 3, 2),
    ("conv4_1", 512, 3, 1),
    ("conv5", 512, 3, 2),
    ("conv5_1", 512, 3, 1),
    ("conv6", 1024, 3, 2),
    ("conv6_1", 1024, 3, 1),
];

/// Expanding stages from coarse to fine: (skip layer, deconv width before
/// the multiplier). The prediction at stride 64 comes from `conv6_1`.
const EXPANDING: [(&str, usize); 4] = [("conv5_1", 512), ("conv4_1", 256), ("conv3_1", 128), ("conv2", 64)];

#[derive(Clone, Debug, PartialEq)]
pub struct FlowNet<T> {
    width: f64,
    params: ParamStore<T>,
    contracting: Vec<(String, usize, usize, usize)>,
    deconv_widths: Vec<usize>,
}

pub const FLOWNET_PREFIX: &str = "flownet";

fn scaled(c: usize, width: f64) -> usize {
    ((c as f64 * width).round() as usize).max(1)
}

impl<T: Real> FlowNet<T> {
    pub fn new(width: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Config(format!("flow width multiplier must be positive, got {width}")));
        }
        let mut params = ParamStore::new();
        let mut contracting = Vec::new();
        let mut prev = INPUT_CHANNELS;
        for &(name, c, k, s) in &CONTRACTING {
            let out = scaled(c, width);
            params.add_conv(rng, &format!("{FLOWNET_PREFIX}.{name}"), [out, prev, k, k], prev * k * k, out, 1.0);
            contracting.push((name.to_string(), out, k, s));
            prev = out;
        }
        let width_of = |name: &str| contracting.iter().find(|c| c.0 == name).unwrap().1;
        // Flow heads start near zero so that initial warps are close to identity.
        let head_gain = 0.1;
        params.add_conv(rng, &format!("{FLOWNET_PREFIX}.predict6"), [2, prev, 3, 3], prev * 9, 2, head_gain);
        let mut deconv_widths = Vec::new();
        let mut coarse = prev;
        for (i, &(skip, d)) in EXPANDING.iter().enumerate() {
            let level = 5 - i;
            let d = scaled(d, width);
            let p = format!("{FLOWNET_PREFIX}.level{level}");
            params.add_conv(rng, &format!("{p}.deconv"), [coarse, d, 4, 4], coarse * 4, d, 1.0);
            params.add_conv(rng, &format!("{p}.upflow"), [2, 2, 4, 4], 2 * 4, 2, 1.0);
            let cat = width_of(skip) + d + 2;
            params.add_conv(rng, &format!("{p}.predict"), [2, cat, 3, 3], cat * 9, 2, head_gain);
            deconv_widths.push(d);
            coarse = cat;
        }
        Ok(FlowNet { width, params, contracting, deconv_widths })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Channel count of the first convolution's input.
    pub fn input_channels(&self) -> usize {
        self.params.get(&format!("{FLOWNET_PREFIX}.conv1.weight")).map(|w| w.shape()[1]).unwrap_or(0)
    }

    fn conv<'g>(
        &self,
        binder: &mut Binder<'g, T>,
        name: &str,
        x: Var<'g, T>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        let w = binder.bind(&self.params, &format!("{FLOWNET_PREFIX}.{name}.weight"))?;
        let b = binder.bind(&self.params, &format!("{FLOWNET_PREFIX}.{name}.bias"))?;
        Ok(x.conv2d(w, b, stride, padding)?)
    }

    fn deconv<'g>(&self, binder: &mut Binder<'g, T>, name: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let w = binder.bind(&self.params, &format!("{FLOWNET_PREFIX}.{name}.weight"))?;
        let b = binder.bind(&self.params, &format!("{FLOWNET_PREFIX}.{name}.bias"))?;
        Ok(x.conv_transpose2d(w, b, 2, 1)?)
    }

    /// Graph forward. `target` is N×1×H×W, `reference_up` N×3×H×W at the same
    /// size. Returns `[f_0, …, f_4]`, each N×2×H_i×W_i.
    pub fn forward<'g>(
        &self,
        binder: &mut Binder<'g, T>,
        target: Var<'g, T>,
        reference_up: Var<'g, T>,
    ) -> Result<Vec<Var<'g, T>>> {
        let [n, tc, h, w] = target.dims4()?;
        let [rn, rc, rh, rw] = reference_up.dims4()?;
        if tc != 1 || rc != 3 || (n, h, w) != (rn, rh, rw) {
            return Err(Error::Shape(format!(
                "flow estimator needs a 1-channel target and 3-channel reference of equal size, got {:?} and {:?}",
                target.shape(),
                reference_up.shape()
            )));
        }
        let sizes = gaussian_pyramid_shapes(h, w, FLOW_LEVELS)?;
        let graph = target.graph();
        let x = graph.concat_channels(&[target, reference_up])?;
        debug_assert_eq!(x.dims4()?[1], self.input_channels());
        let pad_h = h.next_multiple_of(PAD_MULTIPLE) - h;
        let pad_w = w.next_multiple_of(PAD_MULTIPLE) - w;
        let x = x.reflect_pad(pad_h, pad_w)?;

        let slope = T::lit(SLOPE);
        let mut activations: Vec<(String, Var<'g, T>)> = Vec::new();
        let mut cur = x;
        for (name, _, k, s) in &self.contracting {
            cur = self.conv(binder, name, cur, *s, k / 2)?.leaky_relu(slope);
            activations.push((name.clone(), cur));
        }
        let skip = |name: &str| activations.iter().find(|a| a.0 == name).unwrap().1;

        // Native predictions from stride 64 down to stride 4.
        let mut flow = self.conv(binder, "predict6", cur, 1, 1)?;
        let mut features = cur;
        let mut native = vec![flow];
        for (i, &(skip_name, _)) in EXPANDING.iter().enumerate() {
            let level = 5 - i;
            let up_feat = self.deconv(binder, &format!("level{level}.deconv"), features)?.leaky_relu(slope);
            let up_flow = self.deconv(binder, &format!("level{level}.upflow"), flow)?;
            let cat = graph.concat_channels(&[skip(skip_name), up_feat, up_flow])?;
            flow = self.conv(binder, &format!("level{level}.predict"), cat, 1, 1)?;
            features = cat;
            native.push(flow);
        }
        // native = [stride64, stride32, stride16, stride8, stride4]
        let mut flows: Vec<Var<'g, T>> = Vec::with_capacity(FLOW_LEVELS);
        for (scale, native_idx) in [(4usize, 2usize), (3, 3), (2, 4)] {
            let (lh, lw) = sizes[scale];
            flows.push(native[native_idx].crop(lh, lw)?);
        }
        flows.reverse(); // [f2, f3, f4]
        let mut finer = flows[0];
        for scale in [1usize, 0] {
            let (lh, lw) = sizes[scale];
            finer = upscale_flow(finer, lh, lw)?;
            flows.insert(0, finer);
        }
        debug_assert_eq!(flows.len(), FLOW_LEVELS);
        Ok(flows)
    }

    /// Runs the estimator on a single pair outside of a training graph.
    pub fn estimate(&self, target: &GrayImage, reference_up: &ColorImage) -> Result<FlowPyramid> {
        estimate_flow(target, reference_up, self)
    }
}

/// Moves a flow one level finer: bilinear ×2 upsampling with displacement
/// values doubled (pixels at the finer scale).
pub fn upscale_flow<'g, T: Real>(flow: Var<'g, T>, height: usize, width: usize) -> Result<Var<'g, T>> {
    Ok(flow.upsample2x(UpsampleMode::Bilinear, height, width)?.scale(T::lit(2.0)))
}

/// Flow pyramid for one target/reference pair.
pub fn estimate_flow<T: Real>(
    target: &GrayImage,
    reference_up: &ColorImage,
    net: &FlowNet<T>,
) -> Result<FlowPyramid> {
    if target.size() != reference_up.size() {
        return Err(Error::Shape(format!(
            "target is {:?} but upsampled reference is {:?}",
            target.size(),
            reference_up.size()
        )));
    }
    let (h, w) = target.size();
    let graph = Graph::<T>::new();
    let mut binder = Binder::new(&graph, false);
    let t = graph.constant(target.tensor().cast::<T>().reshape(vec![1, 1, h, w])?);
    let r = graph.constant(reference_up.tensor().cast::<T>().reshape(vec![1, 3, h, w])?);
    let flows = net.forward(&mut binder, t, r)?;
    let levels = flows
        .into_iter()
        .map(|f| {
            let v = f.value().cast::<f32>();
            let [_, _, fh, fw] = v.dims4()?;
            FlowField::new(v.reshape(vec![2, fh, fw])?)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowPyramid::new(levels)
}
