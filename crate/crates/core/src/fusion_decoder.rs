//! U-Net style fusion decoder.
//!
//! Starting at scale 4, each stage concatenates `[carry, F_i^l, F~_i^c, V_i]`,
//! applies two 3×3 convolutions (LeakyReLU) and upsamples ×2 (nearest) into
//! the carry of the next finer stage. The full-resolution head consumes
//! `[carry, V_0, I_1]`, applies a hidden 3×3 convolution and a 3-channel
//! output convolution squashed by a sigmoid.

use ccdc_tensor::{Binder, ParamStore, Real, UpsampleMode, Var};
use rand::Rng;

use crate::encoders::{LEAKY_SLOPE, PYRAMID_LEVELS};
use crate::error::{Error, Result};

pub const DECODER_PREFIX: &str = "decoder";

/// Channel bookkeeping of the decoder for a given ablation state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderLayout {
    pub ladder: Vec<usize>,
    pub use_visibility: bool,
    pub feed_target: bool,
}

impl DecoderLayout {
    /// Input width of the stage at scale `i` (1..=4).
    pub fn stage_input(&self, i: usize) -> usize {
        let c = self.ladder[i - 1];
        let carry = if i < PYRAMID_LEVELS { self.ladder[i] } else { 0 };
        carry + 2 * c + if self.use_visibility { c } else { 0 }
    }

    pub fn head_input(&self) -> usize {
        self.ladder[0] + usize::from(self.use_visibility) + usize::from(self.feed_target)
    }

    fn describe(&self) -> String {
        format!(
            "visibility {}, target-to-head {}",
            if self.use_visibility { "on" } else { "off" },
            if self.feed_target { "on" } else { "off" }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionDecoder<T> {
    layout: DecoderLayout,
    params: ParamStore<T>,
}

/// Decoder inputs for one batch. `visibility` holds `[V_0, …, V_4]` and must
/// be `None` exactly when the decoder was built without visibility.
pub struct DecoderInputs<'a, 'g, T: Real> {
    pub target_features: &'a [Var<'g, T>],
    pub warped_color_features: &'a [Var<'g, T>],
    pub visibility: Option<&'a [Var<'g, T>]>,
    pub target_image: Var<'g, T>,
}

impl<T: Real> FusionDecoder<T> {
    pub fn new(layout: DecoderLayout, rng: &mut impl Rng) -> Result<Self> {
        if layout.ladder.len() != PYRAMID_LEVELS || layout.ladder.contains(&0) {
            return Err(Error::Config(format!("decoder ladder must have 4 positive widths, got {:?}", layout.ladder)));
        }
        let mut params = ParamStore::new();
        for i in (1..=PYRAMID_LEVELS).rev() {
            let (cin, c) = (layout.stage_input(i), layout.ladder[i - 1]);
            params.add_conv(rng, &format!("{DECODER_PREFIX}.stage{i}.conv_a"), [c, cin, 3, 3], cin * 9, c, 1.0);
            params.add_conv(rng, &format!("{DECODER_PREFIX}.stage{i}.conv_b"), [c, c, 3, 3], c * 9, c, 1.0);
        }
        let (hin, hidden) = (layout.head_input(), layout.ladder[0]);
        params.add_conv(rng, &format!("{DECODER_PREFIX}.head.hidden"), [hidden, hin, 3, 3], hin * 9, hidden, 1.0);
        params.add_conv(rng, &format!("{DECODER_PREFIX}.head.out"), [3, hidden, 3, 3], hidden * 9, 3, 1.0);
        let decoder = FusionDecoder { layout, params };
        decoder.check_params()?;
        Ok(decoder)
    }

    /// Verifies that stored weight shapes agree with the layout.
    pub fn check_params(&self) -> Result<()> {
        for i in 1..=PYRAMID_LEVELS {
            let w = self.params.get(&format!("{DECODER_PREFIX}.stage{i}.conv_a.weight"))?;
            if w.shape()[1] != self.layout.stage_input(i) {
                return Err(Error::Config(format!(
                    "decoder stage {i} takes {} channels but the layout ({}) needs {}",
                    w.shape()[1],
                    self.layout.describe(),
                    self.layout.stage_input(i)
                )));
            }
        }
        let head = self.params.get(&format!("{DECODER_PREFIX}.head.hidden.weight"))?;
        if head.shape()[1] != self.layout.head_input() {
            return Err(Error::Config(format!(
                "decoder head takes {} channels but the layout ({}) needs {}",
                head.shape()[1],
                self.layout.describe(),
                self.layout.head_input()
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> &DecoderLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn conv<'g>(&self, binder: &mut Binder<'g, T>, name: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let w = binder.bind(&self.params, &format!("{DECODER_PREFIX}.{name}.weight"))?;
        let b = binder.bind(&self.params, &format!("{DECODER_PREFIX}.{name}.bias"))?;
        let [_, cin, _, _] = x.dims4()?;
        if w.shape()[1] != cin {
            return Err(Error::Shape(format!(
                "decoder {name} expects {} channels, got {cin} ({})",
                w.shape()[1],
                self.layout.describe()
            )));
        }
        Ok(x.conv2d(w, b, 1, 1)?)
    }

    /// Fuses the inputs into an N×3×H×W image in `(0, 1)`.
    pub fn forward<'g>(&self, binder: &mut Binder<'g, T>, inputs: &DecoderInputs<'_, 'g, T>) -> Result<Var<'g, T>> {
        if inputs.visibility.is_some() != self.layout.use_visibility {
            return Err(Error::Config(format!(
                "decoder built with {} received {} visibility maps",
                self.layout.describe(),
                if inputs.visibility.is_some() { "" } else { "no" }
            )));
        }
        if inputs.target_features.len() != PYRAMID_LEVELS || inputs.warped_color_features.len() != PYRAMID_LEVELS {
            return Err(Error::Shape("decoder needs four feature levels per input".into()));
        }
        if let Some(v) = inputs.visibility {
            if v.len() != PYRAMID_LEVELS + 1 {
                return Err(Error::Shape(format!("expected 5 visibility maps, got {}", v.len())));
            }
        }
        let graph = binder.graph();
        let slope = T::lit(LEAKY_SLOPE);
        let mut carry: Option<Var<'g, T>> = None;
        for i in (1..=PYRAMID_LEVELS).rev() {
            let mut parts = Vec::with_capacity(4);
            parts.extend(carry);
            parts.push(inputs.target_features[i - 1]);
            parts.push(inputs.warped_color_features[i - 1]);
            if let Some(v) = inputs.visibility {
                parts.push(v[i]);
            }
            let x = graph.concat_channels(&parts)?;
            let x = self.conv(binder, &format!("stage{i}.conv_a"), x)?.leaky_relu(slope);
            let x = self.conv(binder, &format!("stage{i}.conv_b"), x)?.leaky_relu(slope);
            let [_, _, h, w] = if i > 1 {
                inputs.target_features[i - 2].dims4()?
            } else {
                inputs.target_image.dims4()?
            };
            carry = Some(x.upsample2x(UpsampleMode::Nearest, h, w)?);
        }
        let mut parts = vec![carry.expect("four stages ran")];
        if let Some(v) = inputs.visibility {
            parts.push(v[0]);
        }
        if self.layout.feed_target {
            parts.push(inputs.target_image);
        }
        let x = graph.concat_channels(&parts)?;
        let x = self.conv(binder, "head.hidden", x)?.leaky_relu(slope);
        Ok(self.conv(binder, "head.out", x)?.sigmoid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccdc_tensor::{Graph, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LADDER: [usize; 4] = [4, 6, 8, 10];

    fn layout(vis: bool, feed: bool) -> DecoderLayout {
        DecoderLayout { ladder: LADDER.to_vec(), use_visibility: vis, feed_target: feed }
    }

    #[test]
    fn channel_bookkeeping() {
        let full = layout(true, true);
        let ablated = layout(false, true);
        for i in 1..=4 {
            assert_eq!(full.stage_input(i) - ablated.stage_input(i), LADDER[i - 1]);
        }
        assert_eq!(full.head_input() - ablated.head_input(), 1);
        assert_eq!(full.stage_input(4), 30);
        assert_eq!(full.stage_input(1), 6 + 12);
        assert_eq!(layout(true, false).head_input(), 5);
    }

    fn run(decoder: &FusionDecoder<f64>, with_vis: bool, perturb: Option<(usize, usize)>) -> Result<Tensor<f64>> {
        let graph = Graph::<f64>::new();
        let mut binder = Binder::new(&graph, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut feat = |c: usize, s: usize| Tensor::from_fn(vec![1, c, s, s], |_| rng.gen_range(-1.0..1.0));
        let sizes = [16, 8, 4, 2];
        let tf: Vec<_> = (0..4).map(|i| graph.constant(feat(LADDER[i], sizes[i]))).collect();
        let mut cf_t: Vec<_> = (0..4).map(|i| feat(LADDER[i], sizes[i])).collect();
        if let Some((level, idx)) = perturb {
            cf_t[level].data_mut()[idx] += 1e-3;
        }
        let cf: Vec<_> = cf_t.into_iter().map(|t| graph.constant(t)).collect();
        let mut vis = vec![graph.constant(feat(1, 32))];
        vis.extend((0..4).map(|i| graph.constant(feat(LADDER[i], sizes[i]))));
        let img = graph.constant(feat(1, 32).map(|v| v.abs()));
        let out = decoder.forward(
            &mut binder,
            &DecoderInputs {
                target_features: &tf,
                warped_color_features: &cf,
                visibility: with_vis.then_some(vis.as_slice()),
                target_image: img,
            },
        )?;
        Ok((*out.value()).clone())
    }

    #[test]
    fn output_is_rgb_in_unit_range() {
        let d = FusionDecoder::new(layout(true, true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let out = run(&d, true, None).unwrap();
        assert_eq!(out.shape(), &[1, 3, 32, 32]);
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ablated_decoder_accepts_pipeline_without_visibility() {
        let d = FusionDecoder::new(layout(false, true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(run(&d, false, None).unwrap().shape(), &[1, 3, 32, 32]);
        assert!(matches!(run(&d, true, None), Err(Error::Config(_))));
        let full = FusionDecoder::new(layout(true, true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(run(&full, false, None), Err(Error::Config(_))));
    }

    #[test]
    fn every_level_of_warped_color_reaches_the_output() {
        let d = FusionDecoder::new(layout(true, true), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let base = run(&d, true, None).unwrap();
        for level in 0..4 {
            let moved = run(&d, true, Some((level, 1))).unwrap();
            assert!(moved.max_abs_diff(&base) > 0.0, "level {}", level + 1);
        }
    }

    #[test]
    fn mismatched_params_are_detected() {
        let mut d = FusionDecoder::<f64>::new(layout(true, true), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let other = FusionDecoder::<f64>::new(layout(false, true), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        *d.params_mut() = other.params().clone();
        assert!(matches!(d.check_params(), Err(Error::Config(_))));
    }
}
