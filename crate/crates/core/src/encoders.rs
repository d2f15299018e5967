//! Pyramidal feature extractors for the luminance and color inputs.
//!
//! Each of the four stages is a stride-2 3×3 convolution followed by a
//! stride-1 3×3 convolution, both with LeakyReLU(0.1). Features are taken
//! after the second activation, giving strides 2, 4, 8 and 16.

use ccdc_tensor::{Binder, Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::imageops::{gaussian_pyramid_shapes, ColorImage, GrayImage};

pub const LEAKY_SLOPE: f64 = 0.1;
pub const PYRAMID_LEVELS: usize = 4;
pub const DEFAULT_LADDER: [usize; 4] = [32, 64, 128, 256];

/// Feature maps at scales 1..=4. Levels are C×H×W for single images or
/// N×C×H×W for batches.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T> {
    levels: Vec<Tensor<T>>,
}

impl<T: Real> FeaturePyramid<T> {
    pub fn new(levels: Vec<Tensor<T>>) -> Result<Self> {
        if levels.len() != PYRAMID_LEVELS {
            return Err(Error::Shape(format!(
                "feature pyramid needs {PYRAMID_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        if let Some(i) = levels.iter().position(|l| !l.all_finite()) {
            return Err(Error::Argument(format!("feature level {} is not finite", i + 1)));
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[Tensor<T>] {
        &self.levels
    }

    /// Level at scale `i` (1..=4).
    pub fn scale(&self, i: usize) -> Option<&Tensor<T>> {
        i.checked_sub(1).and_then(|k| self.levels.get(k))
    }
}

/// One of the two encoders. Parameter names are prefixed with `name`, so a
/// luminance and a color encoder never alias.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    name: String,
    in_channels: usize,
    ladder: Vec<usize>,
    params: ParamStore<T>,
}

impl<T: Real> Encoder<T> {
    pub fn new(name: &str, in_channels: usize, ladder: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if ladder.len() != PYRAMID_LEVELS || ladder.contains(&0) {
            return Err(Error::Config(format!(
                "encoder ladder needs {PYRAMID_LEVELS} positive widths, got {ladder:?}"
            )));
        }
        let mut params = ParamStore::new();
        let mut prev = in_channels;
        for (i, &c) in ladder.iter().enumerate() {
            params.add_conv(rng, &format!("{name}.stage{}.down", i + 1), [c, prev, 3, 3], prev * 9, c, 1.0);
            params.add_conv(rng, &format!("{name}.stage{}.conv", i + 1), [c, c, 3, 3], c * 9, c, 1.0);
            prev = c;
        }
        Ok(Encoder { name: name.to_string(), in_channels, ladder: ladder.to_vec(), params })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn ladder(&self) -> &[usize] {
        &self.ladder
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Graph forward over an N×C×H×W batch; returns the four levels.
    pub fn forward<'g>(&self, binder: &mut Binder<'g, T>, x: Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let [_, c, h, w] = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} input channel(s), got {c}",
                self.name, self.in_channels
            )));
        }
        gaussian_pyramid_shapes(h, w, PYRAMID_LEVELS + 1)?;
        let slope = T::lit(LEAKY_SLOPE);
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        let mut cur = x;
        for i in 1..=PYRAMID_LEVELS {
            for (layer, stride) in [("down", 2), ("conv", 1)] {
                let prefix = format!("{}.stage{i}.{layer}", self.name);
                let weight = binder.bind(&self.params, &format!("{prefix}.weight"))?;
                let bias = binder.bind(&self.params, &format!("{prefix}.bias"))?;
                cur = cur.conv2d(weight, bias, stride, 1)?.leaky_relu(slope);
            }
            levels.push(cur);
        }
        Ok(levels)
    }

    /// Runs the encoder on one C×H×W image outside of any training graph.
    pub fn encode(&self, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let [_, c, h, w] = image.dims4()?;
        let graph = Graph::new();
        let mut binder = Binder::new(&graph, false);
        let x = graph.constant(image.clone().reshape(vec![1, c, h, w])?);
        let levels = self
            .forward(&mut binder, x)?
            .into_iter()
            .map(|v| {
                let t = (*v.value()).clone();
                let [_, c, h, w] = t.dims4()?;
                Ok(t.reshape(vec![c, h, w])?)
            })
            .collect::<Result<Vec<_>>>()?;
        FeaturePyramid::new(levels)
    }
}

/// Features of the grayscale target (or of the reference luminance).
pub fn encode_luminance(img: &GrayImage, encoder: &Encoder<f32>) -> Result<FeaturePyramid<f32>> {
    if encoder.in_channels() != 1 {
        return Err(Error::Shape(format!("{} is not a luminance encoder", encoder.name())));
    }
    encoder.encode(img.tensor())
}

/// Features of the upsampled color reference.
pub fn encode_color(img: &ColorImage, encoder: &Encoder<f32>) -> Result<FeaturePyramid<f32>> {
    if encoder.in_channels() != 3 {
        return Err(Error::Shape(format!("{} is not a color encoder", encoder.name())));
    }
    encoder.encode(img.tensor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccdc_tensor::gradcheck::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gray(h: usize, w: usize) -> GrayImage {
        GrayImage::new(Tensor::from_fn(vec![1, h, w], |i| ((i * 7919) % 997) as f32 / 997.0)).unwrap()
    }

    #[test]
    fn level_shapes_follow_strides() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::<f32>::new("lum", 1, &DEFAULT_LADDER, &mut rng).unwrap();
        let pyr = encode_luminance(&gray(64, 64), &enc).unwrap();
        let shapes: Vec<_> = pyr.levels().iter().map(|l| l.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![32, 32, 32], vec![64, 16, 16], vec![128, 8, 8], vec![256, 4, 4]]);

        let color_enc = Encoder::<f32>::new("col", 3, &DEFAULT_LADDER, &mut rng).unwrap();
        let img = ColorImage::from_fn(64, 64, |c, y, x| ((c + y + x) % 5) as f32 / 5.0).unwrap();
        let cp = encode_color(&img, &color_enc).unwrap();
        let cshapes: Vec<_> = cp.levels().iter().map(|l| l.shape().to_vec()).collect();
        assert_eq!(cshapes, shapes);
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::<f32>::new("lum", 1, &[4, 4, 4, 4], &mut rng).unwrap();
        let img = gray(32, 48);
        assert_eq!(encode_luminance(&img, &enc).unwrap(), encode_luminance(&img, &enc).unwrap());
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lum = Encoder::<f32>::new("lum", 1, &[4, 4, 4, 4], &mut rng).unwrap();
        let col = Encoder::<f32>::new("col", 3, &[4, 4, 4, 4], &mut rng).unwrap();
        let img = ColorImage::from_fn(32, 32, |_, _, _| 0.5).unwrap();
        assert!(matches!(lum.encode(img.tensor()), Err(Error::Shape(_))));
        assert!(matches!(encode_color(&img, &lum), Err(Error::Shape(_))));
        assert!(matches!(encode_luminance(&gray(32, 32), &col), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_input_with_zero_bias_gives_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::<f32>::new("col", 3, &[4, 8, 8, 8], &mut rng).unwrap();
        let img = ColorImage::new(Tensor::zeros(vec![3, 32, 32])).unwrap();
        let pyr = encode_color(&img, &enc).unwrap();
        assert!(pyr.levels().iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = Encoder::<f64>::new("col", 3, &[4, 4, 6, 6], &mut rng).unwrap();
        let image = Tensor::from_fn(vec![1, 3, 32, 32], |_| rng.gen_range(0.0..1.0));
        let level4_sum = |img: &Tensor<f64>, track: bool| {
            let graph = Graph::new();
            let mut binder = Binder::new(&graph, false);
            let x = graph.leaf(img.clone(), track);
            let levels = enc.forward(&mut binder, x).unwrap();
            let s = levels[3].sum();
            let value = s.value().scalar_value();
            let grad = if track { Some(graph.backward(s).unwrap().get_or_zeros(x)) } else { None };
            (value, grad)
        };
        let (_, grad) = level4_sum(&image, true);
        let grad = grad.unwrap();
        let h = 1e-6;
        for &probe in &[(0usize, 10usize, 12usize), (1, 16, 16), (2, 5, 27)] {
            let idx = (probe.0 * 32 + probe.1) * 32 + probe.2;
            let mut plus = image.clone();
            plus.data_mut()[idx] += h;
            let mut minus = image.clone();
            minus.data_mut()[idx] -= h;
            let numeric = (level4_sum(&plus, false).0 - level4_sum(&minus, false).0) / (2.0 * h);
            assert!(relative_error(grad.data()[idx], numeric) < 1e-3, "{probe:?}");
        }
    }
}
