use crate::error::{Result, TensorError};
use crate::graph::Operation;
use crate::real::Real;
use crate::tensor::Tensor;

/// Concatenation of NCHW tensors along the channel axis.
pub(crate) struct ConcatChannels;

impl<T: Real> Operation<T> for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::argument("concat_channels", "no inputs"))?;
        let [n, _, h, w] = first.dims4()?;
        let mut channels = 0;
        for (i, t) in inputs.iter().enumerate() {
            let [tn, tc, th, tw] = t.dims4()?;
            if (tn, th, tw) != (n, h, w) {
                return Err(TensorError::shape(
                    "concat_channels",
                    format!("input {i} has shape {:?}, expected batch {n} and {h}x{w}", t.shape()),
                ));
            }
            channels += tc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for t in inputs {
                let c = t.dims4()?[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        Tensor::new(vec![n, channels, h, w], data)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [n, total, h, w] = g.dims4().unwrap();
        let plane = h * w;
        let mut out: Vec<Vec<T>> = x.iter().map(|t| Vec::with_capacity(t.len())).collect();
        for b in 0..n {
            let mut offset = b * total * plane;
            for (i, t) in x.iter().enumerate() {
                let len = t.dims4().unwrap()[1] * plane;
                out[i].extend_from_slice(&g.data()[offset..offset + len]);
                offset += len;
            }
        }
        out.into_iter()
            .zip(x)
            .map(|(d, t)| Some(Tensor::new(t.shape().to_vec(), d).unwrap()))
            .collect()
    }
}

/// Channel range `[start, start + count)` of an NCHW tensor.
pub(crate) struct SliceChannels {
    pub start: usize,
    pub count: usize,
}

impl<T: Real> Operation<T> for SliceChannels {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let [n, c, h, w] = x.dims4()?;
        if self.start + self.count > c {
            return Err(TensorError::shape(
                "slice_channels",
                format!("channels {}..{} out of {c}", self.start, self.start + self.count),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * self.count * plane);
        for b in 0..n {
            let base = (b * c + self.start) * plane;
            data.extend_from_slice(&x.data()[base..base + self.count * plane]);
        }
        Tensor::new(vec![n, self.count, h, w], data)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = x[0].dims4().unwrap();
        let plane = h * w;
        let mut grad = Tensor::zeros(x[0].shape().to_vec());
        for b in 0..n {
            let dst = (b * c + self.start) * plane;
            let src = b * self.count * plane;
            grad.data_mut()[dst..dst + self.count * plane]
                .copy_from_slice(&g.data()[src..src + self.count * plane]);
        }
        vec![Some(grad)]
    }
}

/// Bottom/right reflection padding (mirror without repeating the edge pixel).
pub(crate) struct ReflectPad {
    pub bottom: usize,
    pub right: usize,
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

impl<T: Real> Operation<T> for ReflectPad {
    fn name(&self) -> &'static str {
        "reflect_pad"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let [n, c, h, w] = x.dims4()?;
        if self.bottom >= h || self.right >= w {
            return Err(TensorError::argument(
                "reflect_pad",
                format!("padding ({}, {}) must be smaller than {h}x{w}", self.bottom, self.right),
            ));
        }
        let (ho, wo) = (h + self.bottom, w + self.right);
        let mut out = Tensor::zeros(vec![n, c, ho, wo]);
        let src = x.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            for y in 0..ho {
                let sy = reflect(y, h);
                for xx in 0..wo {
                    dst[(p * ho + y) * wo + xx] = src[(p * h + sy) * w + reflect(xx, w)];
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = x[0].dims4().unwrap();
        let (ho, wo) = (h + self.bottom, w + self.right);
        let mut grad = Tensor::zeros(x[0].shape().to_vec());
        let gd = g.data();
        let dst = grad.data_mut();
        for p in 0..n * c {
            for y in 0..ho {
                let sy = reflect(y, h);
                for xx in 0..wo {
                    dst[(p * h + sy) * w + reflect(xx, w)] += gd[(p * ho + y) * wo + xx];
                }
            }
        }
        vec![Some(grad)]
    }
}

/// Keeps the top-left `height x width` window.
pub(crate) struct Crop {
    pub height: usize,
    pub width: usize,
}

impl<T: Real> Operation<T> for Crop {
    fn name(&self) -> &'static str {
        "crop"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let [n, c, h, w] = x.dims4()?;
        if self.height > h || self.width > w {
            return Err(TensorError::shape(
                "crop",
                format!("cannot crop {h}x{w} to {}x{}", self.height, self.width),
            ));
        }
        let mut data = Vec::with_capacity(n * c * self.height * self.width);
        for p in 0..n * c {
            for y in 0..self.height {
                let row = (p * h + y) * w;
                data.extend_from_slice(&x.data()[row..row + self.width]);
            }
        }
        Tensor::new(vec![n, c, self.height, self.width], data)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = x[0].dims4().unwrap();
        let mut grad = Tensor::zeros(x[0].shape().to_vec());
        for p in 0..n * c {
            for y in 0..self.height {
                let src = (p * self.height + y) * self.width;
                let dst = (p * h + y) * w;
                grad.data_mut()[dst..dst + self.width]
                    .copy_from_slice(&g.data()[src..src + self.width]);
            }
        }
        vec![Some(grad)]
    }
}
