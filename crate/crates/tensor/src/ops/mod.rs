//! Differentiable operations exposed as methods on [`Var`].

mod conv;
mod elementwise;
mod resample;
mod shape;

pub use resample::UpsampleMode;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;

impl<'g, T: Real> Var<'g, T> {
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.graph().apply(elementwise::Add, &[self, other])
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.graph().apply(elementwise::Sub, &[self, other])
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.graph().apply(elementwise::Mul, &[self, other])
    }

    pub fn affine(self, scale: T, shift: T) -> Var<'g, T> {
        self.graph()
            .apply(elementwise::Affine { scale, shift }, &[self])
            .expect("unary op cannot fail")
    }

    pub fn scale(self, factor: T) -> Var<'g, T> {
        self.affine(factor, T::zero())
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        self.graph()
            .apply(elementwise::LeakyRelu { slope }, &[self])
            .expect("unary op cannot fail")
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.graph().apply(elementwise::Sigmoid, &[self]).expect("unary op cannot fail")
    }

    pub fn square(self) -> Var<'g, T> {
        self.graph().apply(elementwise::Square, &[self]).expect("unary op cannot fail")
    }

    pub fn sum(self) -> Var<'g, T> {
        self.graph().apply(elementwise::Sum, &[self]).expect("unary op cannot fail")
    }

    pub fn mean(self) -> Var<'g, T> {
        self.graph().apply(elementwise::Mean, &[self]).expect("unary op cannot fail")
    }

    /// Square-kernel convolution; `weight` is Cout×Cin×k×k.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Var<'g, T>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        self.graph().apply(conv::Conv2d { stride, padding }, &[self, weight, bias])
    }

    /// Transposed convolution; `weight` is Cin×Cout×k×k.
    pub fn conv_transpose2d(
        self,
        weight: Var<'g, T>,
        bias: Var<'g, T>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        self.graph().apply(conv::ConvTranspose2d { stride, padding }, &[self, weight, bias])
    }

    pub fn upsample2x(self, mode: UpsampleMode, height: usize, width: usize) -> Result<Var<'g, T>> {
        self.graph().apply(resample::Upsample2x { mode, height, width }, &[self])
    }

    pub fn slice_channels(self, start: usize, count: usize) -> Result<Var<'g, T>> {
        self.graph().apply(shape::SliceChannels { start, count }, &[self])
    }

    pub fn reflect_pad(self, bottom: usize, right: usize) -> Result<Var<'g, T>> {
        if bottom == 0 && right == 0 {
            return Ok(self);
        }
        self.graph().apply(shape::ReflectPad { bottom, right }, &[self])
    }

    pub fn crop(self, height: usize, width: usize) -> Result<Var<'g, T>> {
        let [_, _, h, w] = self.dims4()?;
        if (h, w) == (height, width) {
            return Ok(self);
        }
        self.graph().apply(shape::Crop { height, width }, &[self])
    }
}

impl<T: Real> Graph<T> {
    pub fn concat_channels<'g>(&'g self, inputs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        if inputs.is_empty() {
            return Err(TensorError::argument("concat_channels", "no inputs"));
        }
        if inputs.len() == 1 {
            return Ok(inputs[0]);
        }
        self.apply(shape::ConcatChannels, inputs)
    }
}
