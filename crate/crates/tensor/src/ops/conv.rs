//! 2-D convolution and transposed convolution via im2col + GEMM.

use crate::error::{Result, TensorError};
use crate::graph::Operation;
use crate::real::Real;
use crate::tensor::Tensor;

/// Geometry of a square-kernel convolution over one image plane stack.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if height + 2 * padding < kernel || width + 2 * padding < kernel || stride == 0 {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel {kernel} stride {stride} does not fit a {height}x{width} input"),
            ));
        }
        Ok(Geometry {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: (height + 2 * padding - kernel) / stride + 1,
            out_w: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds `image` (C×H×W) into a `(C·k·k) × (out_h·out_w)` matrix.
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride as isize, self.padding as isize);
        let l = self.cols();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * l..][..l];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * s + ky as isize - p;
                        let dst = &mut row[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            *d = if ix < 0 || ix >= self.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: accumulates columns back into `image`.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride as isize, self.padding as isize);
        let l = self.cols();
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * l..][..l];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst =
                            &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, &v) in row[oy * self.out_w..(oy + 1) * self.out_w].iter().enumerate()
                        {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(bias: &Tensor<T>, channels: usize, op: &'static str) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(TensorError::shape(
            op,
            format!("bias shape {:?}, expected [{channels}]", bias.shape()),
        ));
    }
    Ok(())
}

fn bias_grad<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = g.dims4().unwrap();
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let start = (b * c + ch) * h * w;
            *o += g.data()[start..start + h * w].iter().copied().sum::<T>();
        }
    }
    Tensor::new(vec![c], out).unwrap()
}

/// Inputs: `x` N×Cin×H×W, `weight` Cout×Cin×k×k, `bias` Cout.
pub(crate) struct Conv2d {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    fn geometry<T: Real>(&self, x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, Geometry)> {
        let [n, cin, h, w] = x.dims4()?;
        let (cout, wcin, kh, kw) = match *weight.shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(TensorError::shape("conv2d", "weight must be 4-D")),
        };
        if wcin != cin || kh != kw {
            return Err(TensorError::shape(
                "conv2d",
                format!("weight {:?} incompatible with input {:?}", weight.shape(), x.shape()),
            ));
        }
        Ok((n, cout, Geometry::new(cin, h, w, kh, self.stride, self.padding)?))
    }
}

impl<T: Real> Operation<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, weight, bias) = (inputs[0], inputs[1], inputs[2]);
        let (n, cout, geo) = self.geometry(x, weight)?;
        check_bias(bias, cout, "conv2d")?;
        let (kk, l) = (geo.rows(), geo.cols());
        let in_len = geo.channels * geo.height * geo.width;
        let mut out = Tensor::zeros(vec![n, cout, geo.out_h, geo.out_w]);
        let mut cols = vec![T::zero(); kk * l];
        for b in 0..n {
            geo.im2col(&x.data()[b * in_len..(b + 1) * in_len], &mut cols);
            let y = &mut out.data_mut()[b * cout * l..(b + 1) * cout * l];
            for (co, row) in y.chunks_mut(l).enumerate() {
                row.fill(bias.data()[co]);
            }
            T::gemm(
                cout,
                kk,
                l,
                T::one(),
                weight.data(),
                (kk as isize, 1),
                &cols,
                (l as isize, 1),
                T::one(),
                y,
                (l as isize, 1),
            );
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (input, weight) = (x[0], x[1]);
        let (n, cout, geo) = self.geometry(input, weight).unwrap();
        let (kk, l) = (geo.rows(), geo.cols());
        let in_len = geo.channels * geo.height * geo.width;
        let mut dx = Tensor::zeros(input.shape().to_vec());
        let mut dw = Tensor::zeros(weight.shape().to_vec());
        let mut cols = vec![T::zero(); kk * l];
        let mut dcols = vec![T::zero(); kk * l];
        for b in 0..n {
            let gy = &g.data()[b * cout * l..(b + 1) * cout * l];
            geo.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut cols);
            // dW += dY · colsᵀ
            T::gemm(
                cout,
                l,
                kk,
                T::one(),
                gy,
                (l as isize, 1),
                &cols,
                (1, l as isize),
                T::one(),
                dw.data_mut(),
                (kk as isize, 1),
            );
            // dcols = Wᵀ · dY
            T::gemm(
                kk,
                cout,
                l,
                T::one(),
                weight.data(),
                (1, kk as isize),
                gy,
                (l as isize, 1),
                T::zero(),
                &mut dcols,
                (l as isize, 1),
            );
            geo.col2im(&dcols, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
        }
        vec![Some(dx), Some(dw), Some(bias_grad(g))]
    }
}

/// Inputs: `x` N×Cin×H×W, `weight` Cin×Cout×k×k, `bias` Cout. Output size is
/// `(H - 1)·stride - 2·padding + k`.
pub(crate) struct ConvTranspose2d {
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    /// Geometry of the equivalent forward convolution mapping the output
    /// back onto the input grid.
    fn geometry<T: Real>(&self, x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize, Geometry)> {
        let [n, cin, h, w] = x.dims4()?;
        let (wcin, cout, kh, kw) = match *weight.shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(TensorError::shape("conv_transpose2d", "weight must be 4-D")),
        };
        if wcin != cin || kh != kw {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("weight {:?} incompatible with input {:?}", weight.shape(), x.shape()),
            ));
        }
        let grow = |i: usize| ((i - 1) * self.stride + kh).checked_sub(2 * self.padding);
        let (Some(ho), Some(wo)) = (grow(h), grow(w)) else {
            return Err(TensorError::shape("conv_transpose2d", "padding exceeds output"));
        };
        let geo = Geometry::new(cout, ho, wo, kh, self.stride, self.padding)?;
        debug_assert_eq!((geo.out_h, geo.out_w), (h, w));
        Ok((n, cin, cout, geo))
    }
}

impl<T: Real> Operation<T> for ConvTranspose2d {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, weight, bias) = (inputs[0], inputs[1], inputs[2]);
        let (n, cin, cout, geo) = self.geometry(x, weight)?;
        check_bias(bias, cout, "conv_transpose2d")?;
        let (kk, l) = (geo.rows(), geo.cols());
        let out_len = cout * geo.height * geo.width;
        let mut out = Tensor::zeros(vec![n, cout, geo.height, geo.width]);
        let mut cols = vec![T::zero(); kk * l];
        for b in 0..n {
            // cols = Wᵀ · x
            T::gemm(
                kk,
                cin,
                l,
                T::one(),
                weight.data(),
                (1, kk as isize),
                &x.data()[b * cin * l..(b + 1) * cin * l],
                (l as isize, 1),
                T::zero(),
                &mut cols,
                (l as isize, 1),
            );
            let y = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
            geo.col2im(&cols, y);
            let plane = geo.height * geo.width;
            for (co, chunk) in y.chunks_mut(plane).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (input, weight) = (x[0], x[1]);
        let (n, cin, cout, geo) = self.geometry(input, weight).unwrap();
        let (kk, l) = (geo.rows(), geo.cols());
        let out_len = cout * geo.height * geo.width;
        let mut dx = Tensor::zeros(input.shape().to_vec());
        let mut dw = Tensor::zeros(weight.shape().to_vec());
        let mut cols = vec![T::zero(); kk * l];
        for b in 0..n {
            geo.im2col(&g.data()[b * out_len..(b + 1) * out_len], &mut cols);
            let xb = &input.data()[b * cin * l..(b + 1) * cin * l];
            // dx = W · cols
            T::gemm(
                cin,
                kk,
                l,
                T::one(),
                weight.data(),
                (kk as isize, 1),
                &cols,
                (l as isize, 1),
                T::zero(),
                &mut dx.data_mut()[b * cin * l..(b + 1) * cin * l],
                (l as isize, 1),
            );
            // dW += x · colsᵀ
            T::gemm(
                cin,
                l,
                kk,
                T::one(),
                xb,
                (l as isize, 1),
                &cols,
                (1, l as isize),
                T::one(),
                dw.data_mut(),
                (kk as isize, 1),
            );
        }
        vec![Some(dx), Some(dw), Some(bias_grad(g))]
    }
}
