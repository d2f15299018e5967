use crate::error::{Result, TensorError};
use crate::graph::Operation;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centres, edge clamped.
    Bilinear,
}

/// Factor-two upsampling to an explicit output size. The output may be one
/// pixel smaller than `2 * input` so that odd pyramid levels line up.
pub(crate) struct Upsample2x {
    pub mode: UpsampleMode,
    pub height: usize,
    pub width: usize,
}

/// Source taps (index, weight) along one axis for output coordinate `o`.
fn taps(mode: UpsampleMode, o: usize, n: usize) -> [(usize, f64); 2] {
    match mode {
        UpsampleMode::Nearest => [(o / 2, 1.0), (o / 2, 0.0)],
        UpsampleMode::Bilinear => {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            let f = s - i0 as f64;
            [(i0, 1.0 - f), (i1, f)]
        }
    }
}

impl Upsample2x {
    fn check(&self, h: usize, w: usize) -> Result<()> {
        let ok = |i: usize, o: usize| o <= 2 * i && o + 1 >= 2 * i;
        if !ok(h, self.height) || !ok(w, self.width) {
            return Err(TensorError::shape(
                "upsample2x",
                format!("cannot upsample {h}x{w} to {}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

impl<T: Real> Operation<T> for Upsample2x {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let [n, c, h, w] = x.dims4()?;
        self.check(h, w)?;
        let (ho, wo) = (self.height, self.width);
        let mut out = Tensor::zeros(vec![n, c, ho, wo]);
        let xs: Vec<_> = (0..wo).map(|o| taps(self.mode, o, w)).collect();
        let src = x.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            for oy in 0..ho {
                let ty = taps(self.mode, oy, h);
                for (ox, tx) in xs.iter().enumerate() {
                    let mut acc = T::zero();
                    for &(iy, wy) in &ty {
                        for &(ix, wx) in tx {
                            acc += T::lit(wy * wx) * src[(p * h + iy) * w + ix];
                        }
                    }
                    dst[(p * ho + oy) * wo + ox] = acc;
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = x[0].dims4().unwrap();
        let (ho, wo) = (self.height, self.width);
        let xs: Vec<_> = (0..wo).map(|o| taps(self.mode, o, w)).collect();
        let mut grad = Tensor::zeros(x[0].shape().to_vec());
        let gd = g.data();
        let dst = grad.data_mut();
        for p in 0..n * c {
            for oy in 0..ho {
                let ty = taps(self.mode, oy, h);
                for (ox, tx) in xs.iter().enumerate() {
                    let go = gd[(p * ho + oy) * wo + ox];
                    for &(iy, wy) in &ty {
                        for &(ix, wx) in tx {
                            dst[(p * h + iy) * w + ix] += T::lit(wy * wx) * go;
                        }
                    }
                }
            }
        }
        vec![Some(grad)]
    }
}
