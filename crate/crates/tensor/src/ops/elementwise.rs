use crate::error::Result;
use crate::graph::Operation;
use crate::real::Real;
use crate::tensor::Tensor;

pub(crate) struct Add;

impl<T: Real> Operation<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].zip_map(inputs[1], |a, b| a + b)
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

pub(crate) struct Sub;

impl<T: Real> Operation<T> for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].zip_map(inputs[1], |a, b| a - b)
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.map(|x| -x))]
    }
}

pub(crate) struct Mul;

impl<T: Real> Operation<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].zip_map(inputs[1], |a, b| a * b)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![
            Some(g.zip_map(x[1], |g, b| g * b).unwrap()),
            Some(g.zip_map(x[0], |g, a| g * a).unwrap()),
        ]
    }
}

/// `a * x + b` with constant `a`, `b`.
pub(crate) struct Affine<T> {
    pub scale: T,
    pub shift: T,
}

impl<T: Real> Operation<T> for Affine<T> {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| self.scale * x + self.shift))
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.map(|x| x * self.scale))]
    }
}

pub(crate) struct LeakyRelu<T> {
    pub slope: T,
}

impl<T: Real> Operation<T> for LeakyRelu<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| if x > T::zero() { x } else { x * self.slope }))
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let slope = self.slope;
        vec![Some(g.zip_map(x[0], |g, x| if x > T::zero() { g } else { g * slope }).unwrap())]
    }
}

pub(crate) struct Sigmoid;

impl<T: Real> Operation<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        }))
    }

    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.zip_map(y, |g, y| g * y * (T::one() - y)).unwrap())]
    }
}

pub(crate) struct Square;

impl<T: Real> Operation<T> for Square {
    fn name(&self) -> &'static str {
        "square"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| x * x))
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let two = T::lit(2.0);
        vec![Some(g.zip_map(x[0], |g, x| two * g * x).unwrap())]
    }
}

pub(crate) struct Sum;

impl<T: Real> Operation<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(inputs[0].sum()))
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(x[0].shape().to_vec(), g.scalar_value()))]
    }
}

pub(crate) struct Mean;

impl<T: Real> Operation<T> for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(inputs[0].mean()))
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let n = T::from_usize(x[0].len()).unwrap();
        vec![Some(Tensor::full(x[0].shape().to_vec(), g.scalar_value() / n))]
    }
}
