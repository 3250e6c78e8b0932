//! Leaky rectifier activation.

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::Result;
use crate::real::{real, Real};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

/// `y = x` for `x >= 0`, else `slope * x`. No parameters. The derivative at
/// exactly zero uses the positive branch (declared non-smooth point).
pub struct LeakyRelu<T> {
    pub slope: f64,
    saved: Option<Tensor<T>>,
}

impl<T: Real> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        LeakyRelu { slope, saved: None }
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = real::<T>(self.slope);
        x.map(|v| if v >= T::zero() { v } else { s * v })
    }
}

impl<T: Real> Default for LeakyRelu<T> {
    fn default() -> Self {
        Self::new(LEAKY_SLOPE)
    }
}

impl<T: Real> DiffOp<T> for LeakyRelu<T> {
    fn name(&self) -> &str {
        "leaky_relu"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _params: &[&Tensor<T>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let y = self.run(inputs[0]);
        self.saved = Some(inputs[0].clone());
        Ok(vec![y])
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        _params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let x = self
            .saved
            .take()
            .ok_or_else(|| missing_forward(self.name()))?;
        let s = real::<T>(self.slope);
        let dy = out_grads[0];
        let mut dx = Tensor::<T>::zeros(x.dims());
        for ((o, &g), &v) in dx.data_mut().iter_mut().zip(dy.data()).zip(x.data()) {
            *o = if v >= T::zero() { g } else { s * g };
        }
        Ok((vec![dx], vec![]))
    }

    fn infer(&self, inputs: &[&Tensor<T>], _params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.run(inputs[0])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::op::finite_difference_check;
    use crate::rng::SeededRng;

    #[test]
    fn values_match_definition() {
        let op = LeakyRelu::<f64>::new(0.2);
        let x = Tensor::from_vec(&[3], vec![3.0, -2.0, 0.0]).unwrap();
        let y = op.run(&x);
        assert_eq!(y.data(), &[3.0, -0.4, 0.0]);
    }

    #[test]
    fn gradcheck_away_from_kink() {
        let mut rng = SeededRng::new(12);
        // Keep samples at least 0.05 from zero: the kink is declared.
        let data: Vec<f64> = (0..24)
            .map(|_| {
                let v = rng.uniform_in(0.05, 2.0);
                if rng.uniform() < 0.5 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = Tensor::from_vec(&[4, 6], data).unwrap();
        let mut op = LeakyRelu::<f64>::default();
        let err = finite_difference_check(&mut op, &[x], &[], Mode::Train, 1e-6, &mut rng).unwrap();
        assert!(err <= 1e-7, "rel err {err}");
    }
}
