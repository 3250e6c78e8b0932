//! Fully-connected layer and its per-vertex variant.

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::{Error, Result};
use crate::nn::linalg::{matmul, matmul_a_bt, matmul_at_b_accum};
use crate::real::Real;
use crate::tensor::Tensor;

/// `y = x W + b` on B x D_in inputs. Parameters: `[weights, bias]` with dims
/// [D_in, D_out] and [D_out]. A rank-3 input B x N x D_in is treated as
/// (B*N) x D_in, which makes the same op usable as a per-vertex linear map.
pub struct FullyConnected<T> {
    pub in_features: usize,
    pub out_features: usize,
    saved: Option<Tensor<T>>,
}

impl<T: Real> FullyConnected<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        FullyConnected {
            in_features,
            out_features,
            saved: None,
        }
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![self.in_features, self.out_features]
    }

    pub fn output_dims(&self, input: &[usize]) -> Vec<usize> {
        let mut out = input.to_vec();
        *out.last_mut().unwrap() = self.out_features;
        out
    }

    fn rows(&self, x: &Tensor<T>) -> Result<usize> {
        if *x.dims().last().unwrap() != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "fully_connected expects trailing dim {}, got {:?}",
                self.in_features,
                x.dims()
            )));
        }
        Ok(x.len() / self.in_features)
    }

    fn run(&self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let rows = self.rows(x)?;
        if w.dims() != self.weight_dims().as_slice() || b.dims() != [self.out_features] {
            return Err(Error::ShapeMismatch(format!(
                "fully_connected params must be {:?} and [{}], got {:?} and {:?}",
                self.weight_dims(),
                self.out_features,
                w.dims(),
                b.dims()
            )));
        }
        let mut y = Tensor::<T>::zeros(&self.output_dims(x.dims()));
        matmul(
            x.data(),
            w.data(),
            y.data_mut(),
            rows,
            self.in_features,
            self.out_features,
        );
        for r in 0..rows {
            let row = &mut y.data_mut()[r * self.out_features..(r + 1) * self.out_features];
            for (o, &bias) in row.iter_mut().zip(b.data()) {
                *o = *o + bias;
            }
        }
        Ok(y)
    }
}

impl<T: Real> DiffOp<T> for FullyConnected<T> {
    fn name(&self) -> &str {
        "fully_connected"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let y = self.run(inputs[0], params[0], params[1])?;
        self.saved = Some(inputs[0].clone());
        Ok(vec![y])
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let x = self
            .saved
            .take()
            .ok_or_else(|| missing_forward(self.name()))?;
        let w = params[0];
        let dy = out_grads[0];
        let rows = self.rows(&x)?;
        let mut dw = Tensor::<T>::zeros(&self.weight_dims());
        matmul_at_b_accum(
            x.data(),
            dy.data(),
            dw.data_mut(),
            rows,
            self.in_features,
            self.out_features,
        );
        let mut db = Tensor::<T>::zeros(&[self.out_features]);
        for r in 0..rows {
            let row = &dy.data()[r * self.out_features..(r + 1) * self.out_features];
            for (o, &g) in db.data_mut().iter_mut().zip(row) {
                *o = *o + g;
            }
        }
        let mut dx = Tensor::<T>::zeros(x.dims());
        matmul_a_bt(
            dy.data(),
            w.data(),
            dx.data_mut(),
            rows,
            self.out_features,
            self.in_features,
        );
        Ok((vec![dx], vec![dw, db]))
    }

    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.run(inputs[0], params[0], params[1])?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::op::finite_difference_check;
    use crate::rng::SeededRng;

    #[test]
    fn identity_weights_pass_through() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let b = Tensor::<f64>::zeros(&[3]);
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let op = FullyConnected::new(3, 3);
        let y = op.run(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_give_bias() {
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![7.0, -3.0]).unwrap();
        let op = FullyConnected::new(2, 3);
        let y = op.run(&x, &w, &b).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn gradcheck() {
        let mut rng = SeededRng::new(31);
        let x = Tensor::from_vec(
            &[2, 4],
            (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let w = Tensor::from_vec(
            &[4, 3],
            (0..12).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.05]).unwrap();
        let mut op = FullyConnected::new(4, 3);
        let err =
            finite_difference_check(&mut op, &[x], &[w, b], Mode::Train, 1e-5, &mut rng).unwrap();
        assert!(err <= 1e-7, "rel err {err}");
    }
}
