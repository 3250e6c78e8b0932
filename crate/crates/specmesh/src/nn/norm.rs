//! Batch normalization over the trailing channel dimension.

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::{Error, Result};
use crate::real::{real, Real};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Running statistics keep this fraction of their previous value.
pub const BN_MOMENTUM: f64 = 0.9;

/// Parameters: `[scale, shift]`, each of dims [C]. Running statistics live
/// on the op itself and are checkpointed by the owning model.
pub struct BatchNorm<T> {
    pub channels: usize,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    saved: Option<Saved<T>>,
}

struct Saved<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            saved: None,
        }
    }

    fn check(&self, x: &Tensor<T>, params: &[&Tensor<T>]) -> Result<usize> {
        let c = *x.dims().last().unwrap();
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "batch_norm expects {} channels, got {c}",
                self.channels
            )));
        }
        for p in params {
            if p.dims() != [self.channels] {
                return Err(Error::ShapeMismatch(format!(
                    "batch_norm scale/shift must be [{}], got {:?}",
                    self.channels,
                    p.dims()
                )));
            }
        }
        Ok(x.len() / c)
    }

    fn batch_stats(&self, x: &Tensor<T>, rows: usize) -> (Vec<T>, Vec<T>) {
        let c = self.channels;
        let mut mean = vec![T::zero(); c];
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            for (m, &v) in mean.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        let inv_rows = T::one() / real::<T>(rows as f64);
        for m in &mut mean {
            *m = *m * inv_rows;
        }
        let mut var = vec![T::zero(); c];
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = xv - m;
                *v = *v + d * d;
            }
        }
        for v in &mut var {
            *v = *v * inv_rows;
        }
        (mean, var)
    }
}

impl<T: Real> DiffOp<T> for BatchNorm<T> {
    fn name(&self) -> &str {
        "batch_norm"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let x = inputs[0];
        let rows = self.check(x, params)?;
        let (scale, shift) = (params[0], params[1]);
        let c = self.channels;
        let eps = real::<T>(BN_EPS);
        match mode {
            Mode::Train => {
                let (mean, var) = self.batch_stats(x, rows);
                let inv_std: Vec<T> =
                    var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let mut xhat = Tensor::<T>::zeros(x.dims());
                for r in 0..rows {
                    for k in 0..c {
                        let idx = r * c + k;
                        xhat.data_mut()[idx] = (x.data()[idx] - mean[k]) * inv_std[k];
                    }
                }
                let mut y = Tensor::<T>::zeros(x.dims());
                for r in 0..rows {
                    for k in 0..c {
                        let idx = r * c + k;
                        y.data_mut()[idx] = scale.data()[k] * xhat.data()[idx] + shift.data()[k];
                    }
                }
                let keep = real::<T>(BN_MOMENTUM);
                let take = T::one() - keep;
                for k in 0..c {
                    self.running_mean.data_mut()[k] =
                        keep * self.running_mean.data()[k] + take * mean[k];
                    self.running_var.data_mut()[k] =
                        keep * self.running_var.data()[k] + take * var[k];
                }
                self.saved = Some(Saved { xhat, inv_std });
                Ok(vec![y])
            }
            Mode::Eval => self.infer(inputs, params),
        }
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let Saved { xhat, inv_std } = self
            .saved
            .take()
            .ok_or_else(|| missing_forward(self.name()))?;
        let dy = out_grads[0];
        let scale = params[0];
        let c = self.channels;
        let rows = dy.len() / c;
        let mut dshift = vec![T::zero(); c];
        let mut dscale = vec![T::zero(); c];
        for r in 0..rows {
            for k in 0..c {
                let idx = r * c + k;
                dshift[k] = dshift[k] + dy.data()[idx];
                dscale[k] = dscale[k] + dy.data()[idx] * xhat.data()[idx];
            }
        }
        let inv_rows = T::one() / real::<T>(rows as f64);
        let mut dx = Tensor::<T>::zeros(dy.dims());
        for r in 0..rows {
            for k in 0..c {
                let idx = r * c + k;
                let centered = dy.data()[idx]
                    - dshift[k] * inv_rows
                    - xhat.data()[idx] * dscale[k] * inv_rows;
                dx.data_mut()[idx] = scale.data()[k] * inv_std[k] * centered;
            }
        }
        Ok((
            vec![dx],
            vec![
                Tensor::from_vec(&[c], dscale)?,
                Tensor::from_vec(&[c], dshift)?,
            ],
        ))
    }

    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let x = inputs[0];
        let rows = self.check(x, params)?;
        let (scale, shift) = (params[0], params[1]);
        let c = self.channels;
        let eps = real::<T>(BN_EPS);
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let mut y = Tensor::<T>::zeros(x.dims());
        for r in 0..rows {
            for k in 0..c {
                let idx = r * c + k;
                let xhat = (x.data()[idx] - self.running_mean.data()[k]) * inv_std[k];
                y.data_mut()[idx] = scale.data()[k] * xhat + shift.data()[k];
            }
        }
        Ok(vec![y])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::op::finite_difference_check;
    use crate::rng::SeededRng;

    #[test]
    fn constant_input_train_mode_yields_shift() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = Tensor::filled(&[3, 2], 5.0);
        let scale = Tensor::filled(&[2], 1.5);
        let shift = Tensor::from_vec(&[2], vec![0.25, -0.5]).unwrap();
        let y = bn
            .forward(&[&x], &[&scale, &shift], Mode::Train)
            .unwrap()
            .remove(0);
        for r in 0..3 {
            assert!((y.at2(r, 0) - 0.25).abs() < 1e-12);
            assert!((y.at2(r, 1) + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_input_passes_through() {
        // Zero-mean unit-variance batch with scale 1, shift 0.
        let x = Tensor::from_vec(&[2, 1], vec![1.0, -1.0]).unwrap();
        let mut bn = BatchNorm::<f64>::new(1);
        let scale = Tensor::filled(&[1], 1.0);
        let shift = Tensor::zeros(&[1]);
        let y = bn
            .forward(&[&x], &[&scale, &shift], Mode::Train)
            .unwrap()
            .remove(0);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn train_mode_gradcheck() {
        let mut rng = SeededRng::new(8);
        let mut bn = BatchNorm::<f64>::new(3);
        let x = Tensor::from_vec(
            &[4, 3],
            (0..12).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
        )
        .unwrap();
        let scale = Tensor::from_vec(&[3], vec![1.2, 0.8, -0.5]).unwrap();
        let shift = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let err =
            finite_difference_check(&mut bn, &[x], &[scale, shift], Mode::Train, 1e-5, &mut rng)
                .unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.running_mean.data_mut()[0] = 2.0;
        bn.running_var.data_mut()[0] = 4.0;
        let x = Tensor::from_vec(&[1, 1], vec![4.0]).unwrap();
        let scale = Tensor::filled(&[1], 1.0);
        let shift = Tensor::zeros(&[1]);
        let y = bn
            .forward(&[&x], &[&scale, &shift], Mode::Eval)
            .unwrap()
            .remove(0);
        // (4 - 2) / sqrt(4 + eps) ~ 1.0
        assert!((y.data()[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn running_stats_update_in_train_only() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let scale = Tensor::filled(&[1], 1.0);
        let shift = Tensor::zeros(&[1]);
        bn.forward(&[&x], &[&scale, &shift], Mode::Train).unwrap();
        // mean 2, var 1: running = 0.9*prev + 0.1*batch
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1)).abs() < 1e-12);
        let rm = bn.running_mean.data()[0];
        bn.forward(&[&x], &[&scale, &shift], Mode::Eval).unwrap();
        assert_eq!(bn.running_mean.data()[0], rm);
    }
}
