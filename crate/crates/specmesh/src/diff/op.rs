//! The differentiable-operation contract and the finite-difference
//! verification harness every operation must pass.

use crate::error::{Error, Result};
use crate::real::{real, to_f64, Real};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Forward-pass mode; only batch normalization behaves differently.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A layer with an explicit reverse pass.
///
/// `forward` saves whatever activations `backward` needs; `backward`
/// consumes them and fails if no matching forward happened. Parameter order
/// within `params` is fixed per operation and documented on the type.
pub trait DiffOp<T: Real> {
    fn name(&self) -> &str;

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<Vec<Tensor<T>>>;

    /// Returns (input gradients, parameter gradients). `params` must be the
    /// same tensors passed to the matching `forward`.
    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)>;

    /// Side-effect-free forward for concurrent evaluation.
    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>>;
}

pub fn missing_forward(name: &str) -> Error {
    Error::InvalidArgument(format!(
        "backward called on {name:?} without a matching forward"
    ))
}

/// Maximum relative error between analytic and central-difference gradients
/// of `sum_o <r_o, f_o(x)>` for a random projection `r`, taken over every
/// coordinate of every input and parameter.
///
/// The relative error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<T: Real>(
    op: &mut dyn DiffOp<T>,
    inputs: &[Tensor<T>],
    params: &[Tensor<T>],
    mode: Mode,
    eps: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let input_refs: Vec<&Tensor<T>> = inputs.iter().collect();
    let param_refs: Vec<&Tensor<T>> = params.iter().collect();
    let outputs = op.forward(&input_refs, &param_refs, mode)?;
    for (i, o) in outputs.iter().enumerate() {
        o.assert_finite(&format!("{} output {i}", op.name()))?;
    }
    // Projection weights keep |r| in [0.25, 1] so coordinates with small
    // weights do not drown true gradients in floating-point noise.
    let projection: Vec<Tensor<T>> = outputs
        .iter()
        .map(|o| {
            let data = (0..o.len())
                .map(|_| {
                    let m = rng.uniform_in(0.25, 1.0);
                    real::<T>(if rng.uniform() < 0.5 { m } else { -m })
                })
                .collect();
            Tensor::from_vec(o.dims(), data).unwrap()
        })
        .collect();
    let proj_refs: Vec<&Tensor<T>> = projection.iter().collect();
    let (input_grads, param_grads) = op.backward(&proj_refs, &param_refs)?;

    let objective = |op: &mut dyn DiffOp<T>, inputs: &[Tensor<T>], params: &[Tensor<T>]| {
        let ir: Vec<&Tensor<T>> = inputs.iter().collect();
        let pr: Vec<&Tensor<T>> = params.iter().collect();
        let outs = op.forward(&ir, &pr, mode)?;
        let mut acc = 0.0;
        for (o, r) in outs.iter().zip(&projection) {
            for (a, b) in o.data().iter().zip(r.data()) {
                acc += to_f64(*a) * to_f64(*b);
            }
        }
        Ok::<f64, Error>(acc)
    };

    let mut max_rel = 0.0f64;
    let mut work_inputs = inputs.to_vec();
    let mut work_params = params.to_vec();
    for (ti, analytic) in input_grads.iter().enumerate() {
        for ci in 0..inputs[ti].len() {
            let orig = work_inputs[ti].data()[ci];
            work_inputs[ti].data_mut()[ci] = orig + real::<T>(eps);
            let plus = objective(op, &work_inputs, &work_params)?;
            work_inputs[ti].data_mut()[ci] = orig - real::<T>(eps);
            let minus = objective(op, &work_inputs, &work_params)?;
            work_inputs[ti].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = to_f64(analytic.data()[ci]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    for (ti, analytic) in param_grads.iter().enumerate() {
        for ci in 0..params[ti].len() {
            let orig = work_params[ti].data()[ci];
            work_params[ti].data_mut()[ci] = orig + real::<T>(eps);
            let plus = objective(op, &work_inputs, &work_params)?;
            work_params[ti].data_mut()[ci] = orig - real::<T>(eps);
            let minus = objective(op, &work_inputs, &work_params)?;
            work_params[ti].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = to_f64(analytic.data()[ci]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = W x + b as a minimal op for exercising the harness.
    struct Affine {
        saved: Option<(Tensor<f64>, Tensor<f64>)>,
    }

    impl DiffOp<f64> for Affine {
        fn name(&self) -> &str {
            "affine"
        }

        fn forward(
            &mut self,
            inputs: &[&Tensor<f64>],
            params: &[&Tensor<f64>],
            _mode: Mode,
        ) -> Result<Vec<Tensor<f64>>> {
            let x = inputs[0];
            let w = params[0];
            let b = params[1];
            let (m, n) = (w.dims()[0], w.dims()[1]);
            let mut y = Tensor::<f64>::zeros(&[m]);
            for i in 0..m {
                let mut acc = b.data()[i];
                for j in 0..n {
                    acc += w.at2(i, j) * x.data()[j];
                }
                y.data_mut()[i] = acc;
            }
            self.saved = Some((x.clone(), w.clone()));
            Ok(vec![y])
        }

        fn backward(
            &mut self,
            out_grads: &[&Tensor<f64>],
            _params: &[&Tensor<f64>],
        ) -> Result<(Vec<Tensor<f64>>, Vec<Tensor<f64>>)> {
            let (x, w) = self.saved.take().ok_or_else(|| missing_forward("affine"))?;
            let dy = out_grads[0];
            let (m, n) = (w.dims()[0], w.dims()[1]);
            let mut dx = Tensor::<f64>::zeros(&[n]);
            let mut dw = Tensor::<f64>::zeros(&[m, n]);
            for i in 0..m {
                for j in 0..n {
                    dx.data_mut()[j] += w.at2(i, j) * dy.data()[i];
                    dw.data_mut()[i * n + j] = x.data()[j] * dy.data()[i];
                }
            }
            let db = dy.clone();
            Ok((vec![dx], vec![dw, db]))
        }

        fn infer(&self, _inputs: &[&Tensor<f64>], _params: &[&Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
            unreachable!("test-only op")
        }
    }

    #[test]
    fn affine_gradcheck_tight() {
        let mut rng = SeededRng::new(71);
        let x = Tensor::from_vec(&[3], vec![0.3, -0.7, 1.2]).unwrap();
        let w = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 0.25, 2.0, 0.1, -0.4]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.05, -0.3]).unwrap();
        let mut op = Affine { saved: None };
        let err =
            finite_difference_check(&mut op, &[x], &[w, b], Mode::Train, 1e-5, &mut rng).unwrap();
        assert!(err <= 1e-7, "relative error {err}");
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut op = Affine { saved: None };
        let g = Tensor::<f64>::zeros(&[2]);
        assert!(op.backward(&[&g], &[]).is_err());
    }
}
