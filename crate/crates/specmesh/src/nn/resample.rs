//! Bilinear 2x spatial up-sampling.
//!
//! Half-pixel sample convention (no corner alignment): output pixel `i`
//! reads the input at `(i + 0.5) / 2 - 0.5`, clamped at the edges.

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::{Error, Result};
use crate::real::{real, Real};
use crate::tensor::Tensor;

pub struct BilinearUpsample2x<T> {
    saved: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> Default for BilinearUpsample2x<T> {
    fn default() -> Self {
        BilinearUpsample2x {
            saved: None,
            _marker: std::marker::PhantomData,
        }
    }
}

/// (low index, high index, high weight) for output position `i` over an
/// input extent `n`.
fn taps(i: usize, n: usize) -> (usize, usize, f64) {
    let src = (i as f64 + 0.5) / 2.0 - 0.5;
    let clamped = src.clamp(0.0, (n - 1) as f64);
    let lo = clamped.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, clamped - lo as f64)
}

impl<T: Real> BilinearUpsample2x<T> {
    fn run(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "bilinear upsample expects BxHxWxC, got {:?}",
                x.dims()
            )));
        }
        let (b, h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let mut y = Tensor::<T>::zeros(&[b, 2 * h, 2 * w, c]);
        for bi in 0..b {
            for oi in 0..2 * h {
                let (i0, i1, wi) = taps(oi, h);
                let wi = real::<T>(wi);
                for oj in 0..2 * w {
                    let (j0, j1, wj) = taps(oj, w);
                    let wj = real::<T>(wj);
                    let dst = ((bi * 2 * h + oi) * 2 * w + oj) * c;
                    for k in 0..c {
                        let v00 = x.at4(bi, i0, j0, k);
                        let v01 = x.at4(bi, i0, j1, k);
                        let v10 = x.at4(bi, i1, j0, k);
                        let v11 = x.at4(bi, i1, j1, k);
                        let top = v00 + (v01 - v00) * wj;
                        let bot = v10 + (v11 - v10) * wj;
                        y.data_mut()[dst + k] = top + (bot - top) * wi;
                    }
                }
            }
        }
        Ok(y)
    }
}

impl<T: Real> DiffOp<T> for BilinearUpsample2x<T> {
    fn name(&self) -> &str {
        "bilinear_upsample2x"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _params: &[&Tensor<T>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let y = self.run(inputs[0])?;
        self.saved = Some(inputs[0].dims().to_vec());
        Ok(vec![y])
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        _params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let dims = self
            .saved
            .take()
            .ok_or_else(|| missing_forward(self.name()))?;
        let dy = out_grads[0];
        let (b, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
        let mut dx = Tensor::<T>::zeros(&dims);
        for bi in 0..b {
            for oi in 0..2 * h {
                let (i0, i1, wi) = taps(oi, h);
                for oj in 0..2 * w {
                    let (j0, j1, wj) = taps(oj, w);
                    let src = ((bi * 2 * h + oi) * 2 * w + oj) * c;
                    let w00 = real::<T>((1.0 - wi) * (1.0 - wj));
                    let w01 = real::<T>((1.0 - wi) * wj);
                    let w10 = real::<T>(wi * (1.0 - wj));
                    let w11 = real::<T>(wi * wj);
                    for k in 0..c {
                        let g = dy.data()[src + k];
                        let base = |ii: usize, jj: usize| ((bi * h + ii) * w + jj) * c + k;
                        let d = dx.data_mut();
                        d[base(i0, j0)] = d[base(i0, j0)] + w00 * g;
                        d[base(i0, j1)] = d[base(i0, j1)] + w01 * g;
                        d[base(i1, j0)] = d[base(i1, j0)] + w10 * g;
                        d[base(i1, j1)] = d[base(i1, j1)] + w11 * g;
                    }
                }
            }
        }
        Ok((vec![dx], vec![]))
    }

    fn infer(&self, inputs: &[&Tensor<T>], _params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.run(inputs[0])?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::op::finite_difference_check;
    use crate::rng::SeededRng;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::filled(&[1, 3, 5, 2], 0.625);
        let op = BilinearUpsample2x::default();
        let y = op.run(&x).unwrap();
        assert_eq!(y.dims(), &[1, 6, 10, 2]);
        assert!(y.data().iter().all(|&v| (v - 0.625).abs() < 1e-12));
    }

    #[test]
    fn single_pixel_replicates() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![0.3]).unwrap();
        let op = BilinearUpsample2x::default();
        let y = op.run(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 1]);
        assert!(y.data().iter().all(|&v| (v - 0.3_f64).abs() < 1e-12));
    }

    #[test]
    fn gradcheck() {
        let mut rng = SeededRng::new(20);
        let x = Tensor::from_vec(
            &[1, 3, 4, 2],
            (0..24).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let mut op = BilinearUpsample2x::default();
        let err = finite_difference_check(&mut op, &[x], &[], Mode::Train, 1e-6, &mut rng).unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }
}
