//! 2D convolution over B x H x W x C feature maps.
//!
//! Kernels are fixed at 3x3 with zero "same" padding; stride 1 preserves the
//! spatial size, stride 2 halves it (ceil). Implemented as im2col plus one
//! large matrix multiply. The 1x1 strided projection used by shortcut paths
//! and grid down-transitions lives here too.

use rayon::prelude::*;

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::{Error, Result};
use crate::nn::linalg::{matmul, matmul_a_bt, matmul_at_b_accum};
use crate::real::Real;
use crate::tensor::Tensor;

/// 3x3 convolution. Parameters: `[weights]` with dims [3, 3, C_in, C_out].
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    saved: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        assert!(stride == 1 || stride == 2, "stride must be 1 or 2");
        Conv2d {
            in_channels,
            out_channels,
            stride,
            saved: None,
        }
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![3, 3, self.in_channels, self.out_channels]
    }

    pub fn output_dims(&self, input: &[usize]) -> Vec<usize> {
        vec![
            input[0],
            input[1].div_ceil(self.stride),
            input[2].div_ceil(self.stride),
            self.out_channels,
        ]
    }

    fn check(&self, x: &Tensor<T>, w: &Tensor<T>) -> Result<()> {
        if x.rank() != 4 || x.dims()[3] != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects BxHxWx{}, got {:?}",
                self.in_channels,
                x.dims()
            )));
        }
        if w.dims() != self.weight_dims().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "conv2d weights must be {:?}, got {:?}",
                self.weight_dims(),
                w.dims()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x, w)?;
        let cols = im2col(x, self.stride);
        let out_dims = self.output_dims(x.dims());
        let rows = out_dims[0] * out_dims[1] * out_dims[2];
        let patch = 9 * self.in_channels;
        let mut y = Tensor::<T>::zeros(&out_dims);
        matmul(
            &cols,
            w.data(),
            y.data_mut(),
            rows,
            patch,
            self.out_channels,
        );
        Ok(y)
    }
}

impl<T: Real> DiffOp<T> for Conv2d<T> {
    fn name(&self) -> &str {
        "conv2d"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let y = self.run(inputs[0], params[0])?;
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
        let out_dims = self.output_dims(x.dims());
        if dy.dims() != out_dims.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "conv2d backward expects {:?}, got {:?}",
                out_dims,
                dy.dims()
            )));
        }
        let rows = out_dims[0] * out_dims[1] * out_dims[2];
        let patch = 9 * self.in_channels;
        let cols = im2col(&x, self.stride);
        let mut dw = Tensor::<T>::zeros(&self.weight_dims());
        matmul_at_b_accum(
            &cols,
            dy.data(),
            dw.data_mut(),
            rows,
            patch,
            self.out_channels,
        );
        let mut dcols = vec![T::zero(); rows * patch];
        matmul_a_bt(
            dy.data(),
            w.data(),
            &mut dcols,
            rows,
            self.out_channels,
            patch,
        );
        let dx = col2im(&dcols, x.dims(), self.stride);
        Ok((vec![dx], vec![dw]))
    }

    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.run(inputs[0], params[0])?])
    }
}

/// Zero-padded 3x3 patch extraction; rows ordered (b, out_row, out_col) and
/// columns ordered (di, dj, c_in) to match the weight layout.
fn im2col<T: Real>(x: &Tensor<T>, stride: usize) -> Vec<T> {
    let (b, h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let patch = 9 * c;
    let mut cols = vec![T::zero(); b * ho * wo * patch];
    let data = x.data();
    let row_len = wo * patch;
    let fill = |(chunk, out_row): (usize, &mut [T])| {
        let bi = chunk / ho;
        let oi = chunk % ho;
        let ii = (oi * stride) as isize - 1;
        for oj in 0..wo {
            let jj = (oj * stride) as isize - 1;
            let dst = &mut out_row[oj * patch..(oj + 1) * patch];
            for di in 0..3 {
                let src_i = ii + di as isize;
                if src_i < 0 || src_i >= h as isize {
                    continue;
                }
                for dj in 0..3 {
                    let src_j = jj + dj as isize;
                    if src_j < 0 || src_j >= w as isize {
                        continue;
                    }
                    let src = ((bi * h + src_i as usize) * w + src_j as usize) * c;
                    let d = (di * 3 + dj) * c;
                    dst[d..d + c].copy_from_slice(&data[src..src + c]);
                }
            }
        }
    };
    if b * ho * wo * patch < 1 << 15 {
        cols.chunks_mut(row_len).enumerate().for_each(fill);
    } else {
        cols.par_chunks_mut(row_len).enumerate().for_each(fill);
    }
    cols
}

/// Scatter-add of patch-column gradients back onto the input layout.
/// Parallel only across samples; patches within one sample overlap.
fn col2im<T: Real>(dcols: &[T], dims: &[usize], stride: usize) -> Tensor<T> {
    let (h, w, c) = (dims[1], dims[2], dims[3]);
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let patch = 9 * c;
    let mut dx = Tensor::<T>::zeros(dims);
    let sample_len = h * w * c;
    dx.data_mut()
        .par_chunks_mut(sample_len)
        .enumerate()
        .for_each(|(bi, out)| {
            for oi in 0..ho {
                let ii = (oi * stride) as isize - 1;
                for oj in 0..wo {
                    let jj = (oj * stride) as isize - 1;
                    let src_base = ((bi * ho + oi) * wo + oj) * patch;
                    for di in 0..3 {
                        let dst_i = ii + di as isize;
                        if dst_i < 0 || dst_i >= h as isize {
                            continue;
                        }
                        for dj in 0..3 {
                            let dst_j = jj + dj as isize;
                            if dst_j < 0 || dst_j >= w as isize {
                                continue;
                            }
                            let dst = (dst_i as usize * w + dst_j as usize) * c;
                            let src = src_base + (di * 3 + dj) * c;
                            for k in 0..c {
                                out[dst + k] = out[dst + k] + dcols[src + k];
                            }
                        }
                    }
                }
            }
        });
    dx
}

/// 1x1 strided projection. Parameters: `[weights]` with dims [C_in, C_out].
pub struct PointwiseConv<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    saved: Option<Tensor<T>>,
}

impl<T: Real> PointwiseConv<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        assert!(stride == 1 || stride == 2);
        PointwiseConv {
            in_channels,
            out_channels,
            stride,
            saved: None,
        }
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![self.in_channels, self.out_channels]
    }

    pub fn output_dims(&self, input: &[usize]) -> Vec<usize> {
        vec![
            input[0],
            input[1].div_ceil(self.stride),
            input[2].div_ceil(self.stride),
            self.out_channels,
        ]
    }

    /// Subsampled input rows as a (B*Ho*Wo) x C_in matrix.
    fn gather(&self, x: &Tensor<T>) -> (Vec<T>, usize) {
        let (b, h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let ho = h.div_ceil(self.stride);
        let wo = w.div_ceil(self.stride);
        let rows = b * ho * wo;
        let mut g = vec![T::zero(); rows * c];
        let data = x.data();
        for bi in 0..b {
            for oi in 0..ho {
                for oj in 0..wo {
                    let src = ((bi * h + oi * self.stride) * w + oj * self.stride) * c;
                    let dst = ((bi * ho + oi) * wo + oj) * c;
                    g[dst..dst + c].copy_from_slice(&data[src..src + c]);
                }
            }
        }
        (g, rows)
    }

    fn run(&self, x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dims()[3] != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "pointwise conv expects BxHxWx{}, got {:?}",
                self.in_channels,
                x.dims()
            )));
        }
        if w.dims() != self.weight_dims().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "pointwise weights must be {:?}, got {:?}",
                self.weight_dims(),
                w.dims()
            )));
        }
        let (g, rows) = self.gather(x);
        let mut y = Tensor::<T>::zeros(&self.output_dims(x.dims()));
        matmul(
            &g,
            w.data(),
            y.data_mut(),
            rows,
            self.in_channels,
            self.out_channels,
        );
        Ok(y)
    }
}

impl<T: Real> DiffOp<T> for PointwiseConv<T> {
    fn name(&self) -> &str {
        "pointwise_conv"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let y = self.run(inputs[0], params[0])?;
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
        let (g, rows) = self.gather(&x);
        let mut dw = Tensor::<T>::zeros(&self.weight_dims());
        matmul_at_b_accum(
            &g,
            dy.data(),
            dw.data_mut(),
            rows,
            self.in_channels,
            self.out_channels,
        );
        let mut drows = vec![T::zero(); rows * self.in_channels];
        matmul_a_bt(
            dy.data(),
            w.data(),
            &mut drows,
            rows,
            self.out_channels,
            self.in_channels,
        );
        // Scatter rows back to strided positions.
        let (b, h, wd, c) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let ho = h.div_ceil(self.stride);
        let wo = wd.div_ceil(self.stride);
        let mut dx = Tensor::<T>::zeros(x.dims());
        let out = dx.data_mut();
        for bi in 0..b {
            for oi in 0..ho {
                for oj in 0..wo {
                    let dst = ((bi * h + oi * self.stride) * wd + oj * self.stride) * c;
                    let src = ((bi * ho + oi) * wo + oj) * c;
                    for k in 0..c {
                        out[dst + k] = drows[src + k];
                    }
                }
            }
        }
        Ok((vec![dx], vec![dw]))
    }

    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.run(inputs[0], params[0])?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::op::finite_difference_check;
    use crate::rng::SeededRng;

    fn random_tensor(dims: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
        let data = (0..dims.iter().product::<usize>())
            .map(|_| rng.uniform_in(-1.0, 1.0))
            .collect();
        Tensor::from_vec(dims, data).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut w = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
        // center tap (di=1, dj=1)
        w.data_mut()[(1 * 3 + 1) * 1] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![0.7]).unwrap();
        let op = Conv2d::new(1, 1, 1);
        let y = op.run(&x, &w).unwrap();
        assert_eq!(y.data(), &[0.7]);

        let x = random_tensor(&[1, 4, 5, 1], &mut SeededRng::new(2));
        let y = op.run(&x, &w).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn stride_two_halves_spatial_size() {
        let op = Conv2d::<f64>::new(2, 3, 2);
        assert_eq!(op.output_dims(&[1, 4, 4, 2]), vec![1, 2, 2, 3]);
        assert_eq!(op.output_dims(&[2, 5, 7, 2]), vec![2, 3, 4, 3]);
        let mut rng = SeededRng::new(3);
        let x = random_tensor(&[1, 4, 4, 2], &mut rng);
        let w = random_tensor(&[3, 3, 2, 3], &mut rng);
        let y = op.run(&x, &w).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 3]);
        // Spot-check one output against the definition.
        let mut want = 0.0;
        for di in 0..3usize {
            for dj in 0..3usize {
                let (si, sj) = (2 + di as isize - 1, 2 + dj as isize - 1);
                if si < 0 || sj < 0 || si >= 4 || sj >= 4 {
                    continue;
                }
                for ci in 0..2 {
                    want += x.at4(0, si as usize, sj as usize, ci) * w.at4(di, dj, ci, 1);
                }
            }
        }
        assert!((y.at4(0, 1, 1, 1) - want).abs() < 1e-12);
    }

    #[test]
    fn conv_gradcheck() {
        let mut rng = SeededRng::new(4);
        for stride in [1usize, 2] {
            let mut op = Conv2d::new(2, 3, stride);
            let x = random_tensor(&[1, 5, 5, 2], &mut rng);
            let w = random_tensor(&[3, 3, 2, 3], &mut rng);
            let err = finite_difference_check(&mut op, &[x], &[w], Mode::Train, 1e-5, &mut rng)
                .unwrap();
            assert!(err <= 1e-5, "stride {stride} rel err {err}");
        }
    }

    #[test]
    fn pointwise_gradcheck_and_shapes() {
        let mut rng = SeededRng::new(5);
        for stride in [1usize, 2] {
            let mut op = PointwiseConv::new(3, 2, stride);
            let x = random_tensor(&[2, 4, 4, 3], &mut rng);
            let w = random_tensor(&[3, 2], &mut rng);
            let err = finite_difference_check(&mut op, &[x], &[w], Mode::Train, 1e-5, &mut rng)
                .unwrap();
            assert!(err <= 1e-6, "stride {stride} rel err {err}");
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let op = Conv2d::<f64>::new(2, 3, 1);
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 5]);
        let w = Tensor::<f64>::zeros(&[3, 3, 2, 3]);
        assert!(op.run(&x, &w).is_err());
    }
}
