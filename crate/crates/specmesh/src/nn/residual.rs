//! Residual convolution block: three 3x3 convolutions with an identity
//! shortcut. The stride (when 2) applies in the first convolution and in the
//! 1x1 shortcut projection; the projection also kicks in whenever the
//! channel count changes.
//!
//! Parameter order: `[w1, scale1, shift1, w2, scale2, shift2, w3, scale3,
//! shift3]` plus `[w_shortcut]` when projected.

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::Result;
use crate::nn::act::LeakyRelu;
use crate::nn::conv::{Conv2d, PointwiseConv};
use crate::nn::norm::BatchNorm;
use crate::real::Real;
use crate::tensor::Tensor;

pub struct ResidualBlock<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    conv1: Conv2d<T>,
    bn1: BatchNorm<T>,
    act1: LeakyRelu<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm<T>,
    act2: LeakyRelu<T>,
    conv3: Conv2d<T>,
    bn3: BatchNorm<T>,
    shortcut: Option<PointwiseConv<T>>,
    act_out: LeakyRelu<T>,
    saved: bool,
}

impl<T: Real> ResidualBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let projected = stride != 1 || in_channels != out_channels;
        ResidualBlock {
            in_channels,
            out_channels,
            stride,
            conv1: Conv2d::new(in_channels, out_channels, stride),
            bn1: BatchNorm::new(out_channels),
            act1: LeakyRelu::default(),
            conv2: Conv2d::new(out_channels, out_channels, 1),
            bn2: BatchNorm::new(out_channels),
            act2: LeakyRelu::default(),
            conv3: Conv2d::new(out_channels, out_channels, 1),
            bn3: BatchNorm::new(out_channels),
            shortcut: projected.then(|| PointwiseConv::new(in_channels, out_channels, stride)),
            act_out: LeakyRelu::default(),
            saved: false,
        }
    }

    pub fn has_projection(&self) -> bool {
        self.shortcut.is_some()
    }

    pub fn output_dims(&self, input: &[usize]) -> Vec<usize> {
        self.conv1.output_dims(input)
    }

    /// Visit normalization running statistics for checkpointing.
    pub fn visit_norms(&mut self, f: &mut impl FnMut(&str, &mut BatchNorm<T>)) {
        f("bn1", &mut self.bn1);
        f("bn2", &mut self.bn2);
        f("bn3", &mut self.bn3);
    }

    pub fn param_dims(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.out_channels;
        let mut out = vec![
            ("conv1.w".into(), self.conv1.weight_dims()),
            ("bn1.scale".into(), vec![c]),
            ("bn1.shift".into(), vec![c]),
            ("conv2.w".into(), self.conv2.weight_dims()),
            ("bn2.scale".into(), vec![c]),
            ("bn2.shift".into(), vec![c]),
            ("conv3.w".into(), self.conv3.weight_dims()),
            ("bn3.scale".into(), vec![c]),
            ("bn3.shift".into(), vec![c]),
        ];
        if let Some(sc) = &self.shortcut {
            out.push(("shortcut.w".into(), sc.weight_dims()));
        }
        out
    }
}

impl<T: Real> DiffOp<T> for ResidualBlock<T> {
    fn name(&self) -> &str {
        "residual_block"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let x = inputs[0];
        let h = self.conv1.forward(&[x], &[params[0]], mode)?.remove(0);
        let h = self.bn1.forward(&[&h], &params[1..3], mode)?.remove(0);
        let h = self.act1.forward(&[&h], &[], mode)?.remove(0);
        let h = self.conv2.forward(&[&h], &[params[3]], mode)?.remove(0);
        let h = self.bn2.forward(&[&h], &params[4..6], mode)?.remove(0);
        let h = self.act2.forward(&[&h], &[], mode)?.remove(0);
        let h = self.conv3.forward(&[&h], &[params[6]], mode)?.remove(0);
        let mut h = self.bn3.forward(&[&h], &params[7..9], mode)?.remove(0);
        let identity = match &mut self.shortcut {
            Some(sc) => sc.forward(&[x], &[params[9]], mode)?.remove(0),
            None => x.clone(),
        };
        h.add_assign(&identity)?;
        let y = self.act_out.forward(&[&h], &[], mode)?.remove(0);
        self.saved = true;
        Ok(vec![y])
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        if !self.saved {
            return Err(missing_forward(self.name()));
        }
        self.saved = false;
        let (dsum, _) = self.act_out.backward(out_grads, &[])?;
        let dsum = &dsum[0];
        // Main path.
        let (dh, bn3_g) = self.bn3.backward(&[dsum], &params[7..9])?;
        let (dh, conv3_g) = self.conv3.backward(&[&dh[0]], &[params[6]])?;
        let (dh, _) = self.act2.backward(&[&dh[0]], &[])?;
        let (dh, bn2_g) = self.bn2.backward(&[&dh[0]], &params[4..6])?;
        let (dh, conv2_g) = self.conv2.backward(&[&dh[0]], &[params[3]])?;
        let (dh, _) = self.act1.backward(&[&dh[0]], &[])?;
        let (dh, bn1_g) = self.bn1.backward(&[&dh[0]], &params[1..3])?;
        let (dx_main, conv1_g) = self.conv1.backward(&[&dh[0]], &[params[0]])?;
        let mut dx = dx_main.into_iter().next().unwrap();
        // Shortcut path.
        let mut shortcut_g = Vec::new();
        match &mut self.shortcut {
            Some(sc) => {
                let (dsc, scg) = sc.backward(&[dsum], &[params[9]])?;
                dx.add_assign(&dsc[0])?;
                shortcut_g = scg;
            }
            None => {
                dx.add_assign(dsum)?;
            }
        }
        let mut grads = Vec::with_capacity(10);
        grads.extend(conv1_g);
        grads.extend(bn1_g);
        grads.extend(conv2_g);
        grads.extend(bn2_g);
        grads.extend(conv3_g);
        grads.extend(bn3_g);
        grads.extend(shortcut_g);
        Ok((vec![dx], grads))
    }

    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let x = inputs[0];
        let h = self.conv1.infer(&[x], &[params[0]])?.remove(0);
        let h = self.bn1.infer(&[&h], &params[1..3])?.remove(0);
        let h = self.act1.infer(&[&h], &[])?.remove(0);
        let h = self.conv2.infer(&[&h], &[params[3]])?.remove(0);
        let h = self.bn2.infer(&[&h], &params[4..6])?.remove(0);
        let h = self.act2.infer(&[&h], &[])?.remove(0);
        let h = self.conv3.infer(&[&h], &[params[6]])?.remove(0);
        let mut h = self.bn3.infer(&[&h], &params[7..9])?.remove(0);
        let identity = match &self.shortcut {
            Some(sc) => sc.infer(&[x], &[params[9]])?.remove(0),
            None => x.clone(),
        };
        h.add_assign(&identity)?;
        self.act_out.infer(&[&h], &[])
    }
}
