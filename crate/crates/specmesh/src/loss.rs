//! Training losses and alignment metrics.
//!
//! The primary loss is exponential inside a band of width `w` and linear
//! outside it, joined continuously: `L(x) = w (e^{|x|/eps} - 1)` for
//! `|x| < w`, else `|x| - c` with `c = w - w (e^{w/eps} - 1)`. Values are
//! mean-reduced over all elements. Alternatives (L1, L2, smooth-L1) cover
//! the loss-comparison study.

use serde::{Deserialize, Serialize};

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::{Error, Result};
use crate::real::{real, to_f64, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ExpLinear,
    L1,
    L2,
    SmoothL1,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Smooth-L1 transition point.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_w() -> f64 {
    5.0
}
fn default_epsilon() -> f64 {
    4.0
}
fn default_beta() -> f64 {
    1.0
}

impl LossSpec {
    pub fn exp_linear(w: f64, epsilon: f64) -> Result<Self> {
        let spec = LossSpec {
            kind: LossKind::ExpLinear,
            w,
            epsilon,
            beta: default_beta(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, LossKind::ExpLinear) {
            if self.w <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "loss width w must be positive, got {}",
                    self.w
                )));
            }
            if self.epsilon <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "loss curvature epsilon must be positive, got {}",
                    self.epsilon
                )));
            }
        }
        if matches!(self.kind, LossKind::SmoothL1) && self.beta <= 0.0 {
            return Err(Error::InvalidArgument("smooth-l1 beta must be positive".into()));
        }
        Ok(())
    }

    /// Linear-branch offset `c = w - w (e^{w/eps} - 1)`.
    pub fn linear_offset(&self) -> f64 {
        self.w - self.w * ((self.w / self.epsilon).exp() - 1.0)
    }

    fn value_at(&self, x: f64) -> f64 {
        let a = x.abs();
        match self.kind {
            LossKind::ExpLinear => {
                if a < self.w {
                    self.w * ((a / self.epsilon).exp() - 1.0)
                } else {
                    a - self.linear_offset()
                }
            }
            LossKind::L1 => a,
            LossKind::L2 => x * x,
            LossKind::SmoothL1 => {
                if a < self.beta {
                    0.5 * x * x / self.beta
                } else {
                    a - 0.5 * self.beta
                }
            }
        }
    }

    /// Derivative before mean reduction. At `|x| = w` exactly the inner
    /// branch applies (declared convention at the kink); sign(0) = 0.
    fn slope_at(&self, x: f64) -> f64 {
        let s = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        let a = x.abs();
        match self.kind {
            LossKind::ExpLinear => {
                if a <= self.w {
                    s * (self.w / self.epsilon) * (a / self.epsilon).exp()
                } else {
                    s
                }
            }
            LossKind::L1 => s,
            LossKind::L2 => 2.0 * x,
            LossKind::SmoothL1 => {
                if a < self.beta {
                    x / self.beta
                } else {
                    s
                }
            }
        }
    }
}

/// Mean elementwise loss of a signed error tensor.
pub fn loss_value<T: Real>(errors: &Tensor<T>, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    let n = errors.len() as f64;
    let sum: f64 = errors
        .data()
        .iter()
        .map(|&x| spec.value_at(to_f64(x)))
        .sum();
    Ok(sum / n)
}

/// Gradient of [`loss_value`] with respect to the error tensor.
pub fn loss_gradient<T: Real>(errors: &Tensor<T>, spec: &LossSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let n = errors.len() as f64;
    let data = errors
        .data()
        .iter()
        .map(|&x| real::<T>(spec.slope_at(to_f64(x)) / n))
        .collect();
    Tensor::from_vec(errors.dims(), data)
}

/// Loss as a differentiable op (input: signed errors, output: scalar), for
/// the gradient-check registry.
pub struct LossOp<T> {
    pub spec: LossSpec,
    saved: Option<Tensor<T>>,
}

impl<T: Real> LossOp<T> {
    pub fn new(spec: LossSpec) -> Self {
        LossOp { spec, saved: None }
    }
}

impl<T: Real> DiffOp<T> for LossOp<T> {
    fn name(&self) -> &str {
        match self.spec.kind {
            LossKind::ExpLinear => "loss_exp_linear",
            LossKind::L1 => "loss_l1",
            LossKind::L2 => "loss_l2",
            LossKind::SmoothL1 => "loss_smooth_l1",
        }
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _params: &[&Tensor<T>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let v = loss_value(inputs[0], &self.spec)?;
        self.saved = Some(inputs[0].clone());
        Ok(vec![Tensor::scalar(real::<T>(v))])
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
        let scale = out_grads[0].data()[0];
        let mut dx = loss_gradient(&x, &self.spec)?;
        dx.scale(scale);
        Ok((vec![dx], vec![]))
    }

    fn infer(&self, inputs: &[&Tensor<T>], _params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![Tensor::scalar(real::<T>(loss_value(
            inputs[0], &self.spec,
        )?))])
    }
}

/// Mean landmark distance normalized by the ground-truth bounding-box size
/// `sqrt(width * height)`, where the box is the x/y hull of the ground-truth
/// landmarks regardless of whether distances are 2D or 3D.
pub fn nme(pred: &Tensor<f64>, gt: &Tensor<f64>, dims_used: usize) -> Result<f64> {
    if !(dims_used == 2 || dims_used == 3) {
        return Err(Error::InvalidArgument("nme mode must be 2 or 3 dims".into()));
    }
    if pred.rank() != 2 || gt.rank() != 2 || pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "nme expects matching Kxd tensors, got {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let k = gt.dims()[0];
    let d = gt.dims()[1];
    if k < 2 || d < dims_used {
        return Err(Error::InvalidArgument(
            "nme needs at least 2 landmarks with enough coordinates".into(),
        ));
    }
    let size = hull_size(gt)?;
    let mut total = 0.0;
    for i in 0..k {
        let mut d2 = 0.0;
        for c in 0..dims_used {
            let diff = pred.at2(i, c) - gt.at2(i, c);
            d2 += diff * diff;
        }
        total += d2.sqrt();
    }
    Ok(total / k as f64 / size)
}

/// `sqrt(width * height)` of the x/y hull.
pub fn hull_size(gt: &Tensor<f64>) -> Result<f64> {
    let k = gt.dims()[0];
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..k {
        xmin = xmin.min(gt.at2(i, 0));
        xmax = xmax.max(gt.at2(i, 0));
        ymin = ymin.min(gt.at2(i, 1));
        ymax = ymax.max(gt.at2(i, 1));
    }
    let area = (xmax - xmin) * (ymax - ymin);
    if area <= 0.0 {
        return Err(Error::InvalidArgument(
            "landmark hull has zero area".into(),
        ));
    }
    Ok(area.sqrt())
}

/// Fraction of errors at or below each threshold. Thresholds must be sorted
/// ascending.
pub fn ced_curve(errors: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    debug_assert!(thresholds.windows(2).all(|w| w[0] <= w[1]));
    let n = errors.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&t| {
            let hits = errors.iter().filter(|&&e| e <= t).count();
            (t, hits as f64 / n)
        })
        .collect()
}

pub const YAW_BIN_EDGES: [(f64, f64); 3] = [(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)];

/// Mean error per absolute-yaw bin [0, 30), [30, 60), [60, 90]. Empty bins
/// are reported as `None`.
pub fn yaw_binned_means(errors: &[f64], yaws: &[f64]) -> Result<[Option<f64>; 3]> {
    if errors.len() != yaws.len() {
        return Err(Error::ShapeMismatch(
            "errors and yaw lists must have equal length".into(),
        ));
    }
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (&e, &y) in errors.iter().zip(yaws) {
        let a = y.abs();
        if a > 90.0 {
            return Err(Error::InvalidArgument(format!(
                "yaw {y} outside [-90, 90]"
            )));
        }
        let bin = if a < 30.0 {
            0
        } else if a < 60.0 {
            1
        } else {
            2
        };
        sums[bin] += e;
        counts[bin] += 1;
    }
    let mut out = [None; 3];
    for i in 0..3 {
        if counts[i] > 0 {
            out[i] = Some(sums[i] / counts[i] as f64);
        }
    }
    Ok(out)
}

/// Per-sample errors plus derived summaries, ready for CSV export.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    /// (sample id, error, optional yaw degrees)
    pub samples: Vec<(String, f64, Option<f64>)>,
    pub mean: f64,
    pub ced: Vec<(f64, f64)>,
    pub yaw_bins: [Option<f64>; 3],
}

impl EvalReport {
    pub fn from_samples(
        samples: Vec<(String, f64, Option<f64>)>,
        thresholds: &[f64],
    ) -> Result<Self> {
        let errors: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
        let ced = ced_curve(&errors, thresholds);
        let with_yaw: Vec<(f64, f64)> = samples
            .iter()
            .filter_map(|s| s.2.map(|y| (s.1, y)))
            .collect();
        let yaw_bins = if with_yaw.is_empty() {
            [None; 3]
        } else {
            let (e, y): (Vec<f64>, Vec<f64>) = with_yaw.into_iter().unzip();
            yaw_binned_means(&e, &y)?
        };
        Ok(EvalReport {
            samples,
            mean,
            ced,
            yaw_bins,
        })
    }

    pub fn nme_csv(&self) -> String {
        let mut out = String::from("sample_id,nme,yaw\n");
        for (id, e, yaw) in &self.samples {
            match yaw {
                Some(y) => out.push_str(&format!("{id},{e},{y}\n")),
                None => out.push_str(&format!("{id},{e},\n")),
            }
        }
        out
    }

    pub fn ced_csv(&self) -> String {
        let mut out = String::from("threshold,fraction\n");
        for (t, f) in &self.ced {
            out.push_str(&format!("{t},{f}\n"));
        }
        out
    }
}
