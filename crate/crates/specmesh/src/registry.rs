//! Gradient-check registry: every differentiable operation with a canonical
//! double-precision test instance, plus the end-to-end micro model. Drives
//! both the verification command and the acceptance gate.

use std::sync::Arc;

use crate::diff::op::{finite_difference_check, DiffOp, Mode};
use crate::error::Result;
use crate::graph::{build_laplacian, rescale_laplacian, SparseMatrix};
use crate::loss::{LossKind, LossOp, LossSpec};
use crate::net::{build_model, AggregationMode, Model, NetConfig};
use crate::nn::{
    BatchNorm, BilinearUpsample2x, ChebConv, Conv2d, CsrCache, DenseGcnBlock, FullyConnected,
    GraphUpsample, LeakyRelu,
};
use crate::real::Precision;
use crate::rng::SeededRng;
use crate::sampling::build_hierarchy;
use crate::synth::shapes::sphere_mesh;
use crate::tensor::Tensor;

/// Relative-error gate every registered op must pass.
pub const GRAD_GATE: f64 = 1e-4;

pub struct GradCheckCase {
    pub name: &'static str,
    pub op: Box<dyn DiffOp<f64>>,
    pub inputs: Vec<Tensor<f64>>,
    pub params: Vec<Tensor<f64>>,
    pub mode: Mode,
    pub eps: f64,
    /// Case-specific tolerance; never looser than [`GRAD_GATE`].
    pub tol: f64,
}

pub struct GradCheckOutcome {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

fn random_tensor(dims: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor<f64> {
    let data = (0..dims.iter().product::<usize>())
        .map(|_| rng.uniform_in(lo, hi))
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

/// Random connected graph with a guaranteed spanning path.
fn random_graph(n: usize, rng: &mut SeededRng) -> SparseMatrix {
    let mut entries = Vec::new();
    for i in 0..n as u32 - 1 {
        entries.push((i, i + 1, 1.0));
        entries.push((i + 1, i, 1.0));
    }
    for _ in 0..n {
        let a = rng.below(n) as u32;
        let b = rng.below(n) as u32;
        if a != b {
            entries.push((a, b, 1.0));
            entries.push((b, a, 1.0));
        }
    }
    entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
    entries.dedup_by_key(|&mut (r, c, _)| (r, c));
    SparseMatrix::from_triplets(n, n, entries).unwrap()
}

fn laplacian_cache(adj: &SparseMatrix) -> Arc<CsrCache<f64>> {
    let lap = build_laplacian(adj).unwrap();
    Arc::new(CsrCache::from_sparse(&rescale_laplacian(&lap).unwrap()))
}

/// Inputs away from the rectifier kink (declared non-smooth point at 0).
fn kink_free(dims: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let data = (0..dims.iter().product::<usize>())
        .map(|_| {
            let v = rng.uniform_in(0.05, 1.5);
            if rng.uniform() < 0.5 {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

/// All registered op cases, deterministic given the fixed seeds.
pub fn registry() -> Vec<GradCheckCase> {
    let mut cases = Vec::new();
    {
        let mut rng = SeededRng::new(101);
        cases.push(GradCheckCase {
            name: "conv2d",
            op: Box::new(Conv2d::new(2, 3, 1)),
            inputs: vec![random_tensor(&[1, 5, 5, 2], -1.0, 1.0, &mut rng)],
            params: vec![random_tensor(&[3, 3, 2, 3], -1.0, 1.0, &mut rng)],
            mode: Mode::Train,
            eps: 1e-5,
            tol: 1e-5,
        });
    }
    {
        let mut rng = SeededRng::new(102);
        cases.push(GradCheckCase {
            name: "conv2d_stride2",
            op: Box::new(Conv2d::new(2, 3, 2)),
            inputs: vec![random_tensor(&[1, 6, 6, 2], -1.0, 1.0, &mut rng)],
            params: vec![random_tensor(&[3, 3, 2, 3], -1.0, 1.0, &mut rng)],
            mode: Mode::Train,
            eps: 1e-5,
            tol: 1e-5,
        });
    }
    {
        let mut rng = SeededRng::new(103);
        cases.push(GradCheckCase {
            name: "batch_norm",
            op: Box::new(BatchNorm::new(3)),
            inputs: vec![random_tensor(&[4, 3], -2.0, 2.0, &mut rng)],
            params: vec![
                random_tensor(&[3], 0.5, 1.5, &mut rng),
                random_tensor(&[3], -0.3, 0.3, &mut rng),
            ],
            mode: Mode::Train,
            eps: 1e-5,
            tol: GRAD_GATE,
        });
    }
    {
        let mut rng = SeededRng::new(104);
        cases.push(GradCheckCase {
            name: "leaky_relu",
            op: Box::new(LeakyRelu::default()),
            inputs: vec![kink_free(&[4, 6], &mut rng)],
            params: vec![],
            mode: Mode::Train,
            eps: 1e-6,
            tol: 1e-7,
        });
    }
    {
        let mut rng = SeededRng::new(105);
        cases.push(GradCheckCase {
            name: "bilinear_upsample2x",
            op: Box::new(BilinearUpsample2x::default()),
            inputs: vec![random_tensor(&[1, 3, 4, 2], -1.0, 1.0, &mut rng)],
            params: vec![],
            mode: Mode::Train,
            eps: 1e-6,
            tol: 1e-6,
        });
    }
    {
        let mut rng = SeededRng::new(106);
        cases.push(GradCheckCase {
            name: "fully_connected",
            op: Box::new(FullyConnected::new(4, 3)),
            inputs: vec![random_tensor(&[2, 4], -1.0, 1.0, &mut rng)],
            params: vec![
                random_tensor(&[4, 3], -1.0, 1.0, &mut rng),
                random_tensor(&[3], -0.2, 0.2, &mut rng),
            ],
            mode: Mode::Train,
            eps: 1e-5,
            tol: 1e-7,
        });
    }
    {
        let mut rng = SeededRng::new(107);
        let adj = random_graph(20, &mut rng);
        cases.push(GradCheckCase {
            name: "cheb_graph_conv",
            op: Box::new(ChebConv::new(laplacian_cache(&adj), 3, 2, 2, true)),
            inputs: vec![random_tensor(&[1, 20, 2], -1.0, 1.0, &mut rng)],
            params: vec![
                random_tensor(&[3, 2, 2], -1.0, 1.0, &mut rng),
                random_tensor(&[2], -0.2, 0.2, &mut rng),
            ],
            mode: Mode::Train,
            eps: 1e-5,
            tol: GRAD_GATE,
        });
    }
    {
        let mut rng = SeededRng::new(108);
        let adj = random_graph(8, &mut rng);
        let block = DenseGcnBlock::new(laplacian_cache(&adj), 4, 2, 3, 2);
        let mut params = Vec::new();
        for t in 0..4 {
            let width = 4 + t * 2;
            params.push(random_tensor(&[2, width, 2], -0.8, 0.8, &mut rng));
            params.push(random_tensor(&[2], 0.5, 1.5, &mut rng));
            params.push(random_tensor(&[2], -0.2, 0.2, &mut rng));
        }
        params.push(random_tensor(&[12, 3], -0.8, 0.8, &mut rng));
        params.push(Tensor::<f64>::zeros(&[3]));
        cases.push(GradCheckCase {
            name: "dense_gcn_block",
            op: Box::new(block),
            inputs: vec![random_tensor(&[2, 8, 4], -1.0, 1.0, &mut rng)],
            params,
            mode: Mode::Train,
            eps: 1e-6,
            tol: GRAD_GATE,
        });
    }
    {
        let mut rng = SeededRng::new(109);
        let q = SparseMatrix::from_triplets(
            5,
            3,
            vec![
                (0, 0, 1.0),
                (1, 0, 0.6),
                (1, 1, 0.4),
                (2, 1, 1.0),
                (3, 1, 0.25),
                (3, 2, 0.75),
                (4, 2, 1.0),
            ],
        )
        .unwrap();
        cases.push(GradCheckCase {
            name: "graph_upsample",
            op: Box::new(GraphUpsample::new(&q)),
            inputs: vec![random_tensor(&[2, 3, 2], -1.0, 1.0, &mut rng)],
            params: vec![],
            mode: Mode::Train,
            eps: 1e-6,
            tol: 1e-7,
        });
    }
    // Losses: sampled away from their declared kinks (|x| = w for the
    // banded loss, 0 for L1, |x| = beta for smooth-L1).
    {
        let mut rng = SeededRng::new(110);
        let spec = LossSpec::exp_linear(5.0, 4.0).unwrap();
        let data: Vec<f64> = (0..24)
            .map(|_| {
                let v = rng.uniform_in(0.2, 4.0);
                let v = if rng.uniform() < 0.3 { v + 2.0 } else { v };
                let v = if v > 4.5 && v < 5.5 { v + 1.5 } else { v };
                if rng.uniform() < 0.5 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        cases.push(GradCheckCase {
            name: "loss_exp_linear",
            op: Box::new(LossOp::new(spec)),
            inputs: vec![Tensor::from_vec(&[24], data).unwrap()],
            params: vec![],
            mode: Mode::Train,
            eps: 1e-6,
            tol: 1e-6,
        });
    }
    {
        let mut rng = SeededRng::new(111);
        for (name, kind) in [
            ("loss_l1", LossKind::L1),
            ("loss_l2", LossKind::L2),
            ("loss_smooth_l1", LossKind::SmoothL1),
        ] {
            let spec = LossSpec {
                kind,
                w: 5.0,
                epsilon: 4.0,
                beta: 1.0,
            };
            let data: Vec<f64> = (0..24)
                .map(|_| {
                    // Stay clear of 0 and of |x| = 1.
                    let v = rng.uniform_in(0.15, 0.8);
                    let v = if rng.uniform() < 0.5 { v + 0.45 } else { v };
                    if rng.uniform() < 0.5 {
                        v
                    } else {
                        -v
                    }
                })
                .map(|v| if (0.95..1.05).contains(&v.abs()) { v * 1.2 } else { v })
                .collect();
            cases.push(GradCheckCase {
                name,
                op: Box::new(LossOp::new(spec)),
                inputs: vec![Tensor::from_vec(&[24], data).unwrap()],
                params: vec![],
                mode: Mode::Train,
                eps: 1e-6,
                tol: 1e-6,
            });
        }
    }
    cases
}

/// Micro configuration for the end-to-end model gradient check.
pub fn micro_config() -> NetConfig {
    NetConfig {
        input_size: 16,
        levels: 2,
        encoder_channels: vec![2, 4],
        fc_hidden: 8,
        embedding_dim: 8,
        decoder_channels: 6,
        densegcn_growth: 2,
        cheb_order: 2,
        aggregation_mode: AggregationMode::Full,
        precision: Precision::Double,
        graph_bias: true,
        hierarchy: None,
    }
}

/// The whole model as a single differentiable op: input = images, params =
/// every store entry, output = predicted vertices.
pub struct ModelOp {
    pub model: Model<f64>,
}

impl ModelOp {
    pub fn micro(seed: u64) -> Result<Self> {
        let config = micro_config();
        let mesh = sphere_mesh(64, 0.8)?;
        let hierarchy = Arc::new(build_hierarchy(&mesh, &[64, 16])?);
        Ok(ModelOp {
            model: build_model(&config, hierarchy, seed)?,
        })
    }

    pub fn param_tensors(&self) -> Vec<Tensor<f64>> {
        self.model
            .store
            .entries()
            .iter()
            .map(|e| e.value.clone())
            .collect()
    }
}

impl DiffOp<f64> for ModelOp {
    fn name(&self) -> &str {
        "agg_net_micro"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<f64>],
        params: &[&Tensor<f64>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<f64>>> {
        for (idx, p) in params.iter().enumerate() {
            *self.model.store.value_mut_at(idx) = (*p).clone();
        }
        Ok(vec![self.model.forward(inputs[0])?])
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<f64>],
        _params: &[&Tensor<f64>],
    ) -> Result<(Vec<Tensor<f64>>, Vec<Tensor<f64>>)> {
        self.model.store.zero_grads();
        let dimage = self.model.backward(out_grads[0])?;
        let param_grads = self
            .model
            .store
            .entries()
            .iter()
            .map(|e| e.grad.clone())
            .collect();
        Ok((vec![dimage], param_grads))
    }

    fn infer(&self, inputs: &[&Tensor<f64>], _params: &[&Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![self.model.infer(inputs[0])?])
    }
}

/// Run one registry case and report the outcome.
pub fn run_case(case: &mut GradCheckCase) -> Result<GradCheckOutcome> {
    let mut rng = SeededRng::new(0xfd_c4ec);
    let err = finite_difference_check(
        case.op.as_mut(),
        &case.inputs,
        &case.params,
        case.mode,
        case.eps,
        &mut rng,
    )?;
    Ok(GradCheckOutcome {
        name: case.name,
        max_rel_err: err,
        tol: case.tol.min(GRAD_GATE),
        passed: err <= case.tol.min(GRAD_GATE),
    })
}

/// End-to-end micro-model gradient check.
pub fn run_micro_model_case() -> Result<GradCheckOutcome> {
    let mut op = ModelOp::micro(0xa11)?;
    let params = op.param_tensors();
    let mut rng = SeededRng::new(0xfd_c4ed);
    let image_data: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.uniform_in(0.1, 0.9)).collect();
    let images = Tensor::from_vec(&[1, 16, 16, 3], image_data).unwrap();
    let mut check_rng = SeededRng::new(0xfd_c4ee);
    let err = finite_difference_check(
        &mut op,
        &[images],
        &params,
        Mode::Train,
        1e-6,
        &mut check_rng,
    )?;
    Ok(GradCheckOutcome {
        name: "agg_net_micro",
        max_rel_err: err,
        tol: GRAD_GATE,
        passed: err <= GRAD_GATE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_op_passes_its_gate() {
        for mut case in registry() {
            let outcome = run_case(&mut case).unwrap();
            assert!(
                outcome.passed,
                "{}: rel err {} over tol {}",
                outcome.name, outcome.max_rel_err, outcome.tol
            );
        }
    }
}
