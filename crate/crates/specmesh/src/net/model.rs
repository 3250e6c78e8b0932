//! The full image-to-mesh network: encoder, aggregation grid, embedding,
//! graph decoder, and output head, with explicit forward and reverse passes
//! over the fixed DAG.

use std::sync::Arc;

use crate::diff::checkpoint::{decode_checkpoint_into, encode_checkpoint};
use crate::diff::op::{DiffOp, Mode};
use crate::diff::store::ParameterStore;
use crate::error::{Error, Result};
use crate::net::config::{AggregationMode, NetConfig};
use crate::net::wiring;
use crate::nn::{
    concat_last, slice_last, BatchNorm, BilinearUpsample2x, ChebConv, Conv2d, CsrCache,
    DenseGcnBlock, FullyConnected, GraphUpsample, LeakyRelu, ResidualBlock,
};
use crate::real::{real, Real};
use crate::rng::SeededRng;
use crate::sampling::MeshHierarchy;
use crate::tensor::Tensor;

/// Width of the intermediate channel stage in the output head.
pub const HEAD_MID_CHANNELS: usize = 32;

/// An op bound to its parameter slots in the store.
struct Layer<Op> {
    op: Op,
    params: Vec<usize>,
}

impl<Op> Layer<Op> {
    fn forward<T: Real>(
        &mut self,
        store: &ParameterStore<T>,
        inputs: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<Vec<Tensor<T>>>
    where
        Op: DiffOp<T>,
    {
        let refs: Vec<&Tensor<T>> = self.params.iter().map(|&i| store.value_at(i)).collect();
        self.op.forward(inputs, &refs, mode)
    }

    fn backward<T: Real>(
        &mut self,
        store: &mut ParameterStore<T>,
        out_grads: &[&Tensor<T>],
    ) -> Result<Vec<Tensor<T>>>
    where
        Op: DiffOp<T>,
    {
        let (dinputs, dparams) = {
            let refs: Vec<&Tensor<T>> =
                self.params.iter().map(|&i| store.value_at(i)).collect();
            self.op.backward(out_grads, &refs)?
        };
        for (&idx, g) in self.params.iter().zip(&dparams) {
            store.accumulate_grad_at(idx, g)?;
        }
        Ok(dinputs)
    }

    fn infer<T: Real>(
        &self,
        store: &ParameterStore<T>,
        inputs: &[&Tensor<T>],
    ) -> Result<Vec<Tensor<T>>>
    where
        Op: DiffOp<T>,
    {
        let refs: Vec<&Tensor<T>> = self.params.iter().map(|&i| store.value_at(i)).collect();
        self.op.infer(inputs, &refs)
    }
}

struct GridNode<T: Real> {
    up: Option<BilinearUpsample2x<T>>,
    down: Option<Layer<Conv2d<T>>>,
    block: Layer<ResidualBlock<T>>,
}

struct AggNet<T: Real> {
    encoder: Vec<Layer<ResidualBlock<T>>>,
    /// grid[i-1][j-1] is node X^{i,j}; empty for levels without nodes.
    grid: Vec<Vec<GridNode<T>>>,
    fc1: Layer<FullyConnected<T>>,
    emb_act: LeakyRelu<T>,
    fc2: Layer<FullyConnected<T>>,
    seed_fc: Layer<FullyConnected<T>>,
    stages: Vec<Layer<DenseGcnBlock<T>>>,
    ups: Vec<GraphUpsample<T>>,
    head_up: Option<GraphUpsample<T>>,
    head1: Layer<ChebConv<T>>,
    head_act: LeakyRelu<T>,
    head2: Layer<ChebConv<T>>,
}

pub struct Model<T: Real> {
    pub config: NetConfig,
    pub hierarchy: Arc<MeshHierarchy>,
    pub store: ParameterStore<T>,
    /// 1 when the hierarchy carries an extra finest level for the output
    /// mesh, else 0.
    pub offset: usize,
    net: AggNet<T>,
    saved_batch: Option<usize>,
}

struct Builder<'a, T: Real> {
    store: &'a mut ParameterStore<T>,
    rng: SeededRng,
}

impl<'a, T: Real> Builder<'a, T> {
    /// Fan-in-scaled uniform init: bound = sqrt(6 / fan_in).
    fn uniform(&mut self, name: &str, dims: &[usize], fan_in: usize) -> Result<usize> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let len: usize = dims.iter().product();
        let data = (0..len)
            .map(|_| real::<T>(self.rng.uniform_in(-bound, bound)))
            .collect();
        self.store.register(name, Tensor::from_vec(dims, data)?, true)
    }

    fn zeros(&mut self, name: &str, dims: &[usize]) -> Result<usize> {
        self.store.register(name, Tensor::zeros(dims), true)
    }

    fn ones(&mut self, name: &str, dims: &[usize]) -> Result<usize> {
        self.store
            .register(name, Tensor::filled(dims, T::one()), true)
    }

    /// Residual-block parameters in the block's declared order.
    fn residual(&mut self, prefix: &str, block: &ResidualBlock<T>) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (suffix, dims) in block.param_dims() {
            let name = format!("{prefix}.{suffix}");
            let idx = if suffix.contains("scale") {
                self.ones(&name, &dims)?
            } else if suffix.contains("shift") {
                self.zeros(&name, &dims)?
            } else if dims.len() == 4 {
                self.uniform(&name, &dims, 9 * dims[2])?
            } else {
                self.uniform(&name, &dims, dims[0])?
            };
            out.push(idx);
        }
        Ok(out)
    }

    fn fully_connected(&mut self, prefix: &str, fc: &FullyConnected<T>) -> Result<Vec<usize>> {
        Ok(vec![
            self.uniform(&format!("{prefix}.w"), &fc.weight_dims(), fc.in_features)?,
            self.zeros(&format!("{prefix}.b"), &[fc.out_features])?,
        ])
    }

    fn cheb(&mut self, prefix: &str, cheb: &ChebConv<T>) -> Result<Vec<usize>> {
        let dims = cheb.theta_dims();
        let mut out = vec![self.uniform(
            &format!("{prefix}.theta"),
            &dims,
            cheb.k_order * cheb.in_features,
        )?];
        if cheb.bias {
            out.push(self.zeros(&format!("{prefix}.b"), &[cheb.out_features])?);
        }
        Ok(out)
    }

    fn dense_gcn(&mut self, prefix: &str, block: &DenseGcnBlock<T>) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (t, (cheb, _, _)) in block.layers.iter().enumerate() {
            out.extend(self.cheb(&format!("{prefix}.layer{t}"), cheb)?);
            out.push(self.ones(&format!("{prefix}.layer{t}.bn.scale"), &[block.growth])?);
            out.push(self.zeros(&format!("{prefix}.layer{t}.bn.shift"), &[block.growth])?);
        }
        out.extend(self.fully_connected(&format!("{prefix}.fuse"), &block.fuse)?);
        Ok(out)
    }
}

/// Construct a model with freshly initialized parameters.
pub fn build_model<T: Real>(
    config: &NetConfig,
    hierarchy: Arc<MeshHierarchy>,
    seed: u64,
) -> Result<Model<T>> {
    config.validate()?;
    let offset = config.hierarchy_offset(&hierarchy)?;
    let levels = config.levels;
    let mut store = ParameterStore::new();
    let mut b = Builder {
        store: &mut store,
        rng: SeededRng::new(seed),
    };

    // Encoder: one stride-2 residual block per level.
    let mut encoder = Vec::with_capacity(levels);
    for i in 1..=levels {
        let cin = if i == 1 {
            3
        } else {
            config.encoder_channels[i - 2]
        };
        let cout = config.encoder_channels[i - 1];
        let op = ResidualBlock::new(cin, cout, 2);
        let params = b.residual(&format!("enc{i}"), &op)?;
        encoder.push(Layer { op, params });
    }

    // Aggregation grid.
    let mut grid = Vec::with_capacity(levels);
    for i in 1..=levels {
        let mut nodes = Vec::new();
        for j in 1..=wiring::extra_columns(config, i) {
            let c = config.encoder_channels[i - 1];
            let up = wiring::has_up(config, i, j).then(BilinearUpsample2x::default);
            let down = if wiring::has_down(config, i, j) {
                let conv = Conv2d::new(config.encoder_channels[i - 2], c, 2);
                let idx = b.uniform(
                    &format!("grid.i{i}.j{j}.down.w"),
                    &conv.weight_dims(),
                    9 * config.encoder_channels[i - 2],
                )?;
                Some(Layer {
                    op: conv,
                    params: vec![idx],
                })
            } else {
                None
            };
            let in_channels = wiring::node_input_channels(config, i, j);
            let op = ResidualBlock::new(in_channels, c, 1);
            let params = b.residual(&format!("grid.i{i}.j{j}"), &op)?;
            nodes.push(GridNode {
                up,
                down,
                block: Layer { op, params },
            });
        }
        grid.push(nodes);
    }

    // Embedding head over the coarsest 4x4 map.
    let coarsest_flat = 16 * config.encoder_channels[levels - 1];
    let fc1_op = FullyConnected::new(coarsest_flat, config.fc_hidden);
    let fc1_params = b.fully_connected("emb.fc1", &fc1_op)?;
    let fc2_op = FullyConnected::new(config.fc_hidden, config.embedding_dim);
    let fc2_params = b.fully_connected("emb.fc2", &fc2_op)?;

    // Decoder seed: embedding to 16 coarse vertices.
    let seed_op = FullyConnected::new(config.embedding_dim, 16 * config.decoder_channels);
    let seed_params = b.fully_connected("seed.fc", &seed_op)?;

    // Graph decoder stages, coarsest to finest grid level.
    let caches: Vec<Arc<CsrCache<T>>> = hierarchy
        .laplacians
        .iter()
        .map(|l| Arc::new(CsrCache::from_sparse(l)))
        .collect();
    let mut stages = Vec::with_capacity(levels);
    let mut ups = Vec::with_capacity(levels.saturating_sub(1));
    for s in 0..levels {
        let level = levels - s;
        let hier_idx = level - 1 + offset;
        let op = DenseGcnBlock::new(
            caches[hier_idx].clone(),
            wiring::decoder_input_channels(config, level),
            config.densegcn_growth,
            config.decoder_channels,
            config.cheb_order,
        );
        let params = b.dense_gcn(&format!("dec{s}"), &op)?;
        stages.push(Layer { op, params });
        if s + 1 < levels {
            ups.push(GraphUpsample::new(&hierarchy.pairs[hier_idx - 1].q_up));
        }
    }
    let head_up = (offset == 1).then(|| GraphUpsample::new(&hierarchy.pairs[0].q_up));

    let head1_op = ChebConv::new(
        caches[0].clone(),
        config.cheb_order,
        config.decoder_channels,
        HEAD_MID_CHANNELS,
        config.graph_bias,
    );
    let head1_params = b.cheb("head.cheb1", &head1_op)?;
    let head2_op = ChebConv::new(
        caches[0].clone(),
        config.cheb_order,
        HEAD_MID_CHANNELS,
        3,
        config.graph_bias,
    );
    let head2_params = b.cheb("head.cheb2", &head2_op)?;

    Ok(Model {
        config: config.clone(),
        hierarchy,
        store,
        offset,
        net: AggNet {
            encoder,
            grid,
            fc1: Layer {
                op: fc1_op,
                params: fc1_params,
            },
            emb_act: LeakyRelu::default(),
            fc2: Layer {
                op: fc2_op,
                params: fc2_params,
            },
            seed_fc: Layer {
                op: seed_op,
                params: seed_params,
            },
            stages,
            ups,
            head_up,
            head1: Layer {
                op: head1_op,
                params: head1_params,
            },
            head_act: LeakyRelu::default(),
            head2: Layer {
                op: head2_op,
                params: head2_params,
            },
        },
        saved_batch: None,
    })
}

impl<T: Real> Model<T> {
    pub fn output_vertex_count(&self) -> usize {
        self.hierarchy.levels[0].vertex_count()
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Parameter memory in bytes at checkpoint precision (f32).
    pub fn param_bytes(&self) -> usize {
        self.param_count() * 4
    }

    fn validate_images(&self, images: &Tensor<T>) -> Result<()> {
        let s = self.config.input_size;
        if images.rank() != 4 || images.dims()[1] != s || images.dims()[2] != s
            || images.dims()[3] != 3
        {
            return Err(Error::ShapeMismatch(format!(
                "images must be Bx{s}x{s}x3, got {:?}",
                images.dims()
            )));
        }
        for &v in images.data() {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::InvalidArgument(
                    "image values must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Training forward pass; saves activations for [`Model::backward`].
    pub fn forward(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.validate_images(images)?;
        let batch = images.dims()[0];
        let levels = self.config.levels;
        let mode = Mode::Train;
        let Model {
            config, net, store, ..
        } = self;

        // Encoder chain; outputs[i-1][0] = X^{i,0}.
        let mut outputs: Vec<Vec<Tensor<T>>> = Vec::with_capacity(levels);
        let mut cur = images;
        for (k, layer) in net.encoder.iter_mut().enumerate() {
            let y = layer.forward(store, &[cur], mode)?.remove(0);
            y.assert_finite(&format!("enc{}", k + 1))?;
            outputs.push(vec![y]);
            cur = outputs[k].last().unwrap();
        }

        // Grid columns.
        if config.aggregation_mode.has_grid() {
            for j in 1..levels {
                for i in 1..=levels - j {
                    let node = &mut net.grid[i - 1][j - 1];
                    let mut parts: Vec<Tensor<T>> = Vec::new();
                    if let Some(up) = &mut node.up {
                        parts.push(
                            up.forward(&[&outputs[i][j - 1]], &[], mode)?.remove(0),
                        );
                    }
                    if let Some(down) = &mut node.down {
                        parts.push(
                            down.forward(store, &[&outputs[i - 2][j - 1]], mode)?
                                .remove(0),
                        );
                    }
                    let mut refs: Vec<&Tensor<T>> = outputs[i - 1][..j].iter().collect();
                    for p in &parts {
                        refs.push(p);
                    }
                    let cat = concat_last(&refs);
                    let y = node.block.forward(store, &[&cat], mode)?.remove(0);
                    y.assert_finite(&format!("grid.i{i}.j{j}"))?;
                    outputs[i - 1].push(y);
                }
            }
        }

        // Embedding.
        let coarsest = outputs[levels - 1][0].clone();
        let flat_dim = coarsest.len() / batch;
        let flat = coarsest.reshape(&[batch, flat_dim])?;
        let h = net.fc1.forward(store, &[&flat], mode)?.remove(0);
        let h = net.emb_act.forward(&[&h], &[], mode)?.remove(0);
        let emb = net.fc2.forward(store, &[&h], mode)?.remove(0);
        emb.assert_finite("embedding")?;

        // Decoder.
        let seed = net.seed_fc.forward(store, &[&emb], mode)?.remove(0);
        let mut v = seed.reshape(&[batch, 16, config.decoder_channels])?;
        for s in 0..levels {
            let level = levels - s;
            if config.aggregation_mode.has_bridges() {
                let bridge = match config.aggregation_mode {
                    AggregationMode::Shallow => &outputs[level - 1][0],
                    _ => &outputs[level - 1][levels - level],
                };
                let m = config.map_width(level);
                let c = config.encoder_channels[level - 1];
                let flat = bridge.clone().reshape(&[batch, m * m, c])?;
                v = concat_last(&[&v, &flat]);
            }
            v = net.stages[s].forward(store, &[&v], mode)?.remove(0);
            v.assert_finite(&format!("dec{s}"))?;
            if s + 1 < levels {
                v = net.ups[s].forward(&[&v], &[], mode)?.remove(0);
            }
        }
        if let Some(hu) = &mut net.head_up {
            v = hu.forward(&[&v], &[], mode)?.remove(0);
        }
        let h = net.head1.forward(store, &[&v], mode)?.remove(0);
        let h = net.head_act.forward(&[&h], &[], mode)?.remove(0);
        let out = net.head2.forward(store, &[&h], mode)?.remove(0);
        out.assert_finite("head")?;
        self.saved_batch = Some(batch);
        Ok(out)
    }

    /// Reverse pass over the saved forward; accumulates parameter gradients
    /// into the store and returns the gradient with respect to the input
    /// images.
    pub fn backward(&mut self, out_grad: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self
            .saved_batch
            .take()
            .ok_or_else(|| crate::diff::op::missing_forward("model"))?;
        let levels = self.config.levels;
        let Model {
            config, net, store, ..
        } = self;

        let dh = net.head2.backward(store, &[out_grad])?.remove(0);
        let dh = net.head_act.backward(&[&dh], &[])?.0.remove(0);
        let mut dv = net.head1.backward(store, &[&dh])?.remove(0);
        if let Some(hu) = &mut net.head_up {
            dv = hu.backward(&[&dv], &[])?.0.remove(0);
        }

        // Gradient accumulators for grid node outputs, indexed like the
        // forward `outputs` structure.
        let mut dgrid: Vec<Vec<Option<Tensor<T>>>> = (1..=levels)
            .map(|i| vec![None; 1 + wiring::extra_columns(config, i)])
            .collect();
        let accumulate = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| -> Result<()> {
            match slot {
                Some(t) => t.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };

        for s in (0..levels).rev() {
            let level = levels - s;
            if s + 1 < levels {
                dv = net.ups[s].backward(&[&dv], &[])?.0.remove(0);
            }
            let dcat = net.stages[s].backward(store, &[&dv])?.remove(0);
            if config.aggregation_mode.has_bridges() {
                let d = config.decoder_channels;
                let c = config.encoder_channels[level - 1];
                let m = config.map_width(level);
                let dfeat = slice_last(&dcat, 0, d);
                let dbridge = slice_last(&dcat, d, d + c).reshape(&[batch, m, m, c])?;
                let col = match config.aggregation_mode {
                    AggregationMode::Shallow => 0,
                    _ => levels - level,
                };
                accumulate(&mut dgrid[level - 1][col], dbridge)?;
                dv = dfeat;
            } else {
                dv = dcat;
            }
        }

        // Decoder seed and embedding.
        let dseed = dv.reshape(&[batch, 16 * config.decoder_channels])?;
        let demb = net.seed_fc.backward(store, &[&dseed])?.remove(0);
        let dh = net.fc2.backward(store, &[&demb])?.remove(0);
        let dh = net.emb_act.backward(&[&dh], &[])?.0.remove(0);
        let dflat = net.fc1.backward(store, &[&dh])?.remove(0);
        let c_last = config.encoder_channels[levels - 1];
        let dcoarsest = dflat.reshape(&[batch, 4, 4, c_last])?;
        accumulate(&mut dgrid[levels - 1][0], dcoarsest)?;

        // Grid nodes, reverse column order.
        if config.aggregation_mode.has_grid() {
            for j in (1..levels).rev() {
                for i in 1..=levels - j {
                    let g = dgrid[i - 1][j].take().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "grid node i{i} j{j} has no consumers"
                        ))
                    })?;
                    let node = &mut net.grid[i - 1][j - 1];
                    let dcat = node.block.backward(store, &[&g])?.remove(0);
                    let c = config.encoder_channels[i - 1];
                    let mut cursor = 0;
                    for jj in 0..j {
                        let part = slice_last(&dcat, cursor, cursor + c);
                        cursor += c;
                        accumulate(&mut dgrid[i - 1][jj], part)?;
                    }
                    if let Some(up) = &mut node.up {
                        let cu = config.encoder_channels[i];
                        let part = slice_last(&dcat, cursor, cursor + cu);
                        cursor += cu;
                        let dsrc = up.backward(&[&part], &[])?.0.remove(0);
                        accumulate(&mut dgrid[i][j - 1], dsrc)?;
                    }
                    if let Some(down) = &mut node.down {
                        let part = slice_last(&dcat, cursor, cursor + c);
                        cursor += c;
                        let dsrc = down.backward(store, &[&part])?.remove(0);
                        accumulate(&mut dgrid[i - 2][j - 1], dsrc)?;
                    }
                    debug_assert_eq!(cursor, *dcat.dims().last().unwrap());
                }
            }
        }

        // Encoder chain.
        let mut d = dgrid[levels - 1][0]
            .take()
            .ok_or_else(|| Error::InvalidArgument("coarsest level unused".into()))?;
        for k in (0..levels).rev() {
            let dinput = net.encoder[k].backward(store, &[&d])?.remove(0);
            d = dinput;
            if k > 0 {
                if let Some(g) = dgrid[k - 1][0].take() {
                    d.add_assign(&g)?;
                }
            }
        }
        Ok(d)
    }

    /// Evaluation-mode forward with no state mutation; safe for concurrent
    /// use from multiple threads.
    pub fn infer(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.validate_images(images)?;
        let batch = images.dims()[0];
        let levels = self.config.levels;
        let config = &self.config;
        let net = &self.net;
        let store = &self.store;

        let mut outputs: Vec<Vec<Tensor<T>>> = Vec::with_capacity(levels);
        let mut cur = images;
        for (k, layer) in net.encoder.iter().enumerate() {
            let y = layer.infer(store, &[cur])?.remove(0);
            outputs.push(vec![y]);
            cur = outputs[k].last().unwrap();
        }
        if config.aggregation_mode.has_grid() {
            for j in 1..levels {
                for i in 1..=levels - j {
                    let node = &net.grid[i - 1][j - 1];
                    let mut parts: Vec<Tensor<T>> = Vec::new();
                    if let Some(up) = &node.up {
                        parts.push(up.infer(&[&outputs[i][j - 1]], &[])?.remove(0));
                    }
                    if let Some(down) = &node.down {
                        parts.push(down.infer(store, &[&outputs[i - 2][j - 1]])?.remove(0));
                    }
                    let mut refs: Vec<&Tensor<T>> = outputs[i - 1][..j].iter().collect();
                    for p in &parts {
                        refs.push(p);
                    }
                    let cat = concat_last(&refs);
                    let y = node.block.infer(store, &[&cat])?.remove(0);
                    outputs[i - 1].push(y);
                }
            }
        }
        let coarsest = outputs[levels - 1][0].clone();
        let flat_dim = coarsest.len() / batch;
        let flat = coarsest.reshape(&[batch, flat_dim])?;
        let h = net.fc1.infer(store, &[&flat])?.remove(0);
        let h = net.emb_act.infer(&[&h], &[])?.remove(0);
        let emb = net.fc2.infer(store, &[&h])?.remove(0);
        let seed = net.seed_fc.infer(store, &[&emb])?.remove(0);
        let mut v = seed.reshape(&[batch, 16, config.decoder_channels])?;
        for s in 0..levels {
            let level = levels - s;
            if config.aggregation_mode.has_bridges() {
                let bridge = match config.aggregation_mode {
                    AggregationMode::Shallow => &outputs[level - 1][0],
                    _ => &outputs[level - 1][levels - level],
                };
                let m = config.map_width(level);
                let c = config.encoder_channels[level - 1];
                let flat = bridge.clone().reshape(&[batch, m * m, c])?;
                v = concat_last(&[&v, &flat]);
            }
            v = net.stages[s].infer(store, &[&v])?.remove(0);
            if s + 1 < levels {
                v = net.ups[s].infer(&[&v], &[])?.remove(0);
            }
        }
        if let Some(hu) = &net.head_up {
            v = hu.infer(&[&v], &[])?.remove(0);
        }
        let h = net.head1.infer(store, &[&v])?.remove(0);
        let h = net.head_act.infer(&[&h], &[])?.remove(0);
        net.head2.infer(store, &[&h]).map(|mut v| v.remove(0))
    }

    fn for_each_norm(&mut self, f: &mut dyn FnMut(String, &mut BatchNorm<T>)) {
        let levels = self.config.levels;
        for (k, layer) in self.net.encoder.iter_mut().enumerate() {
            layer
                .op
                .visit_norms(&mut |suffix, bn| f(format!("enc{}.{suffix}", k + 1), bn));
        }
        for i in 1..=levels {
            for (jm1, node) in self.net.grid[i - 1].iter_mut().enumerate() {
                node.block.op.visit_norms(&mut |suffix, bn| {
                    f(format!("grid.i{i}.j{}.{suffix}", jm1 + 1), bn)
                });
            }
        }
        for (s, stage) in self.net.stages.iter_mut().enumerate() {
            for (t, (_, bn, _)) in stage.op.layers.iter_mut().enumerate() {
                f(format!("dec{s}.layer{t}.bn"), bn);
            }
        }
    }

    /// Serialize parameters, optimizer state, and normalization statistics.
    pub fn encode_state(&mut self) -> Vec<u8> {
        let mut combined = self.store.clone();
        self.for_each_norm(&mut |name, bn| {
            combined
                .register(&format!("{name}.running_mean"), bn.running_mean.clone(), false)
                .expect("unique norm name");
            combined
                .register(&format!("{name}.running_var"), bn.running_var.clone(), false)
                .expect("unique norm name");
        });
        encode_checkpoint(&combined)
    }

    /// Restore a state produced by [`Model::encode_state`] for the same
    /// configuration. Every tensor shape is validated.
    pub fn decode_state(&mut self, bytes: &[u8]) -> Result<()> {
        let mut combined = self.store.clone();
        self.for_each_norm(&mut |name, bn| {
            combined
                .register(&format!("{name}.running_mean"), bn.running_mean.clone(), false)
                .expect("unique norm name");
            combined
                .register(&format!("{name}.running_var"), bn.running_var.clone(), false)
                .expect("unique norm name");
        });
        decode_checkpoint_into(bytes, &mut combined)?;
        for idx in 0..self.store.len() {
            let src = combined.value_at(idx).clone();
            *self.store.value_mut_at(idx) = src;
            let vel = combined.entries()[idx].velocity.clone();
            self.store.entry_mut(idx).velocity = vel;
        }
        self.for_each_norm(&mut |name, bn| {
            let mi = combined
                .lookup(&format!("{name}.running_mean"))
                .expect("norm entry");
            let vi = combined
                .lookup(&format!("{name}.running_var"))
                .expect("norm entry");
            bn.running_mean = combined.value_at(mi).clone();
            bn.running_var = combined.value_at(vi).clone();
        });
        Ok(())
    }

    pub fn save_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.encode_state())?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.decode_state(&bytes)
    }
}
