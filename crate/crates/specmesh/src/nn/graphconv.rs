//! Graph layers: Chebyshev spectral convolution, sparse up-sampling, and the
//! densely connected graph-convolution block.

use std::sync::Arc;

use rayon::prelude::*;

use crate::diff::op::{missing_forward, DiffOp, Mode};
use crate::error::{Error, Result};
use crate::nn::act::LeakyRelu;
use crate::nn::linalg::{matmul, matmul_a_bt, matmul_at_b_accum};
use crate::nn::norm::BatchNorm;
use crate::real::{real, Real};
use crate::tensor::Tensor;

/// CSR copy of a sparse matrix with values cast to the active precision.
pub struct CsrCache<T> {
    pub rows: usize,
    pub cols: usize,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> CsrCache<T> {
    pub fn from_sparse(m: &crate::graph::SparseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows() + 1);
        let mut col_idx = Vec::with_capacity(m.nnz());
        let mut values = Vec::with_capacity(m.nnz());
        row_ptr.push(0);
        for r in 0..m.rows() {
            for &(_, c, v) in m.row_entries(r) {
                col_idx.push(c);
                values.push(real::<T>(v));
            }
            row_ptr.push(col_idx.len() as u32);
        }
        CsrCache {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// `out = M * x` where `x` and `out` are row-major (rows x f) blocks.
    pub fn spmm(&self, x: &[T], out: &mut [T], f: usize) {
        debug_assert_eq!(x.len(), self.cols * f);
        debug_assert_eq!(out.len(), self.rows * f);
        let body = |(r0, chunk): (usize, &mut [T])| {
            let rows = chunk.len() / f;
            for i in 0..rows {
                let r = r0 + i;
                let dst = &mut chunk[i * f..(i + 1) * f];
                dst.fill(T::zero());
                let start = self.row_ptr[r] as usize;
                let end = self.row_ptr[r + 1] as usize;
                for e in start..end {
                    let v = self.values[e];
                    let src = self.col_idx[e] as usize * f;
                    let row = &x[src..src + f];
                    for (o, &xv) in dst.iter_mut().zip(row) {
                        *o = *o + v * xv;
                    }
                }
            }
        };
        if self.rows * f < 1 << 14 {
            body((0, out));
        } else {
            let chunk = (1 << 13) / f.max(1) + 1;
            out.par_chunks_mut(chunk * f)
                .enumerate()
                .for_each(|(ci, c)| body((ci * chunk, c)));
        }
    }
}

/// Chebyshev spectral graph convolution of order K over a fixed rescaled
/// Laplacian.
///
/// `y = sum_k T_k(L) x theta_k (+ bias)` with the polynomial terms built by
/// the three-term recurrence `T_k = 2 L T_{k-1} - T_{k-2}`, `T_0 x = x`,
/// `T_1 x = L x`. The k = 0 constant term is included: K = 3 means
/// T_0, T_1, T_2.
///
/// Parameters: `[theta]` of dims [K, F_in, F_out], plus `[bias]` of dims
/// [F_out] when `bias` is set.
pub struct ChebConv<T> {
    pub laplacian: Arc<CsrCache<T>>,
    pub k_order: usize,
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
    saved: Option<Saved<T>>,
}

struct Saved<T> {
    /// (B*N) x (K*F_in) stacked polynomial features.
    stacked: Vec<T>,
    batch: usize,
}

impl<T: Real> ChebConv<T> {
    pub fn new(
        laplacian: Arc<CsrCache<T>>,
        k_order: usize,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> Self {
        assert!(k_order >= 1);
        ChebConv {
            laplacian,
            k_order,
            in_features,
            out_features,
            bias,
            saved: None,
        }
    }

    pub fn theta_dims(&self) -> Vec<usize> {
        vec![self.k_order, self.in_features, self.out_features]
    }

    pub fn output_dims(&self, input: &[usize]) -> Vec<usize> {
        vec![input[0], input[1], self.out_features]
    }

    fn check(&self, x: &Tensor<T>, params: &[&Tensor<T>]) -> Result<()> {
        let n = self.laplacian.rows;
        if x.rank() != 3 || x.dims()[1] != n || x.dims()[2] != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "cheb_graph_conv expects Bx{n}x{}, got {:?}",
                self.in_features,
                x.dims()
            )));
        }
        if params[0].dims() != self.theta_dims().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "theta must be {:?}, got {:?}",
                self.theta_dims(),
                params[0].dims()
            )));
        }
        if self.bias {
            if params.len() < 2 || params[1].dims() != [self.out_features] {
                return Err(Error::ShapeMismatch("bias must be [F_out]".into()));
            }
        }
        Ok(())
    }

    /// Stacked polynomial features: rows (b*n), columns (k, f_in).
    fn stack(&self, x: &Tensor<T>) -> Vec<T> {
        let (b, n, f) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let k = self.k_order;
        let mut stacked = vec![T::zero(); b * n * k * f];
        let mut t_prev: Vec<T> = Vec::new();
        let mut t_cur: Vec<T> = Vec::new();
        for bi in 0..b {
            let xs = &x.data()[bi * n * f..(bi + 1) * n * f];
            for kk in 0..k {
                let term: Vec<T> = match kk {
                    0 => xs.to_vec(),
                    1 => {
                        let mut t1 = vec![T::zero(); n * f];
                        self.laplacian.spmm(xs, &mut t1, f);
                        t1
                    }
                    _ => {
                        let mut t_next = vec![T::zero(); n * f];
                        self.laplacian.spmm(&t_cur, &mut t_next, f);
                        let two = real::<T>(2.0);
                        for (o, &p) in t_next.iter_mut().zip(&t_prev) {
                            *o = two * *o - p;
                        }
                        t_next
                    }
                };
                // Scatter into row-major (b*n, k*f) layout.
                for vi in 0..n {
                    let dst = ((bi * n + vi) * k + kk) * f;
                    stacked[dst..dst + f].copy_from_slice(&term[vi * f..(vi + 1) * f]);
                }
                t_prev = std::mem::take(&mut t_cur);
                t_cur = term;
            }
        }
        stacked
    }

    fn run(&self, x: &Tensor<T>, params: &[&Tensor<T>]) -> Result<(Tensor<T>, Vec<T>)> {
        self.check(x, params)?;
        let (b, n) = (x.dims()[0], x.dims()[1]);
        let stacked = self.stack(x);
        let mut y = Tensor::<T>::zeros(&[b, n, self.out_features]);
        matmul(
            &stacked,
            params[0].data(),
            y.data_mut(),
            b * n,
            self.k_order * self.in_features,
            self.out_features,
        );
        if self.bias {
            let bias = params[1];
            for r in 0..b * n {
                let row = &mut y.data_mut()[r * self.out_features..(r + 1) * self.out_features];
                for (o, &bv) in row.iter_mut().zip(bias.data()) {
                    *o = *o + bv;
                }
            }
        }
        Ok((y, stacked))
    }
}

impl<T: Real> DiffOp<T> for ChebConv<T> {
    fn name(&self) -> &str {
        "cheb_graph_conv"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        _mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let (y, stacked) = self.run(inputs[0], params)?;
        self.saved = Some(Saved {
            stacked,
            batch: inputs[0].dims()[0],
        });
        Ok(vec![y])
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let Saved { stacked, batch } = self
            .saved
            .take()
            .ok_or_else(|| missing_forward(self.name()))?;
        let dy = out_grads[0];
        let (k, fi, fo) = (self.k_order, self.in_features, self.out_features);
        let n = self.laplacian.rows;
        let rows = batch * n;
        let mut dtheta = Tensor::<T>::zeros(&self.theta_dims());
        matmul_at_b_accum(&stacked, dy.data(), dtheta.data_mut(), rows, k * fi, fo);

        // d stacked = dy theta^T, then fold the polynomial terms back:
        // dx = sum_k T_k(L) g_k, using symmetry of T_k(L).
        let mut dstacked = vec![T::zero(); rows * k * fi];
        matmul_a_bt(dy.data(), params[0].data(), &mut dstacked, rows, fo, k * fi);
        let mut dx = Tensor::<T>::zeros(&[batch, n, fi]);
        let mut g = vec![T::zero(); n * fi];
        let mut a = vec![T::zero(); n * fi];
        let mut b_buf = vec![T::zero(); n * fi];
        for bi in 0..batch {
            for kk in 0..k {
                for vi in 0..n {
                    let src = ((bi * n + vi) * k + kk) * fi;
                    g[vi * fi..(vi + 1) * fi]
                        .copy_from_slice(&dstacked[src..src + fi]);
                }
                // Apply T_kk(L) to g in place via the recurrence.
                let target: &[T] = match kk {
                    0 => &g,
                    1 => {
                        self.laplacian.spmm(&g, &mut a, fi);
                        &a
                    }
                    _ => {
                        // a = T_1 g, b = T_0 g; iterate up to kk.
                        self.laplacian.spmm(&g, &mut a, fi);
                        b_buf.copy_from_slice(&g);
                        let two = real::<T>(2.0);
                        let mut cur = 1;
                        while cur < kk {
                            let mut next = vec![T::zero(); n * fi];
                            self.laplacian.spmm(&a, &mut next, fi);
                            for (o, &p) in next.iter_mut().zip(b_buf.iter()) {
                                *o = two * *o - p;
                            }
                            b_buf.copy_from_slice(&a);
                            a.copy_from_slice(&next);
                            cur += 1;
                        }
                        &a
                    }
                };
                let dst = &mut dx.data_mut()[bi * n * fi..(bi + 1) * n * fi];
                for (o, &v) in dst.iter_mut().zip(target) {
                    *o = *o + v;
                }
            }
        }
        let mut grads = vec![dtheta];
        if self.bias {
            let mut db = Tensor::<T>::zeros(&[fo]);
            for r in 0..rows {
                let row = &dy.data()[r * fo..(r + 1) * fo];
                for (o, &gv) in db.data_mut().iter_mut().zip(row) {
                    *o = *o + gv;
                }
            }
            grads.push(db);
        }
        Ok((vec![dx], grads))
    }

    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.run(inputs[0], params)?.0])
    }
}

/// Sparse up-sampling `y = Q_u x`; the backward pass multiplies by the
/// transpose. No parameters.
pub struct GraphUpsample<T> {
    pub matrix: Arc<CsrCache<T>>,
    pub transpose: Arc<CsrCache<T>>,
    saved: Option<Vec<usize>>,
}

impl<T: Real> GraphUpsample<T> {
    pub fn new(q_up: &crate::graph::SparseMatrix) -> Self {
        GraphUpsample {
            matrix: Arc::new(CsrCache::from_sparse(q_up)),
            transpose: Arc::new(CsrCache::from_sparse(&q_up.transpose())),
            saved: None,
        }
    }

    pub fn output_dims(&self, input: &[usize]) -> Vec<usize> {
        vec![input[0], self.matrix.rows, input[2]]
    }

    fn run(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 3 || x.dims()[1] != self.matrix.cols {
            return Err(Error::ShapeMismatch(format!(
                "graph_upsample expects Bx{}xC, got {:?}",
                self.matrix.cols,
                x.dims()
            )));
        }
        let (b, f) = (x.dims()[0], x.dims()[2]);
        let mut y = Tensor::<T>::zeros(&[b, self.matrix.rows, f]);
        for bi in 0..b {
            self.matrix.spmm(
                &x.data()[bi * self.matrix.cols * f..(bi + 1) * self.matrix.cols * f],
                &mut y.data_mut()[bi * self.matrix.rows * f..(bi + 1) * self.matrix.rows * f],
                f,
            );
        }
        Ok(y)
    }
}

impl<T: Real> DiffOp<T> for GraphUpsample<T> {
    fn name(&self) -> &str {
        "graph_upsample"
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
        let (b, f) = (dims[0], dims[2]);
        let mut dx = Tensor::<T>::zeros(&dims);
        for bi in 0..b {
            self.transpose.spmm(
                &dy.data()[bi * self.matrix.rows * f..(bi + 1) * self.matrix.rows * f],
                &mut dx.data_mut()[bi * self.matrix.cols * f..(bi + 1) * self.matrix.cols * f],
                f,
            );
        }
        Ok((vec![dx], vec![]))
    }

    fn infer(&self, inputs: &[&Tensor<T>], _params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(vec![self.run(inputs[0])?])
    }
}

/// Densely connected graph block: `layer_count` Chebyshev layers, each
/// followed by batch normalization and a leaky rectifier, where layer `t`
/// consumes the concatenation of the block input and all previous layer
/// outputs. A per-vertex linear fusion maps the final concatenation to
/// `fuse_out` channels.
///
/// Parameter order: for each layer `[theta, bias, scale, shift]`, then
/// `[fuse_w, fuse_b]`.
pub struct DenseGcnBlock<T> {
    pub layers: Vec<(ChebConv<T>, BatchNorm<T>, LeakyRelu<T>)>,
    pub fuse: crate::nn::dense::FullyConnected<T>,
    pub in_features: usize,
    pub growth: usize,
    pub fuse_out: usize,
    saved: Option<DenseSaved>,
}

pub const DENSE_GCN_LAYERS: usize = 4;

struct DenseSaved {
    widths: Vec<usize>,
}

impl<T: Real> DenseGcnBlock<T> {
    pub fn new(
        laplacian: Arc<CsrCache<T>>,
        in_features: usize,
        growth: usize,
        fuse_out: usize,
        k_order: usize,
    ) -> Self {
        let mut layers = Vec::with_capacity(DENSE_GCN_LAYERS);
        for t in 0..DENSE_GCN_LAYERS {
            let width = in_features + t * growth;
            // No bias on these convolutions: normalization follows
            // immediately and removes any constant shift, which would leave
            // the bias with an identically zero gradient.
            layers.push((
                ChebConv::new(laplacian.clone(), k_order, width, growth, false),
                BatchNorm::new(growth),
                LeakyRelu::default(),
            ));
        }
        let fuse = crate::nn::dense::FullyConnected::new(
            in_features + DENSE_GCN_LAYERS * growth,
            fuse_out,
        );
        DenseGcnBlock {
            layers,
            fuse,
            in_features,
            growth,
            fuse_out,
            saved: None,
        }
    }

    pub fn output_dims(&self, input: &[usize]) -> Vec<usize> {
        vec![input[0], input[1], self.fuse_out]
    }

    fn params_per_layer(&self) -> usize {
        if self.layers[0].0.bias {
            4
        } else {
            3
        }
    }

    fn split_params<'a>(
        &self,
        params: &'a [&'a Tensor<T>],
    ) -> Vec<Vec<&'a Tensor<T>>> {
        let per = self.params_per_layer();
        let mut out = Vec::with_capacity(DENSE_GCN_LAYERS + 1);
        for t in 0..DENSE_GCN_LAYERS {
            out.push(params[t * per..(t + 1) * per].to_vec());
        }
        out.push(params[DENSE_GCN_LAYERS * per..].to_vec());
        out
    }
}

/// Concatenate tensors along the trailing axis; leading dims must agree.
pub fn concat_last<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let lead = &parts[0].dims()[..parts[0].rank() - 1];
    debug_assert!(parts
        .iter()
        .all(|p| &p.dims()[..p.rank() - 1] == lead));
    let rows: usize = lead.iter().product();
    let total: usize = parts.iter().map(|p| *p.dims().last().unwrap()).sum();
    let mut dims = lead.to_vec();
    dims.push(total);
    let mut out = Tensor::<T>::zeros(&dims);
    let mut offset = 0;
    for p in parts {
        let c = *p.dims().last().unwrap();
        for r in 0..rows {
            let dst = r * total + offset;
            out.data_mut()[dst..dst + c].copy_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
        offset += c;
    }
    out
}

/// Slice a range out of the trailing axis.
pub fn slice_last<T: Real>(x: &Tensor<T>, from: usize, to: usize) -> Tensor<T> {
    let lead = &x.dims()[..x.rank() - 1];
    let c = *x.dims().last().unwrap();
    let rows: usize = lead.iter().product();
    let w = to - from;
    let mut dims = lead.to_vec();
    dims.push(w);
    let mut out = Tensor::<T>::zeros(&dims);
    for r in 0..rows {
        out.data_mut()[r * w..(r + 1) * w]
            .copy_from_slice(&x.data()[r * c + from..r * c + to]);
    }
    out
}

impl<T: Real> DiffOp<T> for DenseGcnBlock<T> {
    fn name(&self) -> &str {
        "dense_gcn_block"
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        params: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        let x = inputs[0];
        if x.rank() != 3 || x.dims()[2] != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "dense_gcn_block expects BxNx{}, got {:?}",
                self.in_features,
                x.dims()
            )));
        }
        let groups = self.split_params(params);
        let mut widths = vec![self.in_features];
        let mut cat = x.clone();
        for (t, (cheb, bn, act)) in self.layers.iter_mut().enumerate() {
            let split = groups[t].len() - 2;
            let h = cheb.forward(&[&cat], &groups[t][..split], mode)?.remove(0);
            let h = bn.forward(&[&h], &groups[t][split..], mode)?.remove(0);
            let h = act.forward(&[&h], &[], mode)?.remove(0);
            cat = concat_last(&[&cat, &h]);
            widths.push(cat.dims()[2]);
        }
        let y = self
            .fuse
            .forward(&[&cat], groups.last().unwrap(), mode)?
            .remove(0);
        self.saved = Some(DenseSaved { widths });
        Ok(vec![y])
    }

    fn backward(
        &mut self,
        out_grads: &[&Tensor<T>],
        params: &[&Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let DenseSaved { widths } = self
            .saved
            .take()
            .ok_or_else(|| missing_forward(self.name()))?;
        let groups = self.split_params(params);
        let (fuse_dx, fuse_grads) = self.fuse.backward(out_grads, groups.last().unwrap())?;
        let mut dcat = fuse_dx.into_iter().next().unwrap();
        let mut layer_grads: Vec<Vec<Tensor<T>>> = Vec::with_capacity(DENSE_GCN_LAYERS);
        for t in (0..DENSE_GCN_LAYERS).rev() {
            let before = widths[t];
            let after = widths[t + 1];
            let dh = slice_last(&dcat, before, after);
            let mut dprefix = slice_last(&dcat, 0, before);
            let (cheb, bn, act) = &mut self.layers[t];
            let split = groups[t].len() - 2;
            let (dh, _) = act.backward(&[&dh], &[])?;
            let (dh, bn_grads) = bn.backward(&[&dh[0]], &groups[t][split..])?;
            let (dx, cheb_grads) = cheb.backward(&[&dh[0]], &groups[t][..split])?;
            dprefix.add_assign(&dx[0])?;
            dcat = dprefix;
            let mut grads = cheb_grads;
            grads.extend(bn_grads);
            layer_grads.push(grads);
        }
        layer_grads.reverse();
        let mut param_grads = Vec::new();
        for g in layer_grads {
            param_grads.extend(g);
        }
        param_grads.extend(fuse_grads);
        Ok((vec![dcat], param_grads))
    }

    fn infer(&self, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let groups = self.split_params(params);
        let mut cat = inputs[0].clone();
        for (t, (cheb, bn, act)) in self.layers.iter().enumerate() {
            let split = groups[t].len() - 2;
            let h = cheb.infer(&[&cat], &groups[t][..split])?.remove(0);
            let h = bn.infer(&[&h], &groups[t][split..])?.remove(0);
            let h = act.infer(&[&h], &[])?.remove(0);
            cat = concat_last(&[&cat, &h]);
        }
        Ok(vec![self
            .fuse
            .infer(&[&cat], groups.last().unwrap())?
            .remove(0)])
    }
}
