//! Neural-network layer operations recorded on the tape.

use super::linalg::{gemm_nn, gemm_tn};
use super::tape::transpose_data;
use super::tape::{check, Node, Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// Numerical floor inside the cross-entropy logarithm.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;

/// Weights of a fully connected layer: `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self, AutodiffError> {
        if weight.rank() != 2 || bias.rank() != 1 || weight.shape()[0] != bias.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "dense_params",
                detail: format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

struct ConvDims {
    batch: usize,
    in_channels: usize,
    in_h: usize,
    in_w: usize,
    filters: usize,
    kernel_h: usize,
    kernel_w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn columns(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Lays the input out as a `[patch, columns]` matrix so convolution becomes
/// one GEMM; out-of-bounds taps read zero.
fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let cols = d.columns();
    let mut out = vec![0.0; d.patch() * cols];
    for n in 0..d.batch {
        let x_img = &x[n * d.in_channels * d.in_h * d.in_w..];
        for oh in 0..d.out_h {
            for ow in 0..d.out_w {
                let col = (n * d.out_h + oh) * d.out_w + ow;
                for c in 0..d.in_channels {
                    let x_chan = &x_img[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
                    for kh in 0..d.kernel_h {
                        let ih = (oh * d.stride + kh) as isize - d.pad as isize;
                        if ih < 0 || ih >= d.in_h as isize {
                            continue;
                        }
                        let row_base = (c * d.kernel_h + kh) * d.kernel_w;
                        for kw in 0..d.kernel_w {
                            let iw = (ow * d.stride + kw) as isize - d.pad as isize;
                            if iw < 0 || iw >= d.in_w as isize {
                                continue;
                            }
                            out[(row_base + kw) * cols + col] =
                                x_chan[ih as usize * d.in_w + iw as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatters a `[patch, columns]` gradient back onto the input layout,
/// accumulating where patches overlap.
fn col2im(cols_grad: &[f64], d: &ConvDims) -> Vec<f64> {
    let cols = d.columns();
    let mut out = vec![0.0; d.batch * d.in_channels * d.in_h * d.in_w];
    for n in 0..d.batch {
        let base = n * d.in_channels * d.in_h * d.in_w;
        for oh in 0..d.out_h {
            for ow in 0..d.out_w {
                let col = (n * d.out_h + oh) * d.out_w + ow;
                for c in 0..d.in_channels {
                    for kh in 0..d.kernel_h {
                        let ih = (oh * d.stride + kh) as isize - d.pad as isize;
                        if ih < 0 || ih >= d.in_h as isize {
                            continue;
                        }
                        let row_base = (c * d.kernel_h + kh) * d.kernel_w;
                        for kw in 0..d.kernel_w {
                            let iw = (ow * d.stride + kw) as isize - d.pad as isize;
                            if iw < 0 || iw >= d.in_w as isize {
                                continue;
                            }
                            out[base + (c * d.in_h + ih as usize) * d.in_w + iw as usize] +=
                                cols_grad[(row_base + kw) * cols + col];
                        }
                    }
                }
            }
        }
    }
    out
}

impl Tape {
    /// 2-D cross-correlation of `x: [N, C, H, W]` with filters
    /// `w: [F, C, KH, KW]`, zero padding `pad` on each side.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let (vx, vw) = (self.value(x), self.value(w));
        check!(vx.rank() == 4 && vw.rank() == 4, "conv2d", "{:?} with {:?}", vx.shape(), vw.shape());
        check!(stride >= 1, "conv2d", "stride must be >= 1");
        let (batch, in_channels, in_h, in_w) =
            (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (filters, wc, kernel_h, kernel_w) =
            (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
        check!(wc == in_channels, "conv2d", "input channels {in_channels} vs kernel {wc}");
        check!(
            kernel_h <= in_h + 2 * pad && kernel_w <= in_w + 2 * pad,
            "conv2d",
            "kernel {kernel_h}x{kernel_w} larger than padded input {}x{}",
            in_h + 2 * pad,
            in_w + 2 * pad
        );
        let out_h = (in_h + 2 * pad - kernel_h) / stride + 1;
        let out_w = (in_w + 2 * pad - kernel_w) / stride + 1;
        let dims = ConvDims {
            batch,
            in_channels,
            in_h,
            in_w,
            filters,
            kernel_h,
            kernel_w,
            out_h,
            out_w,
            stride,
            pad,
        };

        let col = im2col(vx.data(), &dims);
        let cols = dims.columns();
        let mut out_mat = vec![0.0; filters * cols];
        gemm_nn(filters, dims.patch(), cols, vw.data(), &col, &mut out_mat);
        // out_mat is [F, N*OH*OW]; reorder to [N, F, OH, OW]
        let hw = out_h * out_w;
        let mut out = vec![0.0; batch * filters * hw];
        for f in 0..filters {
            for n in 0..batch {
                out[(n * filters + f) * hw..(n * filters + f + 1) * hw]
                    .copy_from_slice(&out_mat[f * cols + n * hw..f * cols + (n + 1) * hw]);
            }
        }
        let value = Tensor::new(vec![batch, filters, out_h, out_w], out)?;
        let rg = self.requires_grad_of(x) || self.requires_grad_of(w);
        let vjp = rg.then(|| {
            // the closure keeps the forward's column matrix for backward
            Box::new(move |nodes: &[Node], g: &[f64]| {
                // regroup upstream to [F, N*OH*OW]
                let mut g_mat = vec![0.0; dims.filters * cols];
                for f in 0..dims.filters {
                    for n in 0..dims.batch {
                        g_mat[f * cols + n * hw..f * cols + (n + 1) * hw]
                            .copy_from_slice(&g[(n * dims.filters + f) * hw..(n * dims.filters + f + 1) * hw]);
                    }
                }
                let mut contributions = Vec::with_capacity(2);
                if nodes_require(nodes, w) {
                    // dW = dOut * col^T, computed against a transposed copy
                    // so the inner GEMM loop stays a vectorizable axpy
                    let col_t = transpose_data(&col, dims.patch(), cols);
                    let mut dw = vec![0.0; dims.filters * dims.patch()];
                    gemm_nn(dims.filters, cols, dims.patch(), &g_mat, &col_t, &mut dw);
                    contributions.push((w.0, dw));
                }
                if nodes_require(nodes, x) {
                    // dcol = W^T * dOut, then scatter back
                    let mut dcol = vec![0.0; dims.patch() * cols];
                    gemm_tn(dims.filters, dims.patch(), cols, nodes[w.0].value().data(), &g_mat, &mut dcol);
                    contributions.push((x.0, col2im(&dcol, &dims)));
                }
                contributions
            }) as Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>
        });
        Ok(self.push_node(value, rg, vjp))
    }

    /// Adds a per-channel bias to an `[N, C, H, W]` tensor.
    pub fn bias_nchw(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        check!(vx.rank() == 4 && vb.rank() == 1, "bias_nchw", "{:?} + {:?}", vx.shape(), vb.shape());
        let (batch, channels, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        check!(vb.shape()[0] == channels, "bias_nchw", "channels {channels} vs bias {}", vb.shape()[0]);
        let hw = h * w;
        let mut data = vx.data().to_vec();
        for n in 0..batch {
            for c in 0..channels {
                let b = vb.data()[c];
                for v in &mut data[(n * channels + c) * hw..(n * channels + c + 1) * hw] {
                    *v += b;
                }
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.requires_grad_of(x) || self.requires_grad_of(bias);
        let vjp = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                let mut db = vec![0.0; channels];
                for n in 0..batch {
                    for (c, acc) in db.iter_mut().enumerate() {
                        *acc += g[(n * channels + c) * hw..(n * channels + c + 1) * hw]
                            .iter()
                            .sum::<f64>();
                    }
                }
                vec![(x.0, g.to_vec()), (bias.0, db)]
            }) as Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>
        });
        Ok(self.push_node(value, rg, vjp))
    }

    /// Max pooling over `window` with the given stride and zero-free padding:
    /// padded positions never win the max. Ties route the gradient to the
    /// first covered cell in scan order.
    pub fn maxpool2d(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        self.pool2d(x, window, stride, pad, PoolMode::Max)
    }

    /// Average pooling; padded positions count as zeros in the mean.
    pub fn avgpool2d(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        self.pool2d(x, window, stride, pad, PoolMode::Avg)
    }

    pub fn pool2d(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: usize,
        pad: usize,
        mode: PoolMode,
    ) -> Result<Var, AutodiffError> {
        let vx = self.value(x);
        check!(vx.rank() == 4, "pool2d", "needs [N,C,H,W], got {:?}", vx.shape());
        check!(stride >= 1, "pool2d", "stride must be >= 1");
        let (kh, kw) = window;
        check!(kh >= 1 && kw >= 1, "pool2d", "window must be nonempty");
        let (batch, channels, in_h, in_w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        check!(
            kh <= in_h + 2 * pad && kw <= in_w + 2 * pad,
            "pool2d",
            "window {kh}x{kw} larger than padded input"
        );
        check!(pad < kh && pad < kw, "pool2d", "padding must be smaller than the window");
        let out_h = (in_h + 2 * pad - kh) / stride + 1;
        let out_w = (in_w + 2 * pad - kw) / stride + 1;
        let hw_in = in_h * in_w;
        let hw_out = out_h * out_w;
        let mut data = vec![0.0; batch * channels * hw_out];
        // argmax positions (flat input indices) for max-mode backward
        let mut argmax = vec![0usize; if matches!(mode, PoolMode::Max) { data.len() } else { 0 }];
        for n in 0..batch {
            for c in 0..channels {
                let chan = &vx.data()[(n * channels + c) * hw_in..(n * channels + c + 1) * hw_in];
                for oh in 0..out_h {
                    for ow in 0..out_w {
                        let out_idx = ((n * channels + c) * out_h + oh) * out_w + ow;
                        match mode {
                            PoolMode::Max => {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for kr in 0..kh {
                                    let ih = (oh * stride + kr) as isize - pad as isize;
                                    if ih < 0 || ih >= in_h as isize {
                                        continue;
                                    }
                                    for kc in 0..kw {
                                        let iw = (ow * stride + kc) as isize - pad as isize;
                                        if iw < 0 || iw >= in_w as isize {
                                            continue;
                                        }
                                        let idx = ih as usize * in_w + iw as usize;
                                        if chan[idx] > best {
                                            best = chan[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                data[out_idx] = best;
                                argmax[out_idx] = (n * channels + c) * hw_in + best_idx;
                            }
                            PoolMode::Avg => {
                                let mut acc = 0.0;
                                for kr in 0..kh {
                                    let ih = (oh * stride + kr) as isize - pad as isize;
                                    if ih < 0 || ih >= in_h as isize {
                                        continue;
                                    }
                                    for kc in 0..kw {
                                        let iw = (ow * stride + kc) as isize - pad as isize;
                                        if iw < 0 || iw >= in_w as isize {
                                            continue;
                                        }
                                        acc += chan[ih as usize * in_w + iw as usize];
                                    }
                                }
                                data[out_idx] = acc / (kh * kw) as f64;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, channels, out_h, out_w], data)?;
        let rg = self.requires_grad_of(x);
        let total_in = batch * channels * hw_in;
        let vjp = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                let mut dx = vec![0.0; total_in];
                match mode {
                    PoolMode::Max => {
                        for (gi, &gv) in g.iter().enumerate() {
                            dx[argmax[gi]] += gv;
                        }
                    }
                    PoolMode::Avg => {
                        let inv = 1.0 / (kh * kw) as f64;
                        for n in 0..batch {
                            for c in 0..channels {
                                for oh in 0..out_h {
                                    for ow in 0..out_w {
                                        let gv = g[((n * channels + c) * out_h + oh) * out_w + ow] * inv;
                                        for kr in 0..kh {
                                            let ih = (oh * stride + kr) as isize - pad as isize;
                                            if ih < 0 || ih >= in_h as isize {
                                                continue;
                                            }
                                            for kc in 0..kw {
                                                let iw = (ow * stride + kc) as isize - pad as isize;
                                                if iw < 0 || iw >= in_w as isize {
                                                    continue;
                                                }
                                                dx[(n * channels + c) * hw_in
                                                    + ih as usize * in_w
                                                    + iw as usize] += gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(x.0, dx)]
            }) as Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>
        });
        Ok(self.push_node(value, rg, vjp))
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        check!(!parts.is_empty(), "concat_channels", "no inputs");
        let first = self.value(parts[0]).shape().to_vec();
        check!(first.len() == 4, "concat_channels", "needs [N,C,H,W], got {first:?}");
        let (batch, h, w) = (first[0], first[2], first[3]);
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            check!(
                s.len() == 4 && s[0] == batch && s[2] == h && s[3] == w,
                "concat_channels",
                "shape {s:?} incompatible with {first:?}"
            );
            channels.push(s[1]);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut data = vec![0.0; batch * total * hw];
        let mut c0 = 0;
        for (&p, &c) in parts.iter().zip(&channels) {
            let vp = self.value(p);
            for n in 0..batch {
                let src = &vp.data()[n * c * hw..(n + 1) * c * hw];
                data[(n * total + c0) * hw..(n * total + c0 + c) * hw].copy_from_slice(src);
            }
            c0 += c;
        }
        let value = Tensor::new(vec![batch, total, h, w], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = parts.iter().any(|&p| self.requires_grad_of(p));
        let vjp = rg.then(|| {
            let channels = channels.clone();
            Box::new(move |_: &[Node], g: &[f64]| {
                let mut out = Vec::with_capacity(ids.len());
                let mut c0 = 0;
                for (&id, &c) in ids.iter().zip(&channels) {
                    let mut part = vec![0.0; batch * c * hw];
                    for n in 0..batch {
                        part[n * c * hw..(n + 1) * c * hw]
                            .copy_from_slice(&g[(n * total + c0) * hw..(n * total + c0 + c) * hw]);
                    }
                    out.push((id, part));
                    c0 += c;
                }
                out
            }) as Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>
        });
        Ok(self.push_node(value, rg, vjp))
    }

    /// Per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_average_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let vx = self.value(x);
        check!(vx.rank() == 4, "global_average_pool", "needs [N,C,H,W], got {:?}", vx.shape());
        let (batch, channels, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        check!(h >= 1 && w >= 1, "global_average_pool", "empty spatial grid");
        let hw = h * w;
        let mut data = vec![0.0; batch * channels];
        for (i, chunk) in vx.data().chunks_exact(hw).enumerate() {
            data[i] = chunk.iter().sum::<f64>() / hw as f64;
        }
        let value = Tensor::new(vec![batch, channels], data)?;
        let rg = self.requires_grad_of(x);
        let total_in = batch * channels * hw;
        let vjp = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                let mut dx = vec![0.0; total_in];
                let inv = 1.0 / hw as f64;
                for (dx_chunk, &gv) in dx.chunks_exact_mut(hw).zip(g) {
                    dx_chunk.fill(gv * inv);
                }
                vec![(x.0, dx)]
            }) as Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>
        });
        Ok(self.push_node(value, rg, vjp))
    }

    /// Fully connected layer `x * W^T + b` for `x: [N, in]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (vx, vw) = (self.value(x), self.value(weight));
        check!(
            vx.rank() == 2 && vw.rank() == 2 && vx.shape()[1] == vw.shape()[1],
            "dense",
            "input {:?} with weight {:?}",
            vx.shape(),
            vw.shape()
        );
        let wt = self.transpose(weight)?;
        let prod = self.matmul(x, wt)?;
        self.add_row_bias(prod, bias)
    }

    /// Inverted dropout. In training, each element is zeroed with probability
    /// `rate` and survivors scale by `1/(1-rate)`; in inference the input is
    /// returned untouched.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut impl rand::Rng,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::DropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let vx = self.value(x);
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..vx.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let data = vx.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.requires_grad_of(x);
        let vjp = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                vec![(x.0, g.iter().zip(&mask).map(|(gv, m)| gv * m).collect())]
            }) as Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>
        });
        Ok(self.push_node(value, rg, vjp))
    }

    /// Mean over the batch of `-sum_i y_i log(max(p_i, eps))` for probability
    /// rows `probs: [N, C]` against one-hot labels of the same shape.
    pub fn cross_entropy(&mut self, probs: Var, onehot: Var) -> Result<Var, AutodiffError> {
        let (vp, vy) = (self.value(probs), self.value(onehot));
        check!(vp.rank() == 2 && vp.shape() == vy.shape(), "cross_entropy", "{:?} vs {:?}", vp.shape(), vy.shape());
        let (batch, classes) = (vp.shape()[0], vp.shape()[1]);
        for (i, row) in vp.data().chunks_exact(classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(AutodiffError::NotProbabilities { row: i, sum });
            }
        }
        for (i, row) in vy.data().chunks_exact(classes).enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != classes {
                return Err(AutodiffError::NotOneHot { row: i });
            }
        }
        let mut total = 0.0;
        for (p_row, y_row) in vp.data().chunks_exact(classes).zip(vy.data().chunks_exact(classes)) {
            for (p, y) in p_row.iter().zip(y_row) {
                if *y != 0.0 {
                    total -= y * p.max(CROSS_ENTROPY_EPS).ln();
                }
            }
        }
        let value = Tensor::scalar(total / batch as f64);
        let rg = self.requires_grad_of(probs);
        let vjp = rg.then(|| {
            Box::new(move |nodes: &[Node], g: &[f64]| {
                let p = nodes[probs.0].value().data();
                let y = nodes[onehot.0].value().data();
                let scale = g[0] / batch as f64;
                let dp = p
                    .iter()
                    .zip(y)
                    .map(|(&pv, &yv)| {
                        if yv != 0.0 && pv > CROSS_ENTROPY_EPS {
                            -scale * yv / pv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(probs.0, dp)]
            }) as Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>
        });
        Ok(self.push_node(value, rg, vjp))
    }
}

/// Pooling reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

fn nodes_require(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad()
}
