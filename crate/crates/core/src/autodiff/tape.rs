//! Define-by-run gradient tape.
//!
//! Operations execute eagerly and append a node per result; [`Tape::backward`]
//! replays the recorded list in reverse, accumulating vector-Jacobian
//! products. A tape is confined to one thread; parallel evaluation means one
//! tape per thread.

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type Vjp = Box<dyn Fn(&[Node], &[f64]) -> Vec<(usize, Vec<f64>)>>;

pub(crate) struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Persistent gradient accumulator; repeated backward calls add into it.
    grad: Option<Vec<f64>>,
    vjp: Option<Vjp>,
}

impl Node {
    pub(crate) fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that does not need gradients (inputs, labels, masks).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    /// Records a trainable leaf; its gradient buffer persists across
    /// backward calls.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a `requires_grad` node, as a tensor shaped
    /// like its value. `None` for constants.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value shape")
        })
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = &mut node.grad {
                g.fill(0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, vjp: Option<Vjp>) -> Var {
        // persistent accumulators exist on leaves only; interior gradients
        // flow through transient buffers during backward
        let grad = (requires_grad && vjp.is_none()).then(|| vec![0.0; value.numel()]);
        self.nodes.push(Node { value, requires_grad, grad, vjp });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_node(&mut self, value: Tensor, requires_grad: bool, vjp: Option<Vjp>) -> Var {
        self.push(value, requires_grad, vjp)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn requires_grad_of(&self, v: Var) -> bool {
        self.requires(v)
    }

    /// Reverse sweep from a scalar loss. Gradients of every `requires_grad`
    /// node are *added* into their persistent buffers, so repeated calls
    /// without [`Tape::zero_grad`] accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(AutodiffError::LossNotScalar(self.nodes[loss.0].value.shape().to_vec()));
        }
        let mut flowing: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        flowing[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(upstream) = flowing[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let contributions = match &self.nodes[id].vjp {
                Some(vjp) => vjp(&self.nodes, &upstream),
                None => Vec::new(),
            };
            for (parent, contrib) in contributions {
                debug_assert!(parent < id, "tape must be topologically ordered");
                if !self.nodes[parent].requires_grad {
                    continue;
                }
                match &mut flowing[parent] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot => *slot = Some(contrib),
                }
            }
            if let Some(acc) = &mut self.nodes[id].grad {
                for (a, u) in acc.iter_mut().zip(&upstream) {
                    *a += u;
                }
            }
        }
        Ok(())
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

macro_rules! check {
    ($cond:expr, $op:literal, $($fmt:tt)*) => {
        if !$cond {
            return Err(shape_err($op, format!($($fmt)*)));
        }
    };
}
pub(crate) use check;

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        check!(va.shape() == vb.shape(), "add", "{:?} vs {:?}", va.shape(), vb.shape());
        let data = va.iter().zip(vb.iter()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                vec![(a.0, g.to_vec()), (b.0, g.to_vec())]
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        check!(va.shape() == vb.shape(), "sub", "{:?} vs {:?}", va.shape(), vb.shape());
        let data = va.iter().zip(vb.iter()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                vec![(a.0, g.to_vec()), (b.0, g.iter().map(|v| -v).collect())]
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        check!(va.shape() == vb.shape(), "mul", "{:?} vs {:?}", va.shape(), vb.shape());
        let data = va.iter().zip(vb.iter()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |nodes: &[Node], g: &[f64]| {
                let va = nodes[a.0].value.data();
                let vb = nodes[b.0].value.data();
                vec![
                    (a.0, g.iter().zip(vb).map(|(gv, y)| gv * y).collect()),
                    (b.0, g.iter().zip(va).map(|(gv, x)| gv * x).collect()),
                ]
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let value = Tensor::new(va.shape().to_vec(), va.iter().map(|x| x * c).collect())
            .expect("same shape");
        let rg = self.requires(a);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                vec![(a.0, g.iter().map(|v| v * c).collect())]
            }) as Vjp
        });
        self.push(value, rg, vjp)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let total: f64 = va.iter().sum();
        let n = va.numel();
        let rg = self.requires(a);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| vec![(a.0, vec![g[0]; n])]) as Vjp
        });
        self.push(Tensor::scalar(total), rg, vjp)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = Tensor::new(va.shape().to_vec(), va.iter().map(|&x| x.max(0.0)).collect())
            .expect("same shape");
        let rg = self.requires(a);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |nodes: &[Node], g: &[f64]| {
                let x = nodes[a.0].value.data();
                // subgradient at exactly 0 is 0
                vec![(a.0, g.iter().zip(x).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect())]
            }) as Vjp
        });
        self.push(value, rg, vjp)
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        check!(va.rank() >= 1, "softmax", "needs rank >= 1, got scalar");
        let width = *va.shape().last().unwrap();
        check!(width >= 1, "softmax", "last axis must be nonempty");
        let mut data = Vec::with_capacity(va.numel());
        for row in va.data().chunks_exact(width) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / denom));
        }
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.requires(a);
        let out_id = self.nodes.len();
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |nodes: &[Node], g: &[f64]| {
                let y = nodes[out_id].value.data();
                let mut dx = vec![0.0; y.len()];
                for ((dx_row, y_row), g_row) in
                    dx.chunks_exact_mut(width).zip(y.chunks_exact(width)).zip(g.chunks_exact(width))
                {
                    let dot: f64 = y_row.iter().zip(g_row).map(|(yv, gv)| yv * gv).sum();
                    for ((d, &yv), &gv) in dx_row.iter_mut().zip(y_row).zip(g_row) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![(a.0, dx)]
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        check!(va.rank() == 2 && vb.rank() == 2, "matmul", "{:?} x {:?}", va.shape(), vb.shape());
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let (k2, n) = (vb.shape()[0], vb.shape()[1]);
        check!(k == k2, "matmul", "inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, va.data(), vb.data(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires(a) || self.requires(b);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |nodes: &[Node], g: &[f64]| {
                let mut contributions = Vec::with_capacity(2);
                if nodes[a.0].requires_grad {
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    gemm_nt(m, n, k, g, nodes[b.0].value.data(), &mut da);
                    contributions.push((a.0, da));
                }
                if nodes[b.0].requires_grad {
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    gemm_tn(m, k, n, nodes[a.0].value.data(), g, &mut db);
                    contributions.push((b.0, db));
                }
                contributions
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        check!(va.rank() == 2, "transpose", "needs rank 2, got {:?}", va.shape());
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let value = Tensor::new(vec![n, m], transpose_data(va.data(), m, n))?;
        let rg = self.requires(a);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                vec![(a.0, transpose_data(g, n, m))]
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        let expected: usize = shape.iter().product();
        check!(expected == va.numel(), "reshape", "{:?} -> {:?}", va.shape(), shape);
        let value = Tensor::new(shape, va.data().to_vec())?;
        let rg = self.requires(a);
        let vjp: Option<Vjp> =
            rg.then(|| Box::new(move |_: &[Node], g: &[f64]| vec![(a.0, g.to_vec())]) as Vjp);
        Ok(self.push(value, rg, vjp))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        check!(!parts.is_empty(), "concat_cols", "no inputs");
        let rows = self.value(parts[0]).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let vp = self.value(p);
            check!(vp.rank() == 2 && vp.shape()[0] == rows, "concat_cols", "shape {:?}", vp.shape());
            widths.push(vp.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut col0 = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let vp = self.value(p);
            for r in 0..rows {
                data[r * total + col0..r * total + col0 + w]
                    .copy_from_slice(&vp.data()[r * w..(r + 1) * w]);
            }
            col0 += w;
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = parts.iter().any(|&p| self.requires(p));
        let vjp: Option<Vjp> = rg.then(|| {
            let widths = widths.clone();
            Box::new(move |_: &[Node], g: &[f64]| {
                let mut out = Vec::with_capacity(ids.len());
                let mut col0 = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    let mut part = vec![0.0; rows * w];
                    for r in 0..rows {
                        part[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + col0..r * total + col0 + w]);
                    }
                    out.push((id, part));
                    col0 += w;
                }
                out
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    /// Extracts element `index` of the leading axis, dropping that axis.
    pub fn slice_first(&mut self, a: Var, index: usize) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        check!(va.rank() >= 1, "slice_first", "needs rank >= 1");
        let lead = va.shape()[0];
        check!(index < lead, "slice_first", "index {index} out of {lead}");
        let rest_shape: Vec<usize> = va.shape()[1..].to_vec();
        let chunk = va.numel() / lead;
        let data = va.data()[index * chunk..(index + 1) * chunk].to_vec();
        let value = Tensor::new(rest_shape, data)?;
        let total = va.numel();
        let rg = self.requires(a);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                let mut dx = vec![0.0; total];
                dx[index * chunk..(index + 1) * chunk].copy_from_slice(g);
                vec![(a.0, dx)]
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack_first(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        check!(!parts.is_empty(), "stack_first", "no inputs");
        let inner = self.value(parts[0]).shape().to_vec();
        let chunk: usize = inner.iter().product();
        let mut data = Vec::with_capacity(chunk * parts.len());
        for &p in parts {
            let vp = self.value(p);
            check!(vp.shape() == inner.as_slice(), "stack_first", "shape {:?}", vp.shape());
            data.extend_from_slice(vp.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let value = Tensor::new(shape, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = parts.iter().any(|&p| self.requires(p));
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                ids.iter()
                    .enumerate()
                    .map(|(i, &id)| (id, g[i * chunk..(i + 1) * chunk].to_vec()))
                    .collect()
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }

    /// Adds a length-`D` bias vector to every row of an `[N, D]` tensor.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        check!(vx.rank() == 2 && vb.rank() == 1, "add_row_bias", "{:?} + {:?}", vx.shape(), vb.shape());
        let (n, d) = (vx.shape()[0], vx.shape()[1]);
        check!(vb.shape()[0] == d, "add_row_bias", "width {d} vs bias {}", vb.shape()[0]);
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (v, b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(vec![n, d], data)?;
        let rg = self.requires(x) || self.requires(bias);
        let vjp: Option<Vjp> = rg.then(|| {
            Box::new(move |_: &[Node], g: &[f64]| {
                let mut db = vec![0.0; d];
                for row in g.chunks_exact(d) {
                    for (acc, gv) in db.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                vec![(x.0, g.to_vec()), (bias.0, db)]
            }) as Vjp
        });
        Ok(self.push(value, rg, vjp))
    }
}

pub(crate) fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
