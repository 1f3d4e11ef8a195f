use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a node on a [`Tape`]. Ids are handed out in creation order, so
/// inputs always precede the nodes computed from them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Rows of the im2col matrix: one per output pixel of every image.
    fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Conv2d { input: NodeId, kernel: NodeId, geom: ConvGeom, cols: Vec<T> },
    AddBias { x: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Affine { x: NodeId, scale: T },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Clamp { x: NodeId, lo: T, hi: T },
    LnClamped { x: NodeId, eps: T },
    Square { x: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
    GlobalAvgPool { x: NodeId },
    Dropout { x: NodeId, mask: Vec<T> },
    Reshape { x: NodeId },
    ConcatCols { a: NodeId, b: NodeId },
    StackRows { parts: Vec<NodeId> },
    Standardize { x: NodeId, mean: NodeId, sd: NodeId, floor: T },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::AddBias { .. } => "add_bias",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Clamp { .. } => "clamp",
            Op::LnClamped { .. } => "ln_clamped",
            Op::Square { .. } => "square",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Dropout { .. } => "dropout",
            Op::Reshape { .. } => "reshape",
            Op::ConcatCols { .. } => "concat_cols",
            Op::StackRows { .. } => "stack_rows",
            Op::Standardize { .. } => "standardize",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Every operation evaluates eagerly, stores its result and whatever it needs
/// for the backward pass, and returns the id of the new node. A tape is used
/// for one forward/backward pass and then dropped.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node id. Nodes that do
/// not require a gradient, or that the loss does not depend on, have none.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor with the node's shape.
    pub fn tensor(&self, id: NodeId) -> Option<Tensor<T>> {
        let g = self.get(id)?;
        Some(Tensor::from_parts(self.shapes[id.0].clone(), g.to_vec()))
    }

    /// Gradient of `id`, or zeros of its shape when the loss does not reach it.
    pub fn get_or_zeros(&self, id: NodeId) -> Vec<T> {
        match self.get(id) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); self.shapes[id.0].iter().product()],
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Register an input. It participates in differentiation when the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> NodeId {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, op: Op::Leaf, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> NodeId {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> NodeId {
        self.leaf(tensor.with_requires_grad(false))
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} (element {bad})", op.name())));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value: Tensor::from_parts(shape, data), op, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension(format!("{op}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn matrix_dims(&self, id: NodeId, op: &str) -> Result<(usize, usize)> {
        let shape = self.value(id).shape();
        match shape {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Dimension(format!("{op}: expected a matrix, got shape {shape:?}"))),
        }
    }

    /// `[r x k] . [k x c] -> [r x c]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, k) = self.matrix_dims(a, "matmul")?;
        let (k2, c) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul: inner dimensions {k} and {k2} differ")));
        }
        let mut out = vec![T::zero(); r * c];
        T::gemm(r, k, c, T::one(), self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        self.push(vec![r, c], out, Op::MatMul { a, b }, &[a, b])
    }

    /// Cross-correlation of an `H x W x Cin` input with `Kh x Kw x Cin x Cout`
    /// kernels (no kernel flip). A `B x H x W x Cin` input is a batch of
    /// images and gives a `B x OH x OW x Cout` output.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::Parameter("conv2d: stride must be at least 1".into()));
        }
        let (batch, h, w, cin) = match self.value(input).shape() {
            &[h, w, c] => (None, h, w, c),
            &[b, h, w, c] => (Some(b), h, w, c),
            s => return Err(Error::Dimension(format!("conv2d: input must be [B x] H x W x C, got {s:?}"))),
        };
        let (kh, kw, kc, cout) = match self.value(kernel).shape() {
            &[a, b, c, d] => (a, b, c, d),
            s => return Err(Error::Dimension(format!("conv2d: kernels must be Kh x Kw x Cin x Cout, got {s:?}"))),
        };
        if kc != cin {
            return Err(Error::Dimension(format!("conv2d: input has {cin} channels, kernels expect {kc}")));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Dimension(format!(
                "conv2d: {kh}x{kw} kernel larger than padded {}x{} input",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeom { batch: batch.unwrap_or(1), h, w, cin, kh, kw, cout, stride, padding, oh, ow };
        let cols = im2col(self.value(input).data(), &geom);
        let mut out = vec![T::zero(); geom.rows() * cout];
        T::gemm(geom.rows(), geom.patch_len(), cout, T::one(), &cols, false, self.value(kernel).data(), false, T::zero(), &mut out);
        let shape = match batch {
            Some(b) => vec![b, oh, ow, cout],
            None => vec![oh, ow, cout],
        };
        self.push(shape, out, Op::Conv2d { input, kernel, geom, cols }, &[input, kernel])
    }

    /// Adds a length-C vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).as_matrix();
        let b = self.value(bias);
        if b.rank() != 1 || b.numel() != cols {
            return Err(Error::Dimension(format!(
                "add_bias: bias of shape {:?} does not match last axis {cols}",
                b.shape()
            )));
        }
        let bd = b.data();
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            for (o, &bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(shape, out, Op::AddBias { x, bias }, &[x, bias])
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<NodeId> {
        self.same_shape(a, b, op.name())?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(shape, out, op, &[a, b])
    }

    fn map(&mut self, x: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> Result<NodeId> {
        let out = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(shape, out, op, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: NodeId, scale: T, shift: T) -> Result<NodeId> {
        self.map(x, Op::Affine { x, scale }, |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId> {
        self.affine(x, factor, T::zero())
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, Op::Relu { x }, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, Op::Sigmoid { x }, sigmoid)
    }

    /// Elementwise clamp into `[lo, hi]`; gradient passes only where the
    /// input lies strictly inside the interval.
    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> Result<NodeId> {
        if lo > hi {
            return Err(Error::Parameter("clamp: lo exceeds hi".into()));
        }
        self.map(x, Op::Clamp { x, lo, hi }, |v| v.max(lo).min(hi))
    }

    /// `ln(max(x, eps))`.
    pub fn ln_clamped(&mut self, x: NodeId, eps: T) -> Result<NodeId> {
        if eps <= T::zero() {
            return Err(Error::Parameter("ln_clamped: eps must be positive".into()));
        }
        self.map(x, Op::LnClamped { x, eps }, |v| v.max(eps).ln())
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, Op::Square { x }, |v| v * v)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let n = T::from_usize(v.numel()).expect("count fits");
        let s: T = v.data().iter().copied().sum();
        self.push(vec![1], vec![s / n], Op::Mean { x }, &[x])
    }

    /// Per-channel mean of an `H x W x C` tensor, giving `1 x 1 x C`; a
    /// `B x H x W x C` batch gives `B x C`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, h, w, c, shape) = match self.value(x).shape() {
            &[h, w, c] => (1, h, w, c, vec![1, 1, c]),
            &[b, h, w, c] => (b, h, w, c, vec![b, c]),
            s => return Err(Error::Dimension(format!("global_avg_pool: expected [B x] H x W x C, got {s:?}"))),
        };
        let data = self.value(x).data();
        let n = T::from_usize(h * w).expect("count fits");
        let mut out = vec![T::zero(); b * c];
        for (image, acc) in data.chunks_exact(h * w * c).zip(out.chunks_exact_mut(c)) {
            for cell in image.chunks_exact(c) {
                add_into(acc, cell);
            }
            for o in acc.iter_mut() {
                *o /= n;
            }
        }
        self.push(shape, out, Op::GlobalAvgPool { x }, &[x])
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, rng: &mut R, training: bool) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(shape, out, Op::Dropout { x, mask }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let reshaped = self.value(x).reshape(shape)?;
        // shares the buffer; no copy
        let requires_grad = self.nodes[x.0].requires_grad;
        self.nodes.push(Node { value: reshaped, op: Op::Reshape { x }, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// `[B x p] ++ [B x q] -> [B x (p + q)]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, p) = self.matrix_dims(a, "concat_cols")?;
        let (rb, q) = self.matrix_dims(b, "concat_cols")?;
        if ra != rb {
            return Err(Error::Dimension(format!("concat_cols: row counts {ra} and {rb} differ")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (p + q));
        for r in 0..ra {
            out.extend_from_slice(&da[r * p..(r + 1) * p]);
            out.extend_from_slice(&db[r * q..(r + 1) * q]);
        }
        self.push(vec![ra, p + q], out, Op::ConcatCols { a, b }, &[a, b])
    }

    /// Flatten each part and stack them as the rows of a matrix.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::Dimension("stack_rows: no parts".into()))?;
        let width = self.value(*first).numel();
        let mut out = Vec::with_capacity(width * parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.numel() != width {
                return Err(Error::Dimension(format!(
                    "stack_rows: part of {} elements, expected {width}",
                    v.numel()
                )));
            }
            out.extend_from_slice(v.data());
        }
        self.push(vec![parts.len(), width], out, Op::StackRows { parts: parts.to_vec() }, parts)
    }

    /// `(x - mean) / max(sd, floor)` along the last axis of `x`.
    pub fn standardize(&mut self, x: NodeId, mean: NodeId, sd: NodeId, floor: T) -> Result<NodeId> {
        let (rows, cols) = self.value(x).as_matrix();
        for (id, what) in [(mean, "mean"), (sd, "sd")] {
            let v = self.value(id);
            if v.rank() != 1 || v.numel() != cols {
                return Err(Error::Dimension(format!(
                    "standardize: {what} of shape {:?} does not match last axis {cols}",
                    v.shape()
                )));
            }
        }
        let (m, s) = (self.value(mean).data(), self.value(sd).data());
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push((xd[r * cols + c] - m[c]) / s[c].max(floor));
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(shape, out, Op::Standardize { x, mean, sd, floor }, &[x, mean, sd])
    }

    /// Which side of its kink every ReLU and clamp element sits on. Two
    /// evaluations with equal patterns lie on the same smooth piece of the
    /// function, so a central difference between them is meaningful.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { .. } => out.extend(node.value.data().iter().map(|&v| v > T::zero())),
                Op::Clamp { x, lo, hi } => {
                    out.extend(self.value(*x).data().iter().map(|&v| v > *lo && v < *hi));
                }
                Op::LnClamped { x, eps } => out.extend(self.value(*x).data().iter().map(|&v| v > *eps)),
                _ => {}
            }
        }
        out
    }

    /// Reverse-mode sweep from a one-element `loss` node, seeded with 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], id: NodeId) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (r, k) = self.value(*a).as_matrix();
                let c = self.value(*b).shape()[1];
                if wants(*a) {
                    let bd = self.value(*b).data();
                    let ga = self.slot(grads, *a).unwrap();
                    T::gemm(r, c, k, T::one(), g, false, bd, true, T::one(), ga);
                }
                if wants(*b) {
                    let ad = self.value(*a).data();
                    let gb = self.slot(grads, *b).unwrap();
                    T::gemm(k, r, c, T::one(), ad, true, g, false, T::one(), gb);
                }
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                let rows = geom.rows();
                if wants(*kernel) {
                    let gk = self.slot(grads, *kernel).unwrap();
                    T::gemm(geom.patch_len(), rows, geom.cout, T::one(), cols, true, g, false, T::one(), gk);
                }
                if wants(*input) {
                    let kd = self.value(*kernel).data();
                    let mut dcols = vec![T::zero(); rows * geom.patch_len()];
                    T::gemm(rows, geom.cout, geom.patch_len(), T::one(), g, false, kd, true, T::zero(), &mut dcols);
                    let gi = self.slot(grads, *input).unwrap();
                    col2im_add(&dcols, geom, gi);
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let c = gb.len();
                    for row in g.chunks_exact(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub { a, b } => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    let bd = self.value(*b).data();
                    let ga = self.slot(grads, *a).unwrap();
                    for ((o, &v), &y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += v * y;
                    }
                }
                if wants(*b) {
                    let ad = self.value(*a).data();
                    let gb = self.slot(grads, *b).unwrap();
                    for ((o, &v), &x) in gb.iter_mut().zip(g).zip(ad) {
                        *o += v * x;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o += *scale * v;
                    }
                }
            }
            Op::Relu { x } => {
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &v), &yv) in gx.iter_mut().zip(g).zip(y) {
                        if yv > T::zero() {
                            *o += v;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &v), &s) in gx.iter_mut().zip(g).zip(y) {
                        *o += v * s * (T::one() - s);
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if wants(*x) {
                    let xd = self.value(*x).data();
                    let gx = self.slot(grads, *x).unwrap();
                    for ((o, &v), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > *lo && xv < *hi {
                            *o += v;
                        }
                    }
                }
            }
            Op::LnClamped { x, eps } => {
                if wants(*x) {
                    let xd = self.value(*x).data();
                    let gx = self.slot(grads, *x).unwrap();
                    for ((o, &v), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > *eps {
                            *o += v / xv;
                        }
                    }
                }
            }
            Op::Square { x } => {
                if wants(*x) {
                    let xd = self.value(*x).data();
                    let gx = self.slot(grads, *x).unwrap();
                    let two = T::one() + T::one();
                    for ((o, &v), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        *o += two * xv * v;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Mean { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let share = g[0] / T::from_usize(gx.len()).expect("count fits");
                    for o in gx.iter_mut() {
                        *o += share;
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let c = *node.value.shape().last().expect("nonempty shape");
                    let batch = g.len() / c;
                    let per_image = gx.len() / batch;
                    let share = T::one() / T::from_usize(per_image / c).expect("count fits");
                    for (image, gi) in gx.chunks_exact_mut(per_image).zip(g.chunks_exact(c)) {
                        for cell in image.chunks_exact_mut(c) {
                            for (o, &v) in cell.iter_mut().zip(gi) {
                                *o += v * share;
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &v), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += v * m;
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
            }
            Op::ConcatCols { a, b } => {
                let (rows, p) = self.value(*a).as_matrix();
                let q = self.value(*b).as_matrix().1;
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..rows {
                        add_into(&mut ga[r * p..(r + 1) * p], &g[r * (p + q)..r * (p + q) + p]);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for r in 0..rows {
                        add_into(&mut gb[r * q..(r + 1) * q], &g[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                }
            }
            Op::StackRows { parts } => {
                let width = node.value.shape()[1];
                for (r, &p) in parts.iter().enumerate() {
                    if let Some(gp) = self.slot(grads, p) {
                        add_into(gp, &g[r * width..(r + 1) * width]);
                    }
                }
            }
            Op::Standardize { x, mean, sd, floor } => {
                let cols = self.value(*mean).numel();
                let m = self.value(*mean).data();
                let s = self.value(*sd).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for (idx, (o, &v)) in gx.iter_mut().zip(g).enumerate() {
                        *o += v / s[idx % cols].max(*floor);
                    }
                }
                if let Some(gm) = self.slot(grads, *mean) {
                    for (idx, &v) in g.iter().enumerate() {
                        let c = idx % cols;
                        gm[c] -= v / s[c].max(*floor);
                    }
                }
                if wants(*sd) {
                    let xd = self.value(*x).data();
                    let gs = self.slot(grads, *sd).unwrap();
                    for (idx, &v) in g.iter().enumerate() {
                        let c = idx % cols;
                        if s[c] > *floor {
                            gs[c] -= v * (xd[idx] - m[c]) / (s[c] * s[c]);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let image_len = g.h * g.w * g.cin;
    let mut cols = vec![T::zero(); g.rows() * patch];
    for (input, cols) in input.chunks_exact(image_len).zip(cols.chunks_exact_mut(g.oh * g.ow * patch)) {
        im2col_image(input, g, cols);
    }
    cols
}

fn im2col_image<T: Scalar>(input: &[T], g: &ConvGeom, cols: &mut [T]) {
    let patch = g.patch_len();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut cols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.kw + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&input[src..src + g.cin]);
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(dcols: &[T], g: &ConvGeom, dinput: &mut [T]) {
    let image_len = g.h * g.w * g.cin;
    let cols_len = g.oh * g.ow * g.patch_len();
    for (dcols, dinput) in dcols.chunks_exact(cols_len).zip(dinput.chunks_exact_mut(image_len)) {
        col2im_image(dcols, g, dinput);
    }
}

fn col2im_image<T: Scalar>(dcols: &[T], g: &ConvGeom, dinput: &mut [T]) {
    let patch = g.patch_len();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &dcols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = (ky * g.kw + kx) * g.cin;
                    add_into(&mut dinput[dst..dst + g.cin], &row[src..src + g.cin]);
                }
            }
        }
    }
}
