//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] borrows a parameter store for the duration of one forward
//! pass. Every primitive call appends a node holding its forward value, so
//! node ids are already in topological order and the backward pass is a
//! single reverse sweep.

use super::kernels::{axpy, dot, matvec};
use super::{sigmoid, GradStore, ParamId, Params, Real, Tensor, SELU_ALPHA, SELU_SCALE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    Lookup { param: ParamId, row: usize },
    MatVec { w: NodeId, x: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    OneMinus(NodeId),
    Concat(Vec<NodeId>),
    Slice { input: NodeId, start: usize },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Selu(NodeId),
    Softmax(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, gold: usize, probs: Vec<F> },
    Dropout { input: NodeId, mask: Vec<F> },
    Sum(Vec<NodeId>),
    SumAll(NodeId),
    Stack(Vec<NodeId>),
    Conv1d { input: NodeId, weight: NodeId, bias: NodeId, width: usize },
    MaxOverTime { input: NodeId, winners: Vec<usize> },
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    shape: Vec<usize>,
    // Empty for parameter nodes, whose value lives in the store.
    value: Vec<F>,
}

impl<F> Node<F> {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

pub struct Graph<'p, F: Real> {
    params: &'p Params<F>,
    nodes: Vec<Node<F>>,
    param_nodes: Vec<Option<NodeId>>,
    backward_done: bool,
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p Params<F>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; params.len()],
            backward_done: false,
        }
    }

    pub fn params(&self) -> &'p Params<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(p) => self.params.get(p).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> F {
        self.value(id)[0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<F> {
        Tensor::new(self.shape(id).to_vec(), self.value(id).to_vec())
            .expect("node shapes are consistent")
    }

    fn push(&mut self, op: Op<F>, shape: Vec<usize>, value: Vec<F>) -> NodeId {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node { op, shape, value });
        self.backward_done = false;
        NodeId(self.nodes.len() - 1)
    }

    fn vec_len(&self, op: &'static str, id: NodeId) -> Result<usize> {
        match self.shape(id) {
            [n] => Ok(*n),
            s => Err(mismatch(op, &[s])),
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(self.shape(a).to_vec())
    }

    /// Constant leaf; receives no gradient outside the graph.
    pub fn input(&mut self, t: Tensor<F>) -> NodeId {
        let shape = t.shape().to_vec();
        self.push(Op::Leaf, shape, t.into_data())
    }

    pub fn vector(&mut self, v: Vec<F>) -> NodeId {
        self.input(Tensor::vector(v))
    }

    /// Parameter reference. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let shape = self.params.get(id).shape().to_vec();
        let n = self.push(Op::Param(id), shape, Vec::new());
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// Row `row` of a 2-D parameter (embedding lookup).
    pub fn lookup(&mut self, param: ParamId, row: usize) -> Result<NodeId> {
        let t = self.params.get(param);
        if t.shape().len() != 2 || row >= t.shape()[0] {
            return Err(mismatch("lookup", &[t.shape(), &[row]]));
        }
        let value = t.row(row).to_vec();
        Ok(self.push(Op::Lookup { param, row }, vec![value.len()], value))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = match self.shape(w) {
            [r, c] => (*r, *c),
            s => return Err(mismatch("matvec", &[s, self.shape(x)])),
        };
        if self.shape(x) != [cols] {
            return Err(mismatch("matvec", &[self.shape(w), self.shape(x)]));
        }
        let mut out = vec![F::zero(); rows];
        matvec(self.value(w), self.value(x), &mut out);
        Ok(self.push(Op::MatVec { w, x }, vec![rows], out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(Op::Add(a, b), shape, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(Op::Mul(a, b), shape, out))
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, s), shape, out)
    }

    /// `1 - a`, element-wise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|&x| F::one() - x).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::OneMinus(a), shape, out)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut out = Vec::new();
        for &p in parts {
            self.vec_len("concat", p)?;
            out.extend_from_slice(self.value(p));
        }
        if out.is_empty() {
            return Err(mismatch("concat", &[]));
        }
        let n = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), vec![n], out))
    }

    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.vec_len("slice", input)?;
        if len == 0 || start + len > n {
            return Err(mismatch("slice", &[&[n], &[start, len]]));
        }
        let out = self.value(input)[start..start + len].to_vec();
        Ok(self.push(Op::Slice { input, start }, vec![len], out))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape, out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|&x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Tanh(a), shape, out)
    }

    pub fn selu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|&x| super::selu(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Selu(a), shape, out)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.vec_len("softmax", a)?;
        let out = super::softmax(self.value(a));
        Ok(self.push(Op::Softmax(a), vec![n], out))
    }

    /// `-log softmax(logits)[gold]` through a fused log-softmax.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let n = self.vec_len("softmax_cross_entropy", logits)?;
        if gold >= n {
            return Err(mismatch("softmax_cross_entropy", &[&[n], &[gold]]));
        }
        let logp = super::log_softmax(self.value(logits));
        let loss = -logp[gold];
        let probs = logp.iter().map(|v| v.exp()).collect();
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, gold, probs },
            vec![1],
            vec![loss],
        ))
    }

    /// Multiply by a fixed (already scaled) dropout mask.
    pub fn dropout(&mut self, input: NodeId, mask: &[F]) -> Result<NodeId> {
        if self.shape(input) != [mask.len()] {
            return Err(mismatch("dropout", &[self.shape(input), &[mask.len()]]));
        }
        let out = self.value(input).iter().zip(mask).map(|(&x, &m)| x * m).collect();
        Ok(self.push(
            Op::Dropout {
                input,
                mask: mask.to_vec(),
            },
            vec![mask.len()],
            out,
        ))
    }

    /// Element-wise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| mismatch("sum", &[]))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![F::zero(); shape.iter().product()];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(mismatch("sum", &[&shape, self.shape(p)]));
            }
            for (o, &v) in out.iter_mut().zip(self.value(p)) {
                *o += v;
            }
        }
        Ok(self.push(Op::Sum(parts.to_vec()), shape, out))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).iter().copied().sum();
        self.push(Op::SumAll(a), vec![1], vec![s])
    }

    /// Stack equal-length vectors into an `[n, d]` matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = *rows.first().ok_or_else(|| mismatch("stack", &[]))?;
        let d = self.vec_len("stack", first)?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if self.shape(r) != [d] {
                return Err(mismatch("stack", &[&[d], self.shape(r)]));
            }
            out.extend_from_slice(self.value(r));
        }
        Ok(self.push(Op::Stack(rows.to_vec()), vec![rows.len(), d], out))
    }

    /// Valid 1-D convolution over the rows of an `[n, d]` sequence with
    /// `C` filters of `width` rows each. `weight` is `[C, width * d]`,
    /// `bias` is `[C]`; the result is `[n - width + 1, C]`.
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, width: usize) -> Result<NodeId> {
        let shapes = [self.shape(input), self.shape(weight), self.shape(bias)];
        let (n, d, c) = match shapes {
            [[n, d], [c, k], [cb]] if *k == width * *d && cb == c && width >= 1 && *n >= width => (*n, *d, *c),
            _ => return Err(mismatch("conv1d", &shapes)),
        };
        let steps = n - width + 1;
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let span = width * d;
        let mut out = vec![F::zero(); steps * c];
        for t in 0..steps {
            let window = &x[t * d..t * d + span];
            for f in 0..c {
                out[t * c + f] = dot(&w[f * span..(f + 1) * span], window) + b[f];
            }
        }
        Ok(self.push(
            Op::Conv1d {
                input,
                weight,
                bias,
                width,
            },
            vec![steps, c],
            out,
        ))
    }

    /// Column-wise maximum of a `[T, C]` matrix; ties go to the earliest row.
    pub fn max_over_time(&mut self, input: NodeId) -> Result<NodeId> {
        let (steps, c) = match self.shape(input) {
            [t, c] => (*t, *c),
            s => return Err(mismatch("max_over_time", &[s])),
        };
        let x = self.value(input);
        let mut winners = vec![0usize; c];
        let mut out = x[..c].to_vec();
        for t in 1..steps {
            for f in 0..c {
                if x[t * c + f] > out[f] {
                    out[f] = x[t * c + f];
                    winners[f] = t;
                }
            }
        }
        Ok(self.push(Op::MaxOverTime { input, winners }, vec![c], out))
    }

    /// Gradients of the scalar `root` with respect to every parameter the
    /// forward pass touched.
    pub fn backward(&mut self, root: NodeId) -> Result<GradStore<F>> {
        let mut store = GradStore::for_params(self.params);
        self.backward_into(root, F::one(), &mut store)?;
        Ok(store)
    }

    /// Accumulate `seed * d root / d param` into `store`. Accumulating
    /// several graphs into one store with per-graph seeds yields the
    /// gradient of their weighted sum.
    pub fn backward_into(&mut self, root: NodeId, seed: F, store: &mut GradStore<F>) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.shape(root) != [1] {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.backward_done = true;

        let nodes = &self.nodes;
        let params = self.params;
        let mut grads: Vec<Vec<F>> = (0..=root.0).map(|_| Vec::new()).collect();
        grads[root.0] = vec![seed];

        for i in (0..=root.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.is_empty() {
                continue;
            }
            let node = &nodes[i];
            let mut sink = Sink {
                grads: &mut grads,
                nodes,
                store: &mut *store,
            };
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    // Parameter nodes receive their gradient directly in
                    // the store; leaves are constants.
                }
                Op::Lookup { param, row } => {
                    let cols = node.value.len();
                    let slot = sink.store.slot(*param);
                    axpy(F::one(), &g, &mut slot[row * cols..(row + 1) * cols]);
                }
                Op::MatVec { w, x } => {
                    let wv = val(nodes, params, *w);
                    let xv = val(nodes, params, *x);
                    let cols = xv.len();
                    {
                        let dx = sink.buf(*x);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != F::zero() {
                                axpy(gr, &wv[r * cols..(r + 1) * cols], dx);
                            }
                        }
                    }
                    let dw = sink.buf(*w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != F::zero() {
                            axpy(gr, xv, &mut dw[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(F::one(), &g, sink.buf(*a));
                    axpy(F::one(), &g, sink.buf(*b));
                }
                Op::Mul(a, b) => {
                    let av = val(nodes, params, *a);
                    let bv = val(nodes, params, *b);
                    for ((d, &gi), &bi) in sink.buf(*a).iter_mut().zip(&g).zip(bv) {
                        *d += gi * bi;
                    }
                    for ((d, &gi), &ai) in sink.buf(*b).iter_mut().zip(&g).zip(av) {
                        *d += gi * ai;
                    }
                }
                Op::Scale(a, s) => axpy(*s, &g, sink.buf(*a)),
                Op::OneMinus(a) => axpy(-F::one(), &g, sink.buf(*a)),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let d = sink.buf(p);
                        let n = d.len();
                        axpy(F::one(), &g[off..off + n], d);
                        off += n;
                    }
                }
                Op::Slice { input, start } => {
                    let d = sink.buf(*input);
                    axpy(F::one(), &g, &mut d[*start..*start + g.len()]);
                }
                Op::Sigmoid(a) => {
                    for ((d, &gi), &y) in sink.buf(*a).iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * y * (F::one() - y);
                    }
                }
                Op::Tanh(a) => {
                    for ((d, &gi), &y) in sink.buf(*a).iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * (F::one() - y * y);
                    }
                }
                Op::Selu(a) => {
                    let xv = val(nodes, params, *a);
                    let scale = F::of(SELU_SCALE);
                    let sa = F::of(SELU_SCALE * SELU_ALPHA);
                    for ((d, &gi), &x) in sink.buf(*a).iter_mut().zip(&g).zip(xv) {
                        let deriv = if x > F::zero() { scale } else { sa * x.exp() };
                        *d += gi * deriv;
                    }
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let s = dot(&g, p);
                    for ((d, &gi), &pi) in sink.buf(*a).iter_mut().zip(&g).zip(p) {
                        *d += pi * (gi - s);
                    }
                }
                Op::SoftmaxCrossEntropy { logits, gold, probs } => {
                    let d = sink.buf(*logits);
                    for (k, (dk, &pk)) in d.iter_mut().zip(probs).enumerate() {
                        let target = if k == *gold { F::one() } else { F::zero() };
                        *dk += g[0] * (pk - target);
                    }
                }
                Op::Dropout { input, mask } => {
                    for ((d, &gi), &m) in sink.buf(*input).iter_mut().zip(&g).zip(mask) {
                        *d += gi * m;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        axpy(F::one(), &g, sink.buf(p));
                    }
                }
                Op::SumAll(a) => {
                    for d in sink.buf(*a).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Stack(rows) => {
                    let d = node.shape[1];
                    for (r, &p) in rows.iter().enumerate() {
                        axpy(F::one(), &g[r * d..(r + 1) * d], sink.buf(p));
                    }
                }
                Op::Conv1d {
                    input,
                    weight,
                    bias,
                    width,
                } => {
                    let (steps, c) = (node.shape[0], node.shape[1]);
                    let d = nodes[input.0].shape[1];
                    let span = width * d;
                    let xv = val(nodes, params, *input);
                    let wv = val(nodes, params, *weight);
                    {
                        let dx = sink.buf(*input);
                        for t in 0..steps {
                            for f in 0..c {
                                let gi = g[t * c + f];
                                if gi != F::zero() {
                                    axpy(gi, &wv[f * span..(f + 1) * span], &mut dx[t * d..t * d + span]);
                                }
                            }
                        }
                    }
                    {
                        let dw = sink.buf(*weight);
                        for t in 0..steps {
                            for f in 0..c {
                                let gi = g[t * c + f];
                                if gi != F::zero() {
                                    axpy(gi, &xv[t * d..t * d + span], &mut dw[f * span..(f + 1) * span]);
                                }
                            }
                        }
                    }
                    let db = sink.buf(*bias);
                    for t in 0..steps {
                        axpy(F::one(), &g[t * c..(t + 1) * c], db);
                    }
                }
                Op::MaxOverTime { input, winners } => {
                    let c = node.shape[0];
                    let d = sink.buf(*input);
                    for (f, &t) in winners.iter().enumerate() {
                        d[t * c + f] += g[f];
                    }
                }
            }
        }

        // Every parameter the forward pass touched gets an entry, even if
        // no gradient flowed back to it.
        for node in nodes {
            match node.op {
                Op::Param(p) | Op::Lookup { param: p, .. } => {
                    store.slot(p);
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn val<'a, F: Real>(nodes: &'a [Node<F>], params: &'a Params<F>, id: NodeId) -> &'a [F] {
    match nodes[id.0].op {
        Op::Param(p) => params.get(p).data(),
        _ => &nodes[id.0].value,
    }
}

/// Routes gradient contributions to node buffers or, for parameter nodes,
/// straight into the gradient store.
struct Sink<'a, 'b, F> {
    grads: &'a mut [Vec<F>],
    nodes: &'b [Node<F>],
    store: &'a mut GradStore<F>,
}

impl<F: Real> Sink<'_, '_, F> {
    fn buf(&mut self, id: NodeId) -> &mut [F] {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(p) => self.store.slot(p),
            _ => {
                let g = &mut self.grads[id.0];
                if g.is_empty() {
                    *g = vec![F::zero(); node.len()];
                }
                g
            }
        }
    }
}
