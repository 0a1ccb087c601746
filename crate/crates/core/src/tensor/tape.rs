use super::{order_free_sum, sigmoid, softmax, Dims, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Pointwise operations available through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Vec<Var>),
    Slice { parent: Var, index: usize },
    Scale(Var, f64),
    Reduce(Var),
    SquaredNorm(Var),
    SoftmaxXent { logits: Var, label: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive operations.
///
/// Every operation's inputs are recorded before its output, so ids are a
/// topological order and the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Dims>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var` with untouched values reported as zeros.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0].as_slice()),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[var.0].as_slice()),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Moves a value back out of the tape, leaving an empty tensor behind.
    pub(crate) fn take_value(&mut self, var: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[var.0].value, Tensor::zeros(&[0]))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, TensorError> {
        let (wv, xv) = (self.value(w), self.value(x));
        if wv.rank() != 2 || xv.rank() != 1 || wv.shape()[1] != xv.shape()[0] {
            return Err(shape_err("matvec", wv, xv));
        }
        let cols = wv.shape()[1];
        let out: Vec<f64> = wv
            .data()
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv.data()).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Tensor::vector(out), Op::MatVec(w, x), "matvec")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor { shape: av.shape, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var, TensorError> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            Elementwise::Sigmoid | Elementwise::Tanh => 1,
        };
        if args.len() != arity {
            return Err(TensorError::Index {
                op: "elementwise arity",
                index: args.len(),
                extent: arity,
            });
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
        }
    }

    /// Elementwise sum of equally shaped values. The result is bit-identical
    /// under any permutation of `parts`.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Index {
            op: "sum",
            index: 0,
            extent: 0,
        })?;
        let shape = self.value(*first).shape;
        for p in parts {
            let v = self.value(*p);
            if v.shape != shape {
                return Err(shape_err("sum", self.value(*first), v));
            }
        }
        let slices: Vec<&[f64]> = parts.iter().map(|p| self.value(*p).data()).collect();
        let data = order_free_sum(&slices);
        self.push(Tensor { shape, data }, Op::Sum(parts.to_vec()), "sum")
    }

    /// Leading-axis slice; gradients flow back into row `index` of `parent`.
    pub fn slice(&mut self, parent: Var, index: usize) -> Result<Var, TensorError> {
        let out = self.value(parent).slice(index)?;
        self.push(out, Op::Slice { parent, index }, "slice")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor), "scale")
    }

    /// Sum of all entries, as a scalar.
    pub fn reduce_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Reduce(a), "reduce_sum")
    }

    pub fn squared_norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let total = self.value(a).squared_norm();
        self.push(Tensor::scalar(total), Op::SquaredNorm(a), "squared_norm")
    }

    /// Negative log-likelihood of `label` under softmax(`logits`).
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        if lv.rank() != 1 || lv.len() < 2 {
            return Err(TensorError::Shape {
                op: "softmax_xent",
                left: lv.shape().to_vec(),
                right: vec![2],
            });
        }
        if label >= lv.len() {
            return Err(TensorError::Index {
                op: "softmax_xent",
                index: label,
                extent: lv.len(),
            });
        }
        let data = lv.data();
        let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = data.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = max + log_total - data[label];
        let probs = softmax(data);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent { logits, label, probs },
            "softmax_xent",
        )
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(TensorError::NotScalar(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor {
            shape: root.shape,
            data: vec![1.0],
        });

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatVec(w, x) => {
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    let cols = wv.shape()[1];
                    let mut dw = Vec::with_capacity(wv.len());
                    for gi in g.data() {
                        dw.extend(xv.data().iter().map(|xj| gi * xj));
                    }
                    let mut dx = vec![0.0; cols];
                    for (row, gi) in wv.data().chunks_exact(cols).zip(g.data()) {
                        for (d, wij) in dx.iter_mut().zip(row) {
                            *d += wij * gi;
                        }
                    }
                    accumulate(&mut grads, *w, wv.shape(), dw);
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), g.data().to_vec());
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da = g.data().iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db = g.data().iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(&mut grads, *a, g.shape(), da);
                    accumulate(&mut grads, *b, g.shape(), db);
                }
                Op::Sigmoid(a) => {
                    let s = node.value.data();
                    let da = g.data().iter().zip(s).map(|(g, s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, g.shape(), da);
                }
                Op::Tanh(a) => {
                    let t = node.value.data();
                    let da = g.data().iter().zip(t).map(|(g, t)| g * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *a, g.shape(), da);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        accumulate(&mut grads, *p, g.shape(), g.data().to_vec());
                    }
                }
                Op::Slice { parent, index } => {
                    let pv = self.value(*parent);
                    let slot = grads[parent.0].get_or_insert_with(|| Tensor::zeros(pv.shape()));
                    let rows = slot.slice_data_mut(*index).expect("slice index validated on record");
                    for (d, gi) in rows.iter_mut().zip(g.data()) {
                        *d += gi;
                    }
                }
                Op::Scale(a, factor) => {
                    let da = g.data().iter().map(|g| g * factor).collect();
                    accumulate(&mut grads, *a, g.shape(), da);
                }
                Op::Reduce(a) => {
                    let av = self.value(*a);
                    let gi = g.item();
                    accumulate(&mut grads, *a, av.shape(), vec![gi; av.len()]);
                }
                Op::SquaredNorm(a) => {
                    let av = self.value(*a);
                    let gi = g.item();
                    let da = av.data().iter().map(|v| 2.0 * v * gi).collect();
                    accumulate(&mut grads, *a, av.shape(), da);
                }
                Op::SoftmaxXent { logits, label, probs } => {
                    let gi = g.item();
                    let dl = probs
                        .iter()
                        .enumerate()
                        .map(|(k, p)| gi * (p - if k == *label { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut grads, *logits, &[probs.len()], dl);
                }
            }
            grads[id] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (a, b) in existing.data.iter_mut().zip(&delta) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: Dims::of(shape),
                data: delta,
            })
        }
    }
}
