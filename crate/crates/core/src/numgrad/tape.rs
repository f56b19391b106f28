use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matvec_raw, sigmoid, softmax_raw};
use super::{NumError, ParamSet, Result, Shape, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: Option<String> },
    MatVec(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    OneMinus(usize),
    /// scalar var times tensor
    ScaleBy { scalar: usize, x: usize },
    ScaleConst(usize, f64),
    AddConst(usize, f64),
    Dot(usize, usize),
    Sum(usize),
    SqNorm(usize),
    Softmax(usize),
    Select(usize, usize),
    Relu(usize),
    Row(usize, usize),
    /// `-log softmax(x)[target]`
    CrossEntropy { logits: usize, target: usize },
    AddAll(Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Values are computed eagerly when an operation is pushed. Leaves hold
/// copies of their inputs, so later mutation of a [`ParamSet`] does not
/// affect a recorded tape.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every node reachable backwards from a loss.
pub struct Adjoints {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
    params: Vec<(String, usize)>,
}

impl Adjoints {
    /// Gradient of the loss with respect to `v`, if `v` influences it.
    pub fn of(&self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads
            .get(v.idx)?
            .as_ref()
            .map(|g| Tensor::from_parts_unchecked(self.shapes[v.idx], g.clone()))
    }

    /// Gradients keyed like `params`; entries bound several times are summed
    /// and entries never bound (or unreachable) are zero.
    pub fn param_grads(&self, params: &ParamSet) -> ParamSet {
        let mut out = params.zeros_like();
        for (name, idx) in &self.params {
            if let (Some(g), Ok(slot)) = (&self.grads[*idx], out.get_mut(name)) {
                for (a, b) in slot.values_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(NumError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        let idx = self.nodes.len();
        self.nodes.push(Node { value, op });
        Ok(Var { tape: self.id, idx })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    /// Records an input tensor. Gradients flow to it like to any other node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf { param: None },
        });
        Var { tape: self.id, idx }
    }

    /// Records a snapshot of `params[name]` and remembers the binding so
    /// [`Adjoints::param_grads`] can route its gradient back.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let value = params.get(name)?.clone();
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf {
                param: Some(name.to_string()),
            },
        });
        Ok(Var { tape: self.id, idx })
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<Shape> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(NumError::Dim {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    fn map(&self, a: usize, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.val(a);
        Tensor::from_parts_unchecked(t.shape(), t.values().iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, op: &'static str, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let shape = self.same_shape(op, a, b)?;
        let data = self
            .val(a)
            .values()
            .iter()
            .zip(self.val(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts_unchecked(shape, data))
    }

    fn scalar_of(&self, op: &'static str, i: usize) -> Result<f64> {
        let t = self.val(i);
        if t.len() != 1 {
            return Err(NumError::Dim {
                op,
                left: t.shape(),
                right: Shape::Vector(1),
            });
        }
        Ok(t.values()[0])
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let out = match *op {
            Op::Leaf { .. } => unreachable!("leaves are not evaluated"),
            Op::MatVec(w, x) => {
                let (ws, xs) = (self.val(w).shape(), self.val(x).shape());
                match (ws, xs) {
                    (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => {
                        Tensor::from_parts_unchecked(
                            Shape::Vector(r),
                            matvec_raw(self.val(w), self.val(x).values()),
                        )
                    }
                    _ => {
                        return Err(NumError::Dim {
                            op: "matvec",
                            left: ws,
                            right: xs,
                        })
                    }
                }
            }
            Op::Add(a, b) => self.zip("add", a, b, |x, y| x + y)?,
            Op::Sub(a, b) => self.zip("sub", a, b, |x, y| x - y)?,
            Op::Mul(a, b) => self.zip("hadamard", a, b, |x, y| x * y)?,
            Op::Tanh(a) => self.map(a, f64::tanh),
            Op::Sigmoid(a) => self.map(a, sigmoid),
            Op::OneMinus(a) => self.map(a, |v| 1.0 - v),
            Op::ScaleBy { scalar, x } => {
                let s = self.scalar_of("scale_by", scalar)?;
                self.map(x, |v| s * v)
            }
            Op::ScaleConst(a, c) => self.map(a, |v| c * v),
            Op::AddConst(a, c) => self.map(a, |v| v + c),
            Op::Dot(a, b) => {
                self.same_shape("dot", a, b)?;
                let s = self
                    .val(a)
                    .values()
                    .iter()
                    .zip(self.val(b).values())
                    .map(|(x, y)| x * y)
                    .sum();
                Tensor::from_parts_unchecked(Shape::Vector(1), vec![s])
            }
            Op::Sum(a) => {
                Tensor::from_parts_unchecked(Shape::Vector(1), vec![self.val(a).values().iter().sum()])
            }
            Op::SqNorm(a) => Tensor::from_parts_unchecked(Shape::Vector(1), vec![self.val(a).sq_norm()]),
            Op::Softmax(a) => {
                let t = self.val(a);
                if t.shape().rank() != 1 {
                    return Err(NumError::Rank {
                        op: "softmax",
                        shape: t.shape(),
                    });
                }
                Tensor::from_parts_unchecked(t.shape(), softmax_raw(t.values()))
            }
            Op::Select(a, i) => {
                let t = self.val(a);
                if i >= t.len() {
                    return Err(NumError::Index {
                        op: "select",
                        index: i,
                        shape: t.shape(),
                    });
                }
                Tensor::from_parts_unchecked(Shape::Vector(1), vec![t.values()[i]])
            }
            Op::Relu(a) => self.map(a, |v| v.max(0.0)),
            Op::Row(m, i) => {
                let t = self.val(m);
                match t.shape() {
                    Shape::Matrix(r, c) if i < r => {
                        Tensor::from_parts_unchecked(Shape::Vector(c), t.row(i).to_vec())
                    }
                    shape => {
                        return Err(NumError::Index {
                            op: "row",
                            index: i,
                            shape,
                        })
                    }
                }
            }
            Op::CrossEntropy { logits, target } => {
                let t = self.val(logits);
                if t.shape().rank() != 1 || target >= t.len() {
                    return Err(NumError::Index {
                        op: "cross_entropy",
                        index: target,
                        shape: t.shape(),
                    });
                }
                let max = t.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = t.values().iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                Tensor::from_parts_unchecked(Shape::Vector(1), vec![lse - t.values()[target]])
            }
            Op::AddAll(ref xs) => {
                let Some(&first) = xs.first() else {
                    return Err(NumError::Empty("add_all needs at least one operand"));
                };
                let mut acc = self.val(first).clone();
                for &x in &xs[1..] {
                    self.same_shape("add_all", first, x)?;
                    acc.add_assign(self.val(x));
                }
                acc
            }
        };
        out.check_finite("tape operation")
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let op = Op::MatVec(self.check(w)?, self.check(x)?);
        self.push(op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.check(a)?, self.check(b)?);
        self.push(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.check(a)?, self.check(b)?);
        self.push(op)
    }

    /// Componentwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul(self.check(a)?, self.check(b)?);
        self.push(op)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let op = Op::Tanh(self.check(a)?);
        self.push(op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let op = Op::Sigmoid(self.check(a)?);
        self.push(op)
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let op = Op::OneMinus(self.check(a)?);
        self.push(op)
    }

    /// `scalar * x` where `scalar` is a length-1 variable.
    pub fn scale_by(&mut self, scalar: Var, x: Var) -> Result<Var> {
        let op = Op::ScaleBy {
            scalar: self.check(scalar)?,
            x: self.check(x)?,
        };
        self.push(op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let op = Op::ScaleConst(self.check(a)?, c);
        self.push(op)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let op = Op::AddConst(self.check(a)?, c);
        self.push(op)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Dot(self.check(a)?, self.check(b)?);
        self.push(op)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let op = Op::Sum(self.check(a)?);
        self.push(op)
    }

    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let op = Op::SqNorm(self.check(a)?);
        self.push(op)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let op = Op::Softmax(self.check(a)?);
        self.push(op)
    }

    /// Component `i` of a tensor, as a scalar.
    pub fn select(&mut self, a: Var, i: usize) -> Result<Var> {
        let op = Op::Select(self.check(a)?, i);
        self.push(op)
    }

    /// `max(0, x)`; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let op = Op::Relu(self.check(a)?);
        self.push(op)
    }

    /// Row `i` of a matrix (embedding lookup).
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let op = Op::Row(self.check(m)?, i);
        self.push(op)
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let op = Op::CrossEntropy {
            logits: self.check(logits)?,
            target,
        };
        self.push(op)
    }

    /// Sum of same-shaped variables.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let idx = xs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        self.push(Op::AddAll(idx))
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut fresh = Tape {
            id: self.id,
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf { .. } => node.value.clone(),
                ref op => fresh.eval(op)?,
            };
            fresh.nodes.push(Node {
                value,
                op: node.op.clone(),
            });
        }
        Ok(fresh.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn adjoints(&self, loss: Var) -> Result<Adjoints> {
        let root = self.check(loss).map_err(|_| NumError::LossNotOnTape)?;
        let shape = self.nodes[root].value.shape();
        if shape.len() != 1 {
            return Err(NumError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self.nodes[..=root]
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Leaf { param: Some(name) } => Some((name.clone(), i)),
                _ => None,
            })
            .collect();
        Ok(Adjoints {
            tape: self.id,
            grads,
            shapes: self.nodes[..=root].iter().map(|n| n.value.shape()).collect(),
            params,
        })
    }

    /// Gradient of `loss` for every entry of `params` (zero when unreachable).
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Result<ParamSet> {
        Ok(self.adjoints(loss)?.param_grads(params))
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn acc(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
            grads[i].get_or_insert_with(|| vec![0.0; len])
        }
        let out = &self.nodes[idx].value;
        match self.nodes[idx].op {
            Op::Leaf { .. } => {}
            Op::MatVec(w, x) => {
                let wt = self.val(w);
                let xv = self.val(x).values();
                let cols = wt.cols();
                {
                    let gw = acc(grads, w, wt.len());
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            let row = &mut gw[i * cols..(i + 1) * cols];
                            for (r, &xj) in row.iter_mut().zip(xv) {
                                *r += gi * xj;
                            }
                        }
                    }
                }
                let gx = acc(grads, x, cols);
                for (i, &gi) in g.iter().enumerate() {
                    if gi != 0.0 {
                        for (r, &wij) in gx.iter_mut().zip(wt.row(i)) {
                            *r += gi * wij;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    let ga = acc(grads, t, g.len());
                    ga.iter_mut().zip(g).for_each(|(r, d)| *r += d);
                }
            }
            Op::Sub(a, b) => {
                let ga = acc(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(r, d)| *r += d);
                let gb = acc(grads, b, g.len());
                gb.iter_mut().zip(g).for_each(|(r, d)| *r -= d);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(a).values(), self.val(b).values());
                let ga = acc(grads, a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * bv[k];
                }
                let gb = acc(grads, b, g.len());
                for k in 0..g.len() {
                    gb[k] += g[k] * av[k];
                }
            }
            Op::Tanh(a) => {
                let y = out.values();
                let ga = acc(grads, a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }
            Op::Sigmoid(a) => {
                let y = out.values();
                let ga = acc(grads, a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }
            Op::OneMinus(a) => {
                let ga = acc(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(r, d)| *r -= d);
            }
            Op::ScaleBy { scalar, x } => {
                let s = self.val(scalar).values()[0];
                let xv = self.val(x).values();
                let ds: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                acc(grads, scalar, 1)[0] += ds;
                let gx = acc(grads, x, g.len());
                gx.iter_mut().zip(g).for_each(|(r, d)| *r += s * d);
            }
            Op::ScaleConst(a, c) => {
                let ga = acc(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(r, d)| *r += c * d);
            }
            Op::AddConst(a, _) => {
                let ga = acc(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(r, d)| *r += d);
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.val(a).values(), self.val(b).values());
                let n = av.len();
                let ga = acc(grads, a, n);
                for k in 0..n {
                    ga[k] += g[0] * bv[k];
                }
                let gb = acc(grads, b, n);
                for k in 0..n {
                    gb[k] += g[0] * av[k];
                }
            }
            Op::Sum(a) => {
                let n = self.val(a).len();
                acc(grads, a, n).iter_mut().for_each(|r| *r += g[0]);
            }
            Op::SqNorm(a) => {
                let av = self.val(a).values();
                let ga = acc(grads, a, av.len());
                for (r, &v) in ga.iter_mut().zip(av) {
                    *r += 2.0 * v * g[0];
                }
            }
            Op::Softmax(a) => {
                let y = out.values();
                let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                let ga = acc(grads, a, g.len());
                for k in 0..g.len() {
                    ga[k] += y[k] * (g[k] - gy);
                }
            }
            Op::Select(a, i) => {
                let n = self.val(a).len();
                acc(grads, a, n)[i] += g[0];
            }
            Op::Relu(a) => {
                let y = out.values();
                let ga = acc(grads, a, g.len());
                for k in 0..g.len() {
                    if y[k] > 0.0 {
                        ga[k] += g[k];
                    }
                }
            }
            Op::Row(m, i) => {
                let mt = self.val(m);
                let cols = mt.cols();
                let gm = acc(grads, m, mt.len());
                for (r, d) in gm[i * cols..(i + 1) * cols].iter_mut().zip(g) {
                    *r += d;
                }
            }
            Op::CrossEntropy { logits, target } => {
                let p = softmax_raw(self.val(logits).values());
                let gl = acc(grads, logits, p.len());
                for (k, pk) in p.iter().enumerate() {
                    let ind = if k == target { 1.0 } else { 0.0 };
                    gl[k] += g[0] * (pk - ind);
                }
            }
            Op::AddAll(ref xs) => {
                for &x in xs {
                    let gx = acc(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(r, d)| *r += d);
                }
            }
        }
    }
}
