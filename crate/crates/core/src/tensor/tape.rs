use super::{gemm, MatRef, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Tanh(Var),
    Scale(Var, f64),
    Sum(Var),
    Broadcast(Var),
    /// Scalar function of `input` whose Jacobian was computed externally.
    Custom { input: Var, jacobian: Tensor },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of primitive ops. Nodes are appended in evaluation order,
/// so every node's parents precede it.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
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

    /// Differentiable leaf (a parameter or any input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        check_finite(op_name, &value)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let value = self.node(a)?.value.zip_map(&self.node(b)?.value, name, f)?;
        self.record(name, value, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.node(a)?.value.map(f);
        self.record(name, value, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        self.record("matmul", value, Op::Matmul(a, b), &[a, b])
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary("sin", a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary("cos", a, f64::cos, Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    /// Sum of all elements, producing a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.node(a)?.value.sum());
        self.record("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a)?.value.len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Numpy-style broadcast of `a` to `shape` (size-1 axes are repeated,
    /// missing leading axes are added).
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = broadcast_to(&self.node(a)?.value, shape)?;
        self.record("broadcast", value, Op::Broadcast(a), &[a])
    }

    /// Records a scalar `value = f(input)` whose gradient `df/dinput` is
    /// supplied by the caller.
    pub fn custom_scalar(&mut self, input: Var, value: f64, jacobian: Tensor) -> Result<Var> {
        let in_shape = self.node(input)?.value.shape().to_vec();
        if jacobian.shape() != in_shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "custom",
                left: in_shape,
                right: jacobian.shape().to_vec(),
            });
        }
        check_finite("custom", &jacobian)?;
        self.record("custom", Tensor::scalar(value), Op::Custom { input, jacobian }, &[input])
    }

    /// Reverse pass from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let out = self.node(output)?;
        if out.value.len() != 1 {
            return Err(TensorError::NotScalar(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out.value.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            check_finite("backward", &g)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x))?;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.zip_map(val(*b), "mul", |x, y| x * y)?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.zip_map(val(*a), "mul", |x, y| x * y)?)?;
                }
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(g.data(), n),
                        MatRef::transposed(bv.data(), n),
                        &mut da,
                        false,
                    );
                    accumulate(grads, *a, Tensor::new(vec![m, k], da)?)?;
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(av.data(), k),
                        MatRef::row_major(g.data(), n),
                        &mut db,
                        false,
                    );
                    accumulate(grads, *b, Tensor::new(vec![k, n], db)?)?;
                }
            }
            Op::Sin(a) => {
                let d = g.zip_map(val(*a), "sin", |gi, x| gi * x.cos())?;
                accumulate(grads, *a, d)?;
            }
            Op::Cos(a) => {
                let d = g.zip_map(val(*a), "cos", |gi, x| -gi * x.sin())?;
                accumulate(grads, *a, d)?;
            }
            Op::Exp(a) => {
                let d = g.zip_map(&node.value, "exp", |gi, y| gi * y)?;
                accumulate(grads, *a, d)?;
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, "tanh", |gi, y| gi * (1.0 - y * y))?;
                accumulate(grads, *a, d)?;
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, g.map(|x| c * x))?;
            }
            Op::Sum(a) => {
                let gi = g.data()[0];
                accumulate(grads, *a, Tensor::filled(val(*a).shape(), gi))?;
            }
            Op::Broadcast(a) => {
                accumulate(grads, *a, reduce_to(g, val(*a).shape())?)?;
            }
            Op::Custom { input, jacobian } => {
                let gi = g.data()[0];
                accumulate(grads, *input, jacobian.map(|j| gi * j))?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            if existing.shape() != contrib.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "accumulate",
                    left: existing.shape().to_vec(),
                    right: contrib.shape().to_vec(),
                });
            }
            for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
    Ok(())
}

/// Left-pads `shape` with ones up to `rank`.
fn padded(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut s = vec![1; rank - shape.len()];
    s.extend_from_slice(shape);
    s
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each element of `target`, the flat index of the source element it
/// reads under broadcasting.
fn broadcast_indices(src: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if src.len() > target.len() {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast",
            left: src.to_vec(),
            right: target.to_vec(),
        });
    }
    let src_p = padded(src, target.len());
    for (s, t) in src_p.iter().zip(target) {
        if *s != *t && *s != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                left: src.to_vec(),
                right: target.to_vec(),
            });
        }
    }
    let src_strides = strides(&src_p);
    let n: usize = target.iter().product();
    let mut idx = vec![0usize; target.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let flat = idx
            .iter()
            .zip(&src_p)
            .zip(&src_strides)
            .map(|((&i, &s), &st)| if s == 1 { 0 } else { i * st })
            .sum();
        out.push(flat);
        for d in (0..target.len()).rev() {
            idx[d] += 1;
            if idx[d] < target[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

fn broadcast_to(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    let map = broadcast_indices(t.shape(), target)?;
    let data = map.into_iter().map(|i| t.data()[i]).collect();
    Tensor::new(target.to_vec(), data)
}

fn reduce_to(g: &Tensor, src: &[usize]) -> Result<Tensor> {
    let map = broadcast_indices(src, g.shape())?;
    let mut out = Tensor::zeros(src);
    for (gi, i) in g.data().iter().zip(map) {
        out.data_mut()[i] += gi;
    }
    Ok(out)
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` if `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like(like))
    }
}
