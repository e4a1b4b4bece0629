use std::collections::{BTreeMap, HashMap};

use super::kernels::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Added to denominators of safe division.
pub const SAFE_DIV_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(String),
    Const(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    DivEps(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Scale(NodeId, f64),
    ScalarMul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    L1(NodeId, NodeId),
    Mse(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::DivEps(..) => "div_eps",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::ScalarMul(..) => "scalar_mul",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::L1(..) => "l1",
            Op::Mse(..) => "mse",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) | Op::Param(_) | Op::Const(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::DivEps(a, b)
            | Op::AddRowBias(a, b)
            | Op::ScalarMul(a, b)
            | Op::L1(a, b)
            | Op::Mse(a, b) => vec![a, b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Sigmoid(a) | Op::Sum(a) | Op::Mean(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    requires_grad: bool,
}

/// Named tensors bound to the `input`/`param` leaves of a graph.
#[derive(Default)]
pub struct Bindings<'a> {
    map: HashMap<&'a str, &'a Tensor>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: &'a str, value: &'a Tensor) -> Self {
        self.map.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &'a str, value: &'a Tensor) {
        self.map.insert(name, value);
    }
}

/// Gradients of the scalar root with respect to every reachable parameter.
pub type Gradients = BTreeMap<String, Tensor>;

/// A static computation graph. Nodes are appended in topological order, so
/// the graph is acyclic by construction. Leaves are either named inputs
/// (no gradient), named parameters (gradient reported by `backward`) or
/// constants.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    root: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let requires_grad = match &op {
            Op::Param(_) => true,
            Op::Input(_) | Op::Const(_) => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        for p in op.parents() {
            assert!(p.0 < self.nodes.len(), "parent node from another graph");
        }
        self.nodes.push(Node { op, requires_grad });
        self.values.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()))
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        self.push(Op::Param(name.to_string()))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    /// `a / (b + SAFE_DIV_EPS)`, elementwise.
    pub fn div_eps(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::DivEps(a, b))
    }

    /// Adds a bias vector of length `cols` to every row of a `[rows, cols]` matrix.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddRowBias(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        assert!(c.is_finite());
        self.push(Op::Scale(a, c))
    }

    /// Multiplies every entry of `a` by the one-element node `s`.
    pub fn scalar_mul(&mut self, s: NodeId, a: NodeId) -> NodeId {
        self.push(Op::ScalarMul(s, a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::L1(a, b))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mse(a, b))
    }

    /// Value computed for `id` by the last forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values[id.0].as_ref()
    }

    /// Evaluates the last node added to the graph.
    pub fn forward(&mut self, inputs: &Bindings) -> Result<&Tensor> {
        let root = NodeId(
            self.nodes
                .len()
                .checked_sub(1)
                .ok_or_else(|| Error::InvalidArgument("empty graph".into()))?,
        );
        self.forward_to(root, inputs)
    }

    /// Evaluates `root` and every node it depends on. Intermediate values
    /// are cached for `backward`.
    pub fn forward_to(&mut self, root: NodeId, inputs: &Bindings) -> Result<&Tensor> {
        let needed = self.ancestors(root);
        for v in self.values.iter_mut() {
            *v = None;
        }
        self.root = None;
        for i in 0..=root.0 {
            if !needed[i] {
                continue;
            }
            let value = self.eval_node(i, inputs)?;
            if value.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{} (node {i})",
                    self.nodes[i].op.name()
                )));
            }
            self.values[i] = Some(value);
        }
        self.root = Some(root);
        Ok(self.values[root.0].as_ref().expect("root evaluated"))
    }

    fn ancestors(&self, root: NodeId) -> Vec<bool> {
        let mut needed = vec![false; root.0 + 1];
        needed[root.0] = true;
        for i in (0..=root.0).rev() {
            if needed[i] {
                for p in self.nodes[i].op.parents() {
                    needed[p.0] = true;
                }
            }
        }
        needed
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("parent evaluated first")
    }

    fn eval_node(&self, i: usize, inputs: &Bindings) -> Result<Tensor> {
        let op = &self.nodes[i].op;
        let same = |a: NodeId, b: NodeId| -> Result<(&Tensor, &Tensor)> {
            let (x, y) = (self.val(a), self.val(b));
            if x.shape != y.shape {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    left: x.shape.clone(),
                    right: y.shape.clone(),
                });
            }
            Ok((x, y))
        };
        let zip = |a: NodeId, b: NodeId, f: fn(f64, f64) -> f64| -> Result<Tensor> {
            let (x, y) = same(a, b)?;
            Ok(Tensor::from_parts(
                x.shape.clone(),
                x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
            ))
        };
        let unary = |a: NodeId, f: &dyn Fn(f64) -> f64| -> Tensor {
            let x = self.val(a);
            Tensor::from_parts(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect())
        };
        Ok(match op {
            Op::Input(name) | Op::Param(name) => inputs
                .map
                .get(name.as_str())
                .map(|t| (*t).clone())
                .ok_or_else(|| Error::UnboundInput(name.clone()))?,
            Op::Const(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0] {
                    return Err(Error::ShapeMismatch {
                        op: "matmul",
                        left: x.shape.clone(),
                        right: y.shape.clone(),
                    });
                }
                let (m, k, n) = (x.shape[0], x.shape[1], y.shape[1]);
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, &x.data, false, &y.data, false, 0.0, &mut c);
                Tensor::from_parts(vec![m, n], c)
            }
            Op::Add(a, b) => zip(*a, *b, |p, q| p + q)?,
            Op::Sub(a, b) => zip(*a, *b, |p, q| p - q)?,
            Op::Mul(a, b) => zip(*a, *b, |p, q| p * q)?,
            Op::DivEps(a, b) => zip(*a, *b, |p, q| p / (q + SAFE_DIV_EPS))?,
            Op::AddRowBias(a, bias) => {
                let (x, bv) = (self.val(*a), self.val(*bias));
                if x.rank() != 2 || bv.len() != x.shape[1] {
                    return Err(Error::ShapeMismatch {
                        op: "add_row_bias",
                        left: x.shape.clone(),
                        right: bv.shape.clone(),
                    });
                }
                let mut data = x.data.clone();
                for row in data.chunks_mut(x.shape[1]) {
                    row.iter_mut().zip(&bv.data).for_each(|(r, b)| *r += b);
                }
                Tensor::from_parts(x.shape.clone(), data)
            }
            Op::Scale(a, c) => {
                let c = *c;
                unary(*a, &|v| v * c)
            }
            Op::ScalarMul(s, a) => {
                let sv = self.val(*s);
                if sv.len() != 1 {
                    return Err(Error::ShapeMismatch {
                        op: "scalar_mul",
                        left: sv.shape.clone(),
                        right: vec![1],
                    });
                }
                let c = sv.data[0];
                unary(*a, &|v| v * c)
            }
            Op::Relu(a) => unary(*a, &|v| v.max(0.0)),
            Op::Sigmoid(a) => unary(*a, &sigmoid),
            Op::Sum(a) => Tensor::scalar(self.val(*a).sum()),
            Op::Mean(a) => Tensor::scalar(self.val(*a).mean()),
            Op::L1(a, b) => {
                let (x, y) = same(*a, *b)?;
                let s: f64 = x.data.iter().zip(&y.data).map(|(p, q)| (p - q).abs()).sum();
                Tensor::scalar(s / x.len() as f64)
            }
            Op::Mse(a, b) => {
                let (x, y) = same(*a, *b)?;
                let s: f64 = x
                    .data
                    .iter()
                    .zip(&y.data)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                Tensor::scalar(s / x.len() as f64)
            }
        })
    }

    /// Reverse-mode pass from the root of the last forward. Returns the
    /// gradient of the (scalar) root for every parameter leaf it reaches.
    pub fn backward(&mut self) -> Result<Gradients> {
        let root = self.root.ok_or(Error::NotEvaluated)?;
        let root_val = self.val(root);
        if root_val.len() != 1 {
            return Err(Error::NonScalarRoot(root_val.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::Input(_) | Op::Const(_) => {}
                Op::MatMul(a, b) => {
                    let (x, y) = (self.val(a), self.val(b));
                    let (m, k, n) = (x.shape[0], x.shape[1], y.shape[1]);
                    if self.nodes[a.0].requires_grad {
                        let slot = grad_slot(&mut grads, a, m * k);
                        gemm(m, n, k, &g, false, &y.data, true, 1.0, slot);
                    }
                    if self.nodes[b.0].requires_grad {
                        let slot = grad_slot(&mut grads, b, k * n);
                        gemm(k, m, n, &x.data, true, &g, false, 1.0, slot);
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, a, g.iter().copied());
                    self.acc(&mut grads, b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, a, g.iter().copied());
                    self.acc(&mut grads, b, g.iter().map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.val(a), self.val(b));
                    self.acc(&mut grads, a, g.iter().zip(&y.data).map(|(g, y)| g * y));
                    self.acc(&mut grads, b, g.iter().zip(&x.data).map(|(g, x)| g * x));
                }
                Op::DivEps(a, b) => {
                    let (x, y) = (self.val(a), self.val(b));
                    self.acc(
                        &mut grads,
                        a,
                        g.iter().zip(&y.data).map(|(g, y)| g / (y + SAFE_DIV_EPS)),
                    );
                    self.acc(
                        &mut grads,
                        b,
                        g.iter().zip(x.data.iter().zip(&y.data)).map(|(g, (x, y))| {
                            let d = y + SAFE_DIV_EPS;
                            -g * x / (d * d)
                        }),
                    );
                }
                Op::AddRowBias(a, bias) => {
                    let cols = self.val(a).shape[1];
                    self.acc(&mut grads, a, g.iter().copied());
                    if self.nodes[bias.0].requires_grad {
                        let mut col_sums = vec![0.0; cols];
                        for row in g.chunks(cols) {
                            col_sums.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                        }
                        self.acc(&mut grads, bias, col_sums.into_iter());
                    }
                }
                Op::Scale(a, c) => self.acc(&mut grads, a, g.iter().map(|v| v * c)),
                Op::ScalarMul(s, a) => {
                    let c = self.val(s).data[0];
                    let x = self.val(a);
                    if self.nodes[s.0].requires_grad {
                        let ds: f64 = g.iter().zip(&x.data).map(|(g, x)| g * x).sum();
                        self.acc(&mut grads, s, std::iter::once(ds));
                    }
                    self.acc(&mut grads, a, g.iter().map(|v| v * c));
                }
                Op::Relu(a) => {
                    let x = self.val(a);
                    self.acc(
                        &mut grads,
                        a,
                        g.iter()
                            .zip(&x.data)
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                    );
                }
                Op::Sigmoid(a) => {
                    let out = self.values[i].as_ref().expect("evaluated");
                    self.acc(
                        &mut grads,
                        a,
                        g.iter().zip(&out.data).map(|(g, s)| g * s * (1.0 - s)),
                    );
                }
                Op::Sum(a) => {
                    let n = self.val(a).len();
                    self.acc(&mut grads, a, std::iter::repeat_n(g[0], n));
                }
                Op::Mean(a) => {
                    let n = self.val(a).len();
                    self.acc(&mut grads, a, std::iter::repeat_n(g[0] / n as f64, n));
                }
                Op::L1(a, b) => {
                    let (x, y) = (self.val(a), self.val(b));
                    let scale = g[0] / x.len() as f64;
                    let d: Vec<f64> = x
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(p, q)| scale * sign_with_zero(p - q))
                        .collect();
                    self.acc(&mut grads, b, d.iter().map(|v| -v));
                    self.acc(&mut grads, a, d.into_iter());
                }
                Op::Mse(a, b) => {
                    let (x, y) = (self.val(a), self.val(b));
                    let scale = 2.0 * g[0] / x.len() as f64;
                    let d: Vec<f64> = x
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(p, q)| scale * (p - q))
                        .collect();
                    self.acc(&mut grads, b, d.iter().map(|v| -v));
                    self.acc(&mut grads, a, d.into_iter());
                }
            }
        }

        let mut out = Gradients::new();
        for (i, g) in grads.into_iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&self.nodes[i].op, g) {
                let shape = self.values[i].as_ref().expect("evaluated").shape.clone();
                let t = Tensor::from_parts(shape, g);
                t.ensure_finite("backward")?;
                out.insert(name.clone(), t);
            }
        }
        Ok(out)
    }

    fn acc(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: NodeId,
        contrib: impl Iterator<Item = f64>,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let n = self.val(target).len();
        let slot = grad_slot(grads, target, n);
        slot.iter_mut().zip(contrib).for_each(|(s, c)| *s += c);
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; n])
}

/// Subgradient of `|d|` with the tie `d == 0` mapped to 0.
fn sign_with_zero(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut g = Graph::new();
        let y = g.input("y");
        let m = g.input("m");
        let prod = g.mul(y, m);
        let (yv, mv) = (t(&[2], &[2.0, 4.0]), t(&[2], &[0.5, 0.25]));
        let out = g
            .forward(&Bindings::new().bind("y", &yv).bind("m", &mv))
            .unwrap();
        assert_eq!(out.data(), &[1.0, 1.0]);
        let _ = prod;

        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        g.l1(a, b);
        let (av, bv) = (t(&[2], &[1.0, 3.0]), t(&[2], &[2.0, 1.0]));
        let out = g
            .forward(&Bindings::new().bind("a", &av).bind("b", &bv))
            .unwrap();
        assert_eq!(out.item(), Some(1.5));

        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        g.sigmoid(x);
        assert_eq!(g.forward(&Bindings::new()).unwrap().item(), Some(0.5));
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.param("x");
        g.mul(x, x);
        let xv = Tensor::scalar(3.0);
        g.forward(&Bindings::new().bind("x", &xv)).unwrap();
        let grads = g.backward().unwrap();
        assert_eq!(grads["x"].data(), &[6.0]);

        let mut g = Graph::new();
        let a = g.param("a");
        let b = g.input("b");
        g.l1(a, b);
        let (av, bv) = (Tensor::scalar(2.0), Tensor::scalar(1.0));
        g.forward(&Bindings::new().bind("a", &av).bind("b", &bv))
            .unwrap();
        assert_eq!(g.backward().unwrap()["a"].data(), &[1.0]);

        // tie: zero subgradient
        let bv = Tensor::scalar(2.0);
        g.forward(&Bindings::new().bind("a", &av).bind("b", &bv))
            .unwrap();
        assert_eq!(g.backward().unwrap()["a"].data(), &[0.0]);
    }

    #[test]
    fn errors() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        g.add(a, b);
        let (av, bv) = (t(&[2], &[1.0, 2.0]), t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(
            g.forward(&Bindings::new().bind("a", &av).bind("b", &bv)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            g.forward(&Bindings::new().bind("a", &av)),
            Err(Error::UnboundInput(_))
        ));

        let mut g = Graph::new();
        let p = g.param("p");
        g.relu(p);
        assert!(matches!(g.backward(), Err(Error::NotEvaluated)));
        g.forward(&Bindings::new().bind("p", &av)).unwrap();
        assert!(matches!(g.backward(), Err(Error::NonScalarRoot(_))));

        let mut g = Graph::new();
        let p = g.input("p");
        let z = g.constant(Tensor::full(&[2], -SAFE_DIV_EPS));
        g.div_eps(p, z);
        assert!(matches!(
            g.forward(&Bindings::new().bind("p", &av)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn forward_to_ignores_unrelated_nodes() {
        let mut g = Graph::new();
        let a = g.input("a");
        let r = g.relu(a);
        let b = g.input("b");
        g.add(r, b);
        let av = t(&[2], &[-1.0, 2.0]);
        let out = g.forward_to(r, &Bindings::new().bind("a", &av)).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
    }
}
