//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] replays the
//! record in reverse and accumulates vector-Jacobian products into the leaves.
//! The operand set is exactly what the encoders and losses in this crate
//! need; there is no graph optimization, no higher-order derivatives and no
//! GPU path.
//!
//! Shapes are two-dimensional throughout. Scalars are `(1,1)`, row vectors
//! `(1,d)`, column vectors `(n,1)`. Elementwise binary ops broadcast a `1`
//! dimension against any size, like ndarray/NumPy. Shape mismatches panic:
//! they are programming errors, not runtime conditions.

mod adam;
pub mod gradcheck;

pub use adam::{AdamConfig, AdamState, ParamStore};

use std::rc::Rc;

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Fixed aggregation structure: `out[dst] += w * x[src]` per edge.
///
/// The weights are graph-derived constants (degree normalization), not
/// trainable, so the op differentiates only through the source matrix.
#[derive(Debug)]
pub struct EdgeAggregateSpec {
    pub out_rows: usize,
    /// (destination row, source row, weight)
    pub edges: Vec<(u32, u32, f64)>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    Sqrt(NodeId),
    Tanh(NodeId),
    Artanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Log(NodeId),
    Exp(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    LogSumExpRows(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Rc<Vec<usize>>),
    EdgeAggregate(NodeId, Rc<EdgeAggregateSpec>),
    Reshape(NodeId),
    GradReverse(NodeId),
    Affine(NodeId, f64),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward pass. One tape per forward/backward; independent tapes
/// may run on independent threads.
pub struct Tape {
    nodes: Vec<Node>,
    /// When set, every op asserts its output is finite (debug aid).
    pub check_finite: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
pub struct Grads {
    by_node: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.by_node[id.0].as_ref()
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize), what: &str) -> (usize, usize) {
    let r = if a.0 == b.0 {
        a.0
    } else if a.0 == 1 {
        b.0
    } else if b.0 == 1 {
        a.0
    } else {
        panic!("{what}: incompatible row counts {a:?} vs {b:?}")
    };
    let c = if a.1 == b.1 {
        a.1
    } else if a.1 == 1 {
        b.1
    } else if b.1 == 1 {
        a.1
    } else {
        panic!("{what}: incompatible col counts {a:?} vs {b:?}")
    };
    (r, c)
}

fn broadcast_binary(
    a: &Array2<f64>,
    b: &Array2<f64>,
    what: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Array2<f64> {
    let shape = broadcast_shape(a.dim(), b.dim(), what);
    let av = a
        .broadcast(shape)
        .unwrap_or_else(|| panic!("{what}: cannot broadcast {:?} to {shape:?}", a.dim()));
    let bv = b
        .broadcast(shape)
        .unwrap_or_else(|| panic!("{what}: cannot broadcast {:?} to {shape:?}", b.dim()));
    let mut out = Array2::zeros(shape);
    ndarray::Zip::from(&mut out)
        .and(&av)
        .and(&bv)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

/// Sum a broadcasted gradient back down to the parent's shape.
fn reduce_to(grad: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad.clone();
    if shape.0 == 1 && g.nrows() > 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() > 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    assert_eq!(g.dim(), shape, "gradient reduction produced wrong shape");
    g
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

const ARTANH_CLAMP: f64 = 1.0 - 1e-7;
const LOG_FLOOR: f64 = 1e-300;

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `(1,1)` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar_value on non-scalar node");
        v[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        if self.check_finite {
            assert!(
                value.iter().all(|v| v.is_finite()),
                "non-finite value out of {op:?}"
            );
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Differentiable input (parameter or anything that needs a gradient).
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = broadcast_binary(self.value(a), self.value(b), "add", |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = broadcast_binary(self.value(a), self.value(b), "sub", |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = broadcast_binary(self.value(a), self.value(b), "mul", |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = broadcast_binary(self.value(a), self.value(b), "div", |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Div(a, b), rg)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| -x);
        let rg = self.rg(a);
        self.push(v, Op::Neg(a), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul: ({ar},{ac}) x ({br},{bc})");
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Matmul(a, b), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let v = Array2::from_elem((1, 1), self.value(a).sum() / n);
        let rg = self.rg(a);
        self.push(v, Op::MeanAll(a), rg)
    }

    /// Sum along axis 1: `(n,d) -> (n,1)`.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(v, Op::SumRows(a), rg)
    }

    /// Sum along axis 0: `(n,d) -> (1,d)`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(v, Op::SumCols(a), rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::sqrt);
        let rg = self.rg(a);
        self.push(v, Op::Sqrt(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    /// artanh with the argument clamped to `±(1 - 1e-7)`.
    pub fn artanh(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .mapv(|x| x.clamp(-ARTANH_CLAMP, ARTANH_CLAMP).atanh());
        let rg = self.rg(a);
        self.push(v, Op::Artanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(stable_sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(stable_softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(v, Op::LeakyRelu(a, slope), rg)
    }

    /// Natural log, input floored at 1e-300 to keep the value finite.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(LOG_FLOOR).ln());
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(v, Op::Clamp(a, lo, hi), rg)
    }

    pub fn clamp_min(&mut self, a: NodeId, lo: f64) -> NodeId {
        self.clamp(a, lo, f64::INFINITY)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = Array2::zeros(x.dim());
        for (mut orow, xrow) in v.outer_iter_mut().zip(x.outer_iter()) {
            let m = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &xi) in orow.iter_mut().zip(xrow.iter()) {
                *o = (xi - m).exp();
                sum += *o;
            }
            orow.mapv_inplace(|e| e / sum);
        }
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise `log(sum(exp(x)))`, max-shifted: `(n,d) -> (n,1)`.
    pub fn logsumexp_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = Array2::zeros((x.nrows(), 1));
        for (i, xrow) in x.outer_iter().enumerate() {
            let m = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = xrow.iter().map(|&xi| (xi - m).exp()).sum();
            v[(i, 0)] = m + s.ln();
        }
        let rg = self.rg(a);
        self.push(v, Op::LogSumExpRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let n = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Array2::zeros((n, total));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), n, "concat_cols: row mismatch");
            v.slice_mut(ndarray::s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        let d = self.value(parts[0]).ncols();
        let total: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut v = Array2::zeros((total, d));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.ncols(), d, "concat_rows: col mismatch");
            v.slice_mut(ndarray::s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self
            .value(a)
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start, len), rg)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Rc<Vec<usize>>) -> NodeId {
        let x = self.value(a);
        let mut v = Array2::zeros((indices.len(), x.ncols()));
        for (i, &ix) in indices.iter().enumerate() {
            v.row_mut(i).assign(&x.row(ix));
        }
        let rg = self.rg(a);
        self.push(v, Op::GatherRows(a, indices), rg)
    }

    pub fn edge_aggregate(&mut self, a: NodeId, spec: Rc<EdgeAggregateSpec>) -> NodeId {
        let x = self.value(a);
        let mut v = Array2::zeros((spec.out_rows, x.ncols()));
        for &(dst, src, w) in &spec.edges {
            let src_row = x.row(src as usize).to_owned();
            let mut out_row = v.row_mut(dst as usize);
            out_row.scaled_add(w, &src_row);
        }
        let rg = self.rg(a);
        self.push(v, Op::EdgeAggregate(a, spec), rg)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape: element count mismatch");
        let v = Array2::from_shape_vec((rows, cols), x.iter().cloned().collect()).unwrap();
        let rg = self.rg(a);
        self.push(v, Op::Reshape(a), rg)
    }

    /// Identity forward, negated gradient backward (adversarial wiring).
    pub fn grad_reverse(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        let rg = self.rg(a);
        self.push(v, Op::GradReverse(a), rg)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let v = self.value(a).mapv(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(v, Op::Affine(a, scale), rg)
    }

    // --- composite helpers -------------------------------------------------

    /// Row L2 norm, floored at 1e-15: `(n,d) -> (n,1)`.
    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let sq = self.mul(a, a);
        let s = self.sum_rows(sq);
        let s = self.clamp_min(s, 1e-30);
        self.sqrt(s)
    }

    /// Row-wise dot product of equally shaped matrices: `(n,1)`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let p = self.mul(a, b);
        self.sum_rows(p)
    }

    /// Detach: value copy with no gradient path.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.constant(v)
    }

    /// Reverse-mode sweep from a scalar root. Returns per-node gradients;
    /// leaves you care about are read through [`Grads::get`].
    pub fn backward(&self, root: NodeId) -> Grads {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let out_val = &self.nodes[i].value;
            let send = |grads: &mut Vec<Option<Array2<f64>>>, to: NodeId, dg: Array2<f64>| {
                if !self.nodes[to.0].requires_grad {
                    return;
                }
                let shaped = reduce_to(&dg, self.nodes[to.0].value.dim());
                match &mut grads[to.0] {
                    Some(acc) => *acc += &shaped,
                    slot @ None => *slot = Some(shaped),
                }
            };
            match &self.nodes[i].op {
                Op::Leaf | Op::Const => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = broadcast_binary(&g, bv, "mul-bw", |gi, yi| gi * yi);
                    let gb = broadcast_binary(&g, av, "mul-bw", |gi, xi| gi * xi);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = broadcast_binary(&g, bv, "div-bw", |gi, yi| gi / yi);
                    let axb = broadcast_binary(av, bv, "div-bw", |x, y| -x / (y * y));
                    let gb = broadcast_binary(&g, &axb, "div-bw", |gi, t| gi * t);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::Neg(a) => send(&mut grads, *a, g.mapv(|x| -x)),
                Op::Matmul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    send(&mut grads, *a, g.dot(&bv.t()));
                    send(&mut grads, *b, av.t().dot(&g));
                }
                Op::Transpose(a) => send(&mut grads, *a, g.t().to_owned()),
                Op::SumAll(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    send(&mut grads, *a, Array2::from_elem(shape, g[(0, 0)]));
                }
                Op::MeanAll(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let n = (shape.0 * shape.1) as f64;
                    send(&mut grads, *a, Array2::from_elem(shape, g[(0, 0)] / n));
                }
                Op::SumRows(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let gb = g.broadcast(shape).unwrap().to_owned();
                    send(&mut grads, *a, gb);
                }
                Op::SumCols(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let gb = g.broadcast(shape).unwrap().to_owned();
                    send(&mut grads, *a, gb);
                }
                Op::Sqrt(a) => {
                    let dg = ndarray::Zip::from(&g)
                        .and(out_val)
                        .map_collect(|&gi, &yi| gi * 0.5 / yi.max(1e-300));
                    send(&mut grads, *a, dg);
                }
                Op::Tanh(a) => {
                    let dg = ndarray::Zip::from(&g)
                        .and(out_val)
                        .map_collect(|&gi, &yi| gi * (1.0 - yi * yi));
                    send(&mut grads, *a, dg);
                }
                Op::Artanh(a) => {
                    let av = &self.nodes[a.0].value;
                    let dg = ndarray::Zip::from(&g).and(av).map_collect(|&gi, &xi| {
                        if xi.abs() >= ARTANH_CLAMP {
                            0.0
                        } else {
                            gi / (1.0 - xi * xi)
                        }
                    });
                    send(&mut grads, *a, dg);
                }
                Op::Sigmoid(a) => {
                    let dg = ndarray::Zip::from(&g)
                        .and(out_val)
                        .map_collect(|&gi, &yi| gi * yi * (1.0 - yi));
                    send(&mut grads, *a, dg);
                }
                Op::Softplus(a) => {
                    let av = &self.nodes[a.0].value;
                    let dg = ndarray::Zip::from(&g)
                        .and(av)
                        .map_collect(|&gi, &xi| gi * stable_sigmoid(xi));
                    send(&mut grads, *a, dg);
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let dg = ndarray::Zip::from(&g)
                        .and(av)
                        .map_collect(|&gi, &xi| if xi > 0.0 { gi } else { 0.0 });
                    send(&mut grads, *a, dg);
                }
                Op::LeakyRelu(a, slope) => {
                    let av = &self.nodes[a.0].value;
                    let s = *slope;
                    let dg = ndarray::Zip::from(&g)
                        .and(av)
                        .map_collect(|&gi, &xi| if xi > 0.0 { gi } else { s * gi });
                    send(&mut grads, *a, dg);
                }
                Op::Log(a) => {
                    let av = &self.nodes[a.0].value;
                    let dg = ndarray::Zip::from(&g)
                        .and(av)
                        .map_collect(|&gi, &xi| gi / xi.max(LOG_FLOOR));
                    send(&mut grads, *a, dg);
                }
                Op::Exp(a) => {
                    let dg = ndarray::Zip::from(&g)
                        .and(out_val)
                        .map_collect(|&gi, &yi| gi * yi);
                    send(&mut grads, *a, dg);
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &self.nodes[a.0].value;
                    let (lo, hi) = (*lo, *hi);
                    let dg = ndarray::Zip::from(&g)
                        .and(av)
                        .map_collect(|&gi, &xi| if xi > lo && xi < hi { gi } else { 0.0 });
                    send(&mut grads, *a, dg);
                }
                Op::SoftmaxRows(a) => {
                    // dx = y * (g - sum(g*y, rows))
                    let y = out_val;
                    let gy = &g * y;
                    let row_sums = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let dg = y * &(&g - &row_sums.broadcast(g.dim()).unwrap());
                    send(&mut grads, *a, dg);
                }
                Op::LogSumExpRows(a) => {
                    let av = &self.nodes[a.0].value;
                    let mut dg = Array2::zeros(av.dim());
                    for (i, xrow) in av.outer_iter().enumerate() {
                        let m = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        let exps: Vec<f64> = xrow
                            .iter()
                            .map(|&xi| {
                                let e = (xi - m).exp();
                                sum += e;
                                e
                            })
                            .collect();
                        for (j, e) in exps.iter().enumerate() {
                            dg[(i, j)] = g[(i, 0)] * e / sum;
                        }
                    }
                    send(&mut grads, *a, dg);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let gp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        send(&mut grads, p, gp);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.nodes[p.0].value.nrows();
                        let gp = g.slice(ndarray::s![at..at + h, ..]).to_owned();
                        send(&mut grads, p, gp);
                        at += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let shape = self.nodes[a.0].value.dim();
                    let mut dg = Array2::zeros(shape);
                    dg.slice_mut(ndarray::s![.., *start..*start + *len]).assign(&g);
                    send(&mut grads, *a, dg);
                }
                Op::GatherRows(a, indices) => {
                    let shape = self.nodes[a.0].value.dim();
                    let mut dg = Array2::zeros(shape);
                    for (row, &ix) in indices.iter().enumerate() {
                        let grow = g.row(row).to_owned();
                        dg.row_mut(ix).scaled_add(1.0, &grow);
                    }
                    send(&mut grads, *a, dg);
                }
                Op::EdgeAggregate(a, spec) => {
                    let shape = self.nodes[a.0].value.dim();
                    let mut dg = Array2::zeros(shape);
                    for &(dst, src, w) in &spec.edges {
                        let grow = g.row(dst as usize).to_owned();
                        dg.row_mut(src as usize).scaled_add(w, &grow);
                    }
                    send(&mut grads, *a, dg);
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    let dg =
                        Array2::from_shape_vec(shape, g.iter().cloned().collect()).unwrap();
                    send(&mut grads, *a, dg);
                }
                Op::GradReverse(a) => send(&mut grads, *a, g.mapv(|x| -x)),
                Op::Affine(a, scale) => {
                    let s = *scale;
                    send(&mut grads, *a, g.mapv(|x| s * x));
                }
            }
        }
        Grads { by_node: grads }
    }
}
