use std::cell::RefCell;
use std::collections::BTreeMap;

use super::params::{GradSet, ParamSet};
use super::svd3::{svd3_backward, svd3_decompose, Svd3Error};
use super::Tensor;

/// Recorded operation graph for one forward pass.
///
/// Shapes are contracts: mismatches panic immediately (the same convention as
/// `ndarray`); numeric failures surface as `Result`s or non-finite values that
/// callers inspect. Nodes are append-only, so reverse creation order is a
/// valid reverse topological order for the backward pass, visiting each node
/// exactly once.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<BTreeMap<String, usize>>,
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Concat {
        axis: usize,
        parts: Vec<usize>,
    },
    Slice {
        src: usize,
        axis: usize,
        start: usize,
        end: usize,
    },
    GatherRows {
        src: usize,
        idx: Vec<usize>,
    },
    ScatterFlat {
        src: usize,
        positions: Vec<usize>,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    SumAxis {
        src: usize,
        axis: usize,
    },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Recip(usize),
    Softmax {
        src: usize,
        axis: usize,
    },
    ClampMin {
        src: usize,
        floor: f64,
    },
    ScaleRows {
        mat: usize,
        scale: usize,
    },
    ScaleCols {
        mat: usize,
        scale: usize,
    },
    Outer(usize, usize),
    AddRow {
        mat: usize,
        row: usize,
    },
    Svd3(usize),
}

/// Handle to one tape node. Copyable; all arithmetic goes through the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn wants(&self, parents: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        parents.iter().any(|&p| nodes[p].needs_grad)
    }

    /// Leaf with no gradient tracking.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Gradient-tracked leaf.
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Gradient-tracked leaf bound to a parameter name. Binding the same name
    /// twice returns the same node, so gradients accumulate correctly. A tape
    /// belongs to one forward pass over one parameter set; rebinding a name
    /// to a different tensor is a bug and panics.
    pub fn bind(&self, params: &ParamSet, name: &str) -> Var<'_> {
        let tensor = params.get(name);
        if let Some(&idx) = self.bound.borrow().get(name) {
            let nodes = self.nodes.borrow();
            assert!(
                std::ptr::eq(nodes[idx].value.data().as_ptr(), tensor.data().as_ptr()),
                "parameter `{name}` rebound to a different tensor on the same tape"
            );
            return Var { tape: self, idx };
        }
        let var = self.input(tensor.clone());
        self.bound.borrow_mut().insert(name.to_string(), var.idx);
        var
    }

    fn value_of(&self, idx: usize) -> Tensor {
        self.nodes.borrow()[idx].value.clone()
    }

    pub fn concat<'t>(&'t self, axis: usize, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let tensors: Vec<Tensor> = parts.iter().map(|v| v.value()).collect();
        let rank = tensors[0].rank();
        assert!(tensors.iter().all(|t| t.rank() == rank));
        let value = match (rank, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for t in &tensors {
                    data.extend_from_slice(t.data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = tensors[0].cols();
                assert!(
                    tensors.iter().all(|t| t.cols() == cols),
                    "concat cols differ"
                );
                let rows = tensors.iter().map(|t| t.rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for t in &tensors {
                    data.extend_from_slice(t.data());
                }
                Tensor::matrix(rows, cols, data)
            }
            (2, 1) => {
                let rows = tensors[0].rows();
                assert!(
                    tensors.iter().all(|t| t.rows() == rows),
                    "concat rows differ"
                );
                let cols: usize = tensors.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for t in &tensors {
                        data.extend_from_slice(t.row_slice(r));
                    }
                }
                Tensor::matrix(rows, cols, data)
            }
            _ => panic!("concat: unsupported rank {rank} / axis {axis}"),
        };
        let idxs: Vec<usize> = parts.iter().map(|v| v.idx).collect();
        let needs = self.wants(&idxs);
        self.push(Op::Concat { axis, parts: idxs }, value, needs)
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Grads {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        assert_eq!(
            nodes[loss.idx].value.len(),
            1,
            "backward() requires a scalar loss"
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.idx] = Some(vec![1.0]);

        for i in (0..=loss.idx).rev() {
            if grads[i].is_none() || !nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            backprop_node(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut by_name = GradSet::new();
        for (name, &idx) in self.bound.borrow().iter() {
            let shape = nodes[idx].value.shape().to_vec();
            let data = grads[idx]
                .clone()
                .unwrap_or_else(|| vec![0.0; nodes[idx].value.len()]);
            by_name.insert(name.clone(), Tensor::new(shape, data));
        }
        Grads {
            per_node: grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            by_name,
        }
    }
}

/// Result of a backward sweep.
pub struct Grads {
    per_node: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    by_name: GradSet,
}

impl Grads {
    /// Gradient w.r.t. a specific var (zeros if the loss does not reach it).
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        let shape = self.shapes[var.idx].clone();
        match &self.per_node[var.idx] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// Gradients for all named (bound) parameters.
    pub fn into_gradset(self) -> GradSet {
        self.by_name
    }

    pub fn by_name(&self) -> &GradSet {
        &self.by_name
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

#[allow(clippy::needless_range_loop)]
fn backprop_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |j: usize| -> &Tensor { &nodes[j].value };
    let len = |j: usize| nodes[j].value.len();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for (dst, &gv) in accumulate(&mut grads[*a], len(*a)).iter_mut().zip(g) {
                *dst += gv;
            }
            for (dst, &gv) in accumulate(&mut grads[*b], len(*b)).iter_mut().zip(g) {
                *dst += gv;
            }
        }
        Op::Sub(a, b) => {
            for (dst, &gv) in accumulate(&mut grads[*a], len(*a)).iter_mut().zip(g) {
                *dst += gv;
            }
            for (dst, &gv) in accumulate(&mut grads[*b], len(*b)).iter_mut().zip(g) {
                *dst -= gv;
            }
        }
        Op::Neg(a) => {
            for (dst, &gv) in accumulate(&mut grads[*a], len(*a)).iter_mut().zip(g) {
                *dst -= gv;
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).clone(), val(*b).clone());
            {
                let da = accumulate(&mut grads[*a], len(*a));
                for k in 0..g.len() {
                    da[k] += g[k] * vb.data()[k];
                }
            }
            let db = accumulate(&mut grads[*b], len(*b));
            for k in 0..g.len() {
                db[k] += g[k] * va.data()[k];
            }
        }
        Op::Scale(a, c) => {
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                da[k] += g[k] * c;
            }
        }
        Op::AddScalar(a) => {
            for (dst, &gv) in accumulate(&mut grads[*a], len(*a)).iter_mut().zip(g) {
                *dst += gv;
            }
        }
        Op::Matmul(a, b) => {
            let (va, vb) = (val(*a).clone(), val(*b).clone());
            let (m, k) = (va.rows(), va.cols());
            let n = vb.cols();
            {
                // dA += G * B^T
                let da = accumulate(&mut grads[*a], len(*a));
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for c in 0..k {
                        let brow = vb.row_slice(c);
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        da[r * k + c] += acc;
                    }
                }
            }
            // dB += A^T * G
            let db = accumulate(&mut grads[*b], len(*b));
            for r in 0..m {
                let arow = va.row_slice(r);
                let grow = &g[r * n..(r + 1) * n];
                for c in 0..k {
                    let aval = arow[c];
                    if aval == 0.0 {
                        continue;
                    }
                    let dbrow = &mut db[c * n..(c + 1) * n];
                    for j in 0..n {
                        dbrow[j] += aval * grow[j];
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r_out, c_out) = (nodes[i].value.rows(), nodes[i].value.cols());
            let da = accumulate(&mut grads[*a], len(*a));
            for r in 0..r_out {
                for c in 0..c_out {
                    da[c * r_out + r] += g[r * c_out + c];
                }
            }
        }
        Op::Concat { axis, parts } => {
            let out = &nodes[i].value;
            match (out.rank(), axis) {
                (1, 0) | (2, 0) => {
                    let mut offset = 0;
                    for &p in parts {
                        let plen = len(p);
                        let dp = accumulate(&mut grads[p], plen);
                        for k in 0..plen {
                            dp[k] += g[offset + k];
                        }
                        offset += plen;
                    }
                }
                (2, 1) => {
                    let rows = out.rows();
                    let total_cols = out.cols();
                    let mut col_off = 0;
                    for &p in parts {
                        let pc = nodes[p].value.cols();
                        let dp = accumulate(&mut grads[p], rows * pc);
                        for r in 0..rows {
                            for c in 0..pc {
                                dp[r * pc + c] += g[r * total_cols + col_off + c];
                            }
                        }
                        col_off += pc;
                    }
                }
                _ => unreachable!(),
            }
        }
        Op::Slice {
            src,
            axis,
            start,
            end,
        } => {
            let sv = val(*src).clone();
            let ds = accumulate(&mut grads[*src], sv.len());
            match (sv.rank(), axis) {
                (1, 0) => {
                    for k in 0..(end - start) {
                        ds[start + k] += g[k];
                    }
                }
                (2, 0) => {
                    let c = sv.cols();
                    for k in 0..(end - start) * c {
                        ds[start * c + k] += g[k];
                    }
                }
                (2, 1) => {
                    let (r, c) = (sv.rows(), sv.cols());
                    let w = end - start;
                    for row in 0..r {
                        for k in 0..w {
                            ds[row * c + start + k] += g[row * w + k];
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        Op::GatherRows { src, idx } => {
            let c = val(*src).cols();
            let ds = accumulate(&mut grads[*src], len(*src));
            for (out_r, &src_r) in idx.iter().enumerate() {
                for k in 0..c {
                    ds[src_r * c + k] += g[out_r * c + k];
                }
            }
        }
        Op::ScatterFlat { src, positions } => {
            let ds = accumulate(&mut grads[*src], len(*src));
            for (k, &pos) in positions.iter().enumerate() {
                ds[k] += g[pos];
            }
        }
        Op::Reshape(a) => {
            for (dst, &gv) in accumulate(&mut grads[*a], len(*a)).iter_mut().zip(g) {
                *dst += gv;
            }
        }
        Op::Sum(a) => {
            let da = accumulate(&mut grads[*a], len(*a));
            for dst in da.iter_mut() {
                *dst += g[0];
            }
        }
        Op::Mean(a) => {
            let n = len(*a) as f64;
            let da = accumulate(&mut grads[*a], len(*a));
            for dst in da.iter_mut() {
                *dst += g[0] / n;
            }
        }
        Op::SumAxis { src, axis } => {
            let (r, c) = (val(*src).rows(), val(*src).cols());
            let ds = accumulate(&mut grads[*src], r * c);
            match axis {
                1 => {
                    for row in 0..r {
                        for col in 0..c {
                            ds[row * c + col] += g[row];
                        }
                    }
                }
                0 => {
                    for row in 0..r {
                        for col in 0..c {
                            ds[row * c + col] += g[col];
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        Op::Sigmoid(a) => {
            let y = nodes[i].value.clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                let s = y.data()[k];
                da[k] += g[k] * s * (1.0 - s);
            }
        }
        Op::Tanh(a) => {
            let y = nodes[i].value.clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                let t = y.data()[k];
                da[k] += g[k] * (1.0 - t * t);
            }
        }
        Op::Relu(a) => {
            let x = val(*a).clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                if x.data()[k] > 0.0 {
                    da[k] += g[k];
                }
            }
        }
        Op::Exp(a) => {
            let y = nodes[i].value.clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                da[k] += g[k] * y.data()[k];
            }
        }
        Op::Log(a) => {
            let x = val(*a).clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                da[k] += g[k] / x.data()[k];
            }
        }
        Op::Sqrt(a) => {
            let y = nodes[i].value.clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                da[k] += g[k] * 0.5 / y.data()[k];
            }
        }
        Op::Square(a) => {
            let x = val(*a).clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                da[k] += g[k] * 2.0 * x.data()[k];
            }
        }
        Op::Recip(a) => {
            let x = val(*a).clone();
            let da = accumulate(&mut grads[*a], len(*a));
            for k in 0..g.len() {
                let xv = x.data()[k];
                da[k] -= g[k] / (xv * xv);
            }
        }
        Op::Softmax { src, axis } => {
            // dx = y * (g - sum(g*y)) per softmax group.
            let y = nodes[i].value.clone();
            let ds = accumulate(&mut grads[*src], y.len());
            let apply = |ds: &mut [f64], ys: &[f64], gs: &[f64], stride: usize, base: usize| {
                let n = ys.len();
                let mut dot = 0.0;
                for k in 0..n {
                    dot += gs[k] * ys[k];
                }
                for k in 0..n {
                    ds[base + k * stride] += ys[k] * (gs[k] - dot);
                }
            };
            if y.rank() == 1 {
                apply(ds, y.data(), g, 1, 0);
            } else {
                let (r, c) = (y.rows(), y.cols());
                match axis {
                    1 => {
                        for row in 0..r {
                            let ys = &y.data()[row * c..(row + 1) * c];
                            let gs = &g[row * c..(row + 1) * c];
                            apply(ds, ys, gs, 1, row * c);
                        }
                    }
                    0 => {
                        for col in 0..c {
                            let ys: Vec<f64> = (0..r).map(|row| y.data()[row * c + col]).collect();
                            let gs: Vec<f64> = (0..r).map(|row| g[row * c + col]).collect();
                            apply(ds, &ys, &gs, c, col);
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        Op::ClampMin { src, floor } => {
            // Zero gradient in the clamped region.
            let x = val(*src).clone();
            let ds = accumulate(&mut grads[*src], x.len());
            for k in 0..g.len() {
                if x.data()[k] > *floor {
                    ds[k] += g[k];
                }
            }
        }
        Op::ScaleRows { mat, scale } => {
            let (vm, vs) = (val(*mat).clone(), val(*scale).clone());
            let (r, c) = (vm.rows(), vm.cols());
            {
                let dm = accumulate(&mut grads[*mat], r * c);
                for row in 0..r {
                    let s = vs.data()[row];
                    for col in 0..c {
                        dm[row * c + col] += g[row * c + col] * s;
                    }
                }
            }
            let dsc = accumulate(&mut grads[*scale], r);
            for row in 0..r {
                let mut acc = 0.0;
                for col in 0..c {
                    acc += g[row * c + col] * vm.data()[row * c + col];
                }
                dsc[row] += acc;
            }
        }
        Op::ScaleCols { mat, scale } => {
            let (vm, vs) = (val(*mat).clone(), val(*scale).clone());
            let (r, c) = (vm.rows(), vm.cols());
            {
                let dm = accumulate(&mut grads[*mat], r * c);
                for row in 0..r {
                    for col in 0..c {
                        dm[row * c + col] += g[row * c + col] * vs.data()[col];
                    }
                }
            }
            let dsc = accumulate(&mut grads[*scale], c);
            for row in 0..r {
                for col in 0..c {
                    dsc[col] += g[row * c + col] * vm.data()[row * c + col];
                }
            }
        }
        Op::Outer(a, b) => {
            let (va, vb) = (val(*a).clone(), val(*b).clone());
            let (n, m) = (va.len(), vb.len());
            {
                let da = accumulate(&mut grads[*a], n);
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..m {
                        acc += g[r * m + c] * vb.data()[c];
                    }
                    da[r] += acc;
                }
            }
            let db = accumulate(&mut grads[*b], m);
            for r in 0..n {
                let av = va.data()[r];
                for c in 0..m {
                    db[c] += g[r * m + c] * av;
                }
            }
        }
        Op::AddRow { mat, row } => {
            let (r, c) = (val(*mat).rows(), val(*mat).cols());
            {
                let dm = accumulate(&mut grads[*mat], r * c);
                for k in 0..g.len() {
                    dm[k] += g[k];
                }
            }
            let dr = accumulate(&mut grads[*row], c);
            for rr in 0..r {
                for cc in 0..c {
                    dr[cc] += g[rr * c + cc];
                }
            }
        }
        Op::Svd3(a) => {
            // Packed layout: [U(9) | S(3) | V(9)].
            let packed = nodes[i].value.data();
            let (u, s, v) = (&packed[0..9], &packed[9..12], &packed[12..21]);
            let (du, ds_, dv) = (&g[0..9], &g[9..12], &g[12..21]);
            let dm = svd3_backward(u, s, v, du, ds_, dv);
            let da = accumulate(&mut grads[*a], 9);
            for k in 0..9 {
                da[k] += dm[k];
            }
        }
    }
}

macro_rules! unary_op {
    ($name:ident, $variant:ident, $f:expr) => {
        pub fn $name(self) -> Var<'t> {
            let v = self.value();
            let f = $f;
            let data: Vec<f64> = v.data().iter().map(|&x| f(x)).collect();
            let out = Tensor::new(v.shape().to_vec(), data);
            let needs = self.tape.wants(&[self.idx]);
            self.tape.push(Op::$variant(self.idx), out, needs)
        }
    };
}

// `add`/`mul`/... keep method-call chaining ergonomic; the operator traits
// are implemented as well.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn add(self, o: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let needs = self.tape.wants(&[self.idx, o.idx]);
        self.tape.push(
            Op::Add(self.idx, o.idx),
            Tensor::new(a.shape().to_vec(), data),
            needs,
        )
    }

    pub fn sub(self, o: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "sub shape mismatch");
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let needs = self.tape.wants(&[self.idx, o.idx]);
        self.tape.push(
            Op::Sub(self.idx, o.idx),
            Tensor::new(a.shape().to_vec(), data),
            needs,
        )
    }

    pub fn mul(self, o: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let needs = self.tape.wants(&[self.idx, o.idx]);
        self.tape.push(
            Op::Mul(self.idx, o.idx),
            Tensor::new(a.shape().to_vec(), data),
            needs,
        )
    }

    pub fn neg(self) -> Var<'t> {
        let a = self.value();
        let data: Vec<f64> = a.data().iter().map(|x| -x).collect();
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::Neg(self.idx),
            Tensor::new(a.shape().to_vec(), data),
            needs,
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let a = self.value();
        let data: Vec<f64> = a.data().iter().map(|x| x * c).collect();
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::Scale(self.idx, c),
            Tensor::new(a.shape().to_vec(), data),
            needs,
        )
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let a = self.value();
        let data: Vec<f64> = a.data().iter().map(|x| x + c).collect();
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::AddScalar(self.idx),
            Tensor::new(a.shape().to_vec(), data),
            needs,
        )
    }

    pub fn matmul(self, o: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.rank(), 2, "matmul lhs must be a matrix");
        assert_eq!(b.rank(), 2, "matmul rhs must be a matrix");
        assert_eq!(
            a.cols(),
            b.rows(),
            "matmul inner dimensions {} vs {}",
            a.cols(),
            b.rows()
        );
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let arow = a.row_slice(r);
            let orow = &mut data[r * n..(r + 1) * n];
            for (kk, &av) in arow.iter().enumerate().take(k) {
                if av == 0.0 {
                    continue;
                }
                let brow = b.row_slice(kk);
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let needs = self.tape.wants(&[self.idx, o.idx]);
        self.tape.push(
            Op::Matmul(self.idx, o.idx),
            Tensor::matrix(m, n, data),
            needs,
        )
    }

    pub fn t(self) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.rank(), 2, "transpose of non-matrix");
        let (r, c) = (a.rows(), a.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.at(i, j);
            }
        }
        let needs = self.tape.wants(&[self.idx]);
        self.tape
            .push(Op::Transpose(self.idx), Tensor::matrix(c, r, data), needs)
    }

    pub fn slice(self, axis: usize, start: usize, end: usize) -> Var<'t> {
        let a = self.value();
        assert!(start < end, "empty slice");
        let value = match (a.rank(), axis) {
            (1, 0) => {
                assert!(end <= a.len());
                Tensor::vector(a.data()[start..end].to_vec())
            }
            (2, 0) => {
                assert!(end <= a.rows());
                let c = a.cols();
                Tensor::matrix(end - start, c, a.data()[start * c..end * c].to_vec())
            }
            (2, 1) => {
                assert!(end <= a.cols());
                let (r, w) = (a.rows(), end - start);
                let mut data = Vec::with_capacity(r * w);
                for row in 0..r {
                    data.extend_from_slice(&a.row_slice(row)[start..end]);
                }
                Tensor::matrix(r, w, data)
            }
            _ => panic!("slice: unsupported rank/axis"),
        };
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::Slice {
                src: self.idx,
                axis,
                start,
                end,
            },
            value,
            needs,
        )
    }

    /// Row `i` of a matrix as a 1-by-cols matrix.
    pub fn row(self, i: usize) -> Var<'t> {
        self.slice(0, i, i + 1)
    }

    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.rank(), 2);
        let c = a.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &r in idx {
            assert!(r < a.rows(), "gather_rows index out of range");
            data.extend_from_slice(a.row_slice(r));
        }
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::GatherRows {
                src: self.idx,
                idx: idx.to_vec(),
            },
            Tensor::matrix(idx.len(), c, data),
            needs,
        )
    }

    /// Scatter-add a vector into a zero tensor of `shape` at flat `positions`.
    pub fn scatter_flat(self, shape: Vec<usize>, positions: &[usize]) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.rank(), 1, "scatter_flat source must be a vector");
        assert_eq!(a.len(), positions.len());
        let total: usize = shape.iter().product();
        let mut data = vec![0.0; total];
        for (k, &pos) in positions.iter().enumerate() {
            assert!(pos < total, "scatter position out of range");
            data[pos] += a.data()[k];
        }
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::ScatterFlat {
                src: self.idx,
                positions: positions.to_vec(),
            },
            Tensor::new(shape, data),
            needs,
        )
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'t> {
        let a = self.value();
        let total: usize = shape.iter().product();
        assert_eq!(a.len(), total, "reshape element count mismatch");
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::Reshape(self.idx),
            Tensor::new(shape, a.data().to_vec()),
            needs,
        )
    }

    pub fn sum(self) -> Var<'t> {
        let a = self.value();
        let s: f64 = a.data().iter().sum();
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(Op::Sum(self.idx), Tensor::scalar(s), needs)
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let s: f64 = a.data().iter().sum::<f64>() / a.len() as f64;
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(Op::Mean(self.idx), Tensor::scalar(s), needs)
    }

    /// Sum a matrix along `axis` (0: over rows -> per-column; 1: over columns
    /// -> per-row), yielding a vector.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.rank(), 2);
        let (r, c) = (a.rows(), a.cols());
        let value = match axis {
            1 => {
                let mut data = vec![0.0; r];
                for row in 0..r {
                    data[row] = a.row_slice(row).iter().sum();
                }
                Tensor::vector(data)
            }
            0 => {
                let mut data = vec![0.0; c];
                for row in 0..r {
                    for (col, d) in data.iter_mut().enumerate() {
                        *d += a.at(row, col);
                    }
                }
                Tensor::vector(data)
            }
            _ => panic!("sum_axis: axis must be 0 or 1"),
        };
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::SumAxis {
                src: self.idx,
                axis,
            },
            value,
            needs,
        )
    }

    unary_op!(sigmoid, Sigmoid, |x: f64| 1.0 / (1.0 + (-x).exp()));
    unary_op!(tanh, Tanh, |x: f64| x.tanh());
    unary_op!(relu, Relu, |x: f64| x.max(0.0));
    unary_op!(exp, Exp, |x: f64| x.exp());
    unary_op!(log, Log, |x: f64| x.ln());
    unary_op!(sqrt, Sqrt, |x: f64| x.sqrt());
    unary_op!(square, Square, |x: f64| x * x);
    unary_op!(recip, Recip, |x: f64| 1.0 / x);

    pub fn softmax(self, axis: usize) -> Var<'t> {
        let a = self.value();
        let soft = |xs: &[f64], out: &mut [f64]| {
            let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = (x - mx).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        };
        let value = if a.rank() == 1 {
            let mut out = vec![0.0; a.len()];
            soft(a.data(), &mut out);
            Tensor::vector(out)
        } else {
            let (r, c) = (a.rows(), a.cols());
            let mut out = vec![0.0; r * c];
            match axis {
                1 => {
                    for row in 0..r {
                        soft(a.row_slice(row), &mut out[row * c..(row + 1) * c]);
                    }
                }
                0 => {
                    for col in 0..c {
                        let xs: Vec<f64> = (0..r).map(|row| a.at(row, col)).collect();
                        let mut o = vec![0.0; r];
                        soft(&xs, &mut o);
                        for row in 0..r {
                            out[row * c + col] = o[row];
                        }
                    }
                }
                _ => panic!("softmax: axis must be 0 or 1"),
            }
            Tensor::matrix(r, c, out)
        };
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::Softmax {
                src: self.idx,
                axis,
            },
            value,
            needs,
        )
    }

    /// Elementwise `max(x, floor)` with zero gradient in the clamped region.
    pub fn clamp_min(self, floor: f64) -> Var<'t> {
        let a = self.value();
        let data: Vec<f64> = a.data().iter().map(|&x| x.max(floor)).collect();
        let needs = self.tape.wants(&[self.idx]);
        self.tape.push(
            Op::ClampMin {
                src: self.idx,
                floor,
            },
            Tensor::new(a.shape().to_vec(), data),
            needs,
        )
    }

    /// Multiply row `i` by `scale[i]`.
    pub fn scale_rows(self, scale: Var<'t>) -> Var<'t> {
        let (a, s) = (self.value(), scale.value());
        assert_eq!(a.rank(), 2);
        assert_eq!(s.rank(), 1);
        assert_eq!(a.rows(), s.len(), "scale_rows length mismatch");
        let c = a.cols();
        let mut data = Vec::with_capacity(a.len());
        for row in 0..a.rows() {
            let sv = s.data()[row];
            data.extend(a.row_slice(row).iter().map(|x| x * sv));
        }
        let needs = self.tape.wants(&[self.idx, scale.idx]);
        self.tape.push(
            Op::ScaleRows {
                mat: self.idx,
                scale: scale.idx,
            },
            Tensor::matrix(a.rows(), c, data),
            needs,
        )
    }

    /// Multiply column `j` by `scale[j]`.
    pub fn scale_cols(self, scale: Var<'t>) -> Var<'t> {
        let (a, s) = (self.value(), scale.value());
        assert_eq!(a.rank(), 2);
        assert_eq!(s.rank(), 1);
        assert_eq!(a.cols(), s.len(), "scale_cols length mismatch");
        let (r, c) = (a.rows(), a.cols());
        let mut data = Vec::with_capacity(a.len());
        for row in 0..r {
            data.extend(a.row_slice(row).iter().zip(s.data()).map(|(x, sv)| x * sv));
        }
        let needs = self.tape.wants(&[self.idx, scale.idx]);
        self.tape.push(
            Op::ScaleCols {
                mat: self.idx,
                scale: scale.idx,
            },
            Tensor::matrix(r, c, data),
            needs,
        )
    }

    /// Outer product of two vectors.
    pub fn outer(self, o: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.rank(), 1);
        assert_eq!(b.rank(), 1);
        let (n, m) = (a.len(), b.len());
        let mut data = Vec::with_capacity(n * m);
        for &av in a.data() {
            data.extend(b.data().iter().map(|&bv| av * bv));
        }
        let needs = self.tape.wants(&[self.idx, o.idx]);
        self.tape.push(
            Op::Outer(self.idx, o.idx),
            Tensor::matrix(n, m, data),
            needs,
        )
    }

    /// Broadcast-add a rank-1 row vector to every row of a matrix.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let (a, rv) = (self.value(), row.value());
        assert_eq!(a.rank(), 2);
        assert_eq!(rv.rank(), 1);
        assert_eq!(a.cols(), rv.len(), "add_row width mismatch");
        let (r, c) = (a.rows(), a.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(a.row_slice(i).iter().zip(rv.data()).map(|(x, y)| x + y));
        }
        let needs = self.tape.wants(&[self.idx, row.idx]);
        self.tape.push(
            Op::AddRow {
                mat: self.idx,
                row: row.idx,
            },
            Tensor::matrix(r, c, data),
            needs,
        )
    }

    /// Differentiable full SVD of a 3x3 matrix; see [`svd3_decompose`].
    pub fn svd3(self) -> Result<(Var<'t>, Var<'t>, Var<'t>), Svd3Error> {
        let m = self.value();
        let (u, s, v) = svd3_decompose(&m)?;
        let mut packed = Vec::with_capacity(21);
        packed.extend_from_slice(u.data());
        packed.extend_from_slice(s.data());
        packed.extend_from_slice(v.data());
        let needs = self.tape.wants(&[self.idx]);
        let node = self
            .tape
            .push(Op::Svd3(self.idx), Tensor::vector(packed), needs);
        let u_var = node.slice(0, 0, 9).reshape(vec![3, 3]);
        let s_var = node.slice(0, 9, 12);
        let v_var = node.slice(0, 12, 21).reshape(vec![3, 3]);
        Ok((u_var, s_var, v_var))
    }

    /// Inner product of two equally-shaped tensors.
    pub fn dot(self, o: Var<'t>) -> Var<'t> {
        self.mul(o).sum()
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = x.softmax(0);
        for v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.input(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().value().value(), 0.5);
    }

    #[test]
    fn sum_of_squares_gradient() {
        // d/dx sum(x^2) = 2x
        let tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let loss = x.square().sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_gradients() {
        // loss = sum(A*B); dA = 1 * B^T, dB = A^T * 1
        let tape = Tape::new();
        let a = tape.input(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]));
        let b = tape.input(Tensor::matrix(2, 2, vec![5., 6., 7., 8.]));
        let loss = a.matmul(b).sum();
        let grads = tape.backward(loss);
        // dA_ij = sum_k B_jk
        assert_eq!(grads.wrt(a).data(), &[11., 15., 11., 15.]);
        // dB_jk = sum_i A_ij
        assert_eq!(grads.wrt(b).data(), &[4., 4., 6., 6.]);
    }

    #[test]
    fn backward_is_linear_in_loss() {
        // backward of a sum of losses equals the sum of backwards when the
        // same graph is evaluated in the same order.
        let build = |which: u8| -> Vec<f64> {
            let tape = Tape::new();
            let x = tape.input(Tensor::vector(vec![0.3, -0.7, 1.1]));
            let l1 = x.square().sum();
            let l2 = x.sigmoid().sum();
            let loss = match which {
                0 => l1,
                1 => l2,
                _ => l1.add(l2),
            };
            tape.backward(loss).wrt(x).data().to_vec()
        };
        let g1 = build(0);
        let g2 = build(1);
        let gsum = build(2);
        for i in 0..3 {
            assert_eq!(gsum[i], g1[i] + g2[i]);
        }
    }

    #[test]
    fn constant_function_zero_gradient() {
        let tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(3.0));
        let loss = c.scale(2.0);
        let grads = tape.backward(loss);
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn slice_concat_roundtrip_grad() {
        let tape = Tape::new();
        let x = tape.input(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let left = x.slice(1, 0, 1);
        let right = x.slice(1, 1, 3);
        let back = tape.concat(1, &[left, right]);
        let loss = back.square().sum();
        let grads = tape.backward(loss);
        let want: Vec<f64> = vec![2., 4., 6., 8., 10., 12.];
        assert_eq!(grads.wrt(x).data(), want.as_slice());
    }

    #[test]
    fn scatter_gather_grads() {
        let tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![2.0, 5.0]));
        let m = x.scatter_flat(vec![2, 2], &[1, 2]);
        assert_eq!(m.value().data(), &[0., 2., 5., 0.]);
        let loss = m.square().sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.wrt(x).data(), &[4.0, 10.0]);
    }

    #[test]
    fn gather_rows_accumulates_duplicates() {
        let tape = Tape::new();
        let x = tape.input(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]));
        let g = x.gather_rows(&[0, 0, 1]);
        let loss = g.sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.wrt(x).data(), &[2., 2., 1., 1.]);
    }

    #[test]
    fn bind_same_name_shares_node() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let tape = Tape::new();
        let a = tape.bind(&params, "w");
        let b = tape.bind(&params, "w");
        assert_eq!(a.idx, b.idx);
        let loss = a.add(b).sum();
        let grads = tape.backward(loss).into_gradset();
        assert_eq!(grads.get("w").unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn unused_binding_gets_zero_grad() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0]));
        params.insert("u", Tensor::vector(vec![1.0]));
        let tape = Tape::new();
        let w = tape.bind(&params, "w");
        let _u = tape.bind(&params, "u");
        let loss = w.sum();
        let grads = tape.backward(loss).into_gradset();
        assert_eq!(grads.get("u").unwrap().data(), &[0.0]);
        assert_eq!(grads.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    #[should_panic(expected = "matmul inner dimensions")]
    fn shape_mismatch_panics() {
        let tape = Tape::new();
        let a = tape.input(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = tape.input(Tensor::matrix(2, 3, vec![0.0; 6]));
        let _ = a.matmul(b);
    }
}
