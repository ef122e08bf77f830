//! Recorded-computation reverse-mode differentiation.
//!
//! Every forward primitive appends one node to the tape; `backward` replays
//! the record in reverse and applies the manual gradient rule of each
//! primitive. Parameter and embedding-row leaves write their gradients into
//! a [`GradBuffer`] keyed by [`ParamId`].

use std::collections::HashMap;

use crate::params::{GradBuffer, ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(u32);

impl ValueId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug)]
enum Op {
    /// Leaf with no gradient (inputs to the model, zero fills).
    Constant,
    /// Whole parameter tensor.
    Param(ParamId),
    /// Single row of a parameter matrix (embedding lookup).
    GatherRow { param: ParamId, row: usize },
    /// Matrix (r x c) times vector (c) -> vector (r).
    MatVec { m: ValueId, v: ValueId },
    /// Matrix (r x k) times matrix (k x c) -> matrix (r x c).
    MatMat { a: ValueId, b: ValueId },
    /// Elementwise sum of same-shape tensors.
    Add(Vec<ValueId>),
    /// Vector concatenation.
    Concat(Vec<ValueId>),
    /// Mean of same-length vectors.
    MeanRows(Vec<ValueId>),
    /// Stack same-length vectors into a matrix, one per row.
    StackRows(Vec<ValueId>),
    /// Elementwise logistic sigmoid.
    Sigmoid(ValueId),
    /// Shift-stabilized softmax over a vector.
    Softmax(ValueId),
    /// ln(x[idx]) as a length-1 tensor.
    PickLog { x: ValueId, idx: usize },
    /// Elementwise product of same-shape tensors.
    Mul { a: ValueId, b: ValueId },
    /// Sum of all elements, as a length-1 tensor.
    SumAll(ValueId),
    /// Constant scale.
    Scale { x: ValueId, c: f64 },
    /// Elementwise ln(sigmoid(x)), computed stably.
    LogSigmoid(ValueId),
}

pub struct Tape<S: Scalar> {
    values: Vec<Tensor<S>>,
    ops: Vec<Op>,
    param_cache: HashMap<ParamId, ValueId>,
    gather_cache: HashMap<(ParamId, usize), ValueId>,
    // Full table shape per gathered parameter, needed to size grad slots.
    param_shapes: HashMap<ParamId, Shape>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            param_cache: HashMap::new(),
            gather_cache: HashMap::new(),
            param_shapes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.values[id.index()]
    }

    fn push(&mut self, op: Op, value: Tensor<S>) -> ValueId {
        debug_assert!(value.is_finite(), "non-finite forward output");
        let id = ValueId(self.values.len() as u32);
        self.values.push(value);
        self.ops.push(op);
        id
    }

    pub fn constant(&mut self, value: Tensor<S>) -> ValueId {
        self.push(Op::Constant, value)
    }

    pub fn zeros(&mut self, shape: Shape) -> ValueId {
        self.constant(Tensor::zeros(shape))
    }

    /// Bind a whole parameter tensor; repeated binds share one node.
    pub fn param(&mut self, store: &ParameterStore<S>, id: ParamId) -> ValueId {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), store.value(id).clone());
        self.param_cache.insert(id, v);
        v
    }

    /// Bind one row of a parameter matrix; repeated binds share one node.
    pub fn gather_row(&mut self, store: &ParameterStore<S>, id: ParamId, row: usize) -> ValueId {
        if let Some(&v) = self.gather_cache.get(&(id, row)) {
            return v;
        }
        let t = store.value(id);
        let value = Tensor::vector(t.row(row).to_vec());
        self.param_shapes.insert(id, t.shape());
        let v = self.push(Op::GatherRow { param: id, row }, value);
        self.gather_cache.insert((id, row), v);
        v
    }

    pub fn matvec(&mut self, m: ValueId, v: ValueId) -> ValueId {
        let (rows, cols) = match self.value(m).shape() {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matvec needs a matrix, got {s}"),
        };
        let vec = self.value(v);
        assert_eq!(
            vec.len(),
            cols,
            "matvec shape mismatch: {}x{} * ({})",
            rows,
            cols,
            vec.len()
        );
        let mdata = self.value(m).data();
        let vdata = self.value(v).data();
        let mut out = vec![S::zero(); rows];
        for r in 0..rows {
            let row = &mdata[r * cols..(r + 1) * cols];
            let mut acc = S::zero();
            for (a, b) in row.iter().zip(vdata.iter()) {
                acc = acc + *a * *b;
            }
            out[r] = acc;
        }
        self.push(Op::MatVec { m, v }, Tensor::vector(out))
    }

    pub fn matmat(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ar, ak) = match self.value(a).shape() {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matmat lhs needs a matrix, got {s}"),
        };
        let (bk, bc) = match self.value(b).shape() {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matmat rhs needs a matrix, got {s}"),
        };
        assert_eq!(ak, bk, "matmat shape mismatch: {ar}x{ak} * {bk}x{bc}");
        let adata = self.value(a).data();
        let bdata = self.value(b).data();
        let mut out = vec![S::zero(); ar * bc];
        for r in 0..ar {
            for k in 0..ak {
                let av = adata[r * ak + k];
                if av == S::zero() {
                    continue;
                }
                let brow = &bdata[k * bc..(k + 1) * bc];
                let orow = &mut out[r * bc..(r + 1) * bc];
                for (o, b) in orow.iter_mut().zip(brow.iter()) {
                    *o = *o + av * *b;
                }
            }
        }
        self.push(
            Op::MatMat { a, b },
            Tensor::from_vec(Shape::Matrix(ar, bc), out),
        )
    }

    pub fn add(&mut self, xs: &[ValueId]) -> ValueId {
        assert!(!xs.is_empty(), "add of nothing");
        let shape = self.value(xs[0]).shape();
        let mut out = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            assert_eq!(self.value(x).shape(), shape, "add shape mismatch");
            out.add_assign(self.value(x));
        }
        self.push(Op::Add(xs.to_vec()), out)
    }

    pub fn concat(&mut self, xs: &[ValueId]) -> ValueId {
        assert!(!xs.is_empty(), "concat of nothing");
        let mut out = Vec::new();
        for &x in xs {
            let t = self.value(x);
            assert!(
                matches!(t.shape(), Shape::Vector(_)),
                "concat expects vectors"
            );
            out.extend_from_slice(t.data());
        }
        self.push(Op::Concat(xs.to_vec()), Tensor::vector(out))
    }

    /// Elementwise mean of equal-length rows. Uses a running mean
    /// (`m += (x - m) / i`) so that identical inputs average to themselves
    /// bit-exactly; the per-input gradient is still 1/k.
    pub fn mean_rows(&mut self, xs: &[ValueId]) -> ValueId {
        assert!(!xs.is_empty(), "mean_rows of nothing");
        let n = self.value(xs[0]).len();
        let mut out = vec![S::zero(); n];
        for (i, &x) in xs.iter().enumerate() {
            let t = self.value(x);
            assert_eq!(t.len(), n, "mean_rows length mismatch");
            let inv = S::from_f64_lossy(1.0 / (i + 1) as f64);
            for (o, v) in out.iter_mut().zip(t.data().iter()) {
                *o = *o + (*v - *o) * inv;
            }
        }
        self.push(Op::MeanRows(xs.to_vec()), Tensor::vector(out))
    }

    pub fn stack_rows(&mut self, xs: &[ValueId]) -> ValueId {
        assert!(!xs.is_empty(), "stack_rows of nothing");
        let cols = self.value(xs[0]).len();
        let mut out = Vec::with_capacity(xs.len() * cols);
        for &x in xs {
            let t = self.value(x);
            assert_eq!(t.len(), cols, "stack_rows length mismatch");
            out.extend_from_slice(t.data());
        }
        self.push(
            Op::StackRows(xs.to_vec()),
            Tensor::from_vec(Shape::Matrix(xs.len(), cols), out),
        )
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let t = self.value(x);
        let out: Vec<S> = t.data().iter().map(|&v| sigmoid(v)).collect();
        let shape = t.shape();
        self.push(Op::Sigmoid(x), Tensor::from_vec(shape, out))
    }

    pub fn softmax(&mut self, x: ValueId) -> ValueId {
        let t = self.value(x);
        assert!(matches!(t.shape(), Shape::Vector(_)), "softmax expects a vector");
        let data = t.data();
        let mut max = data[0];
        for &v in data {
            if v > max {
                max = v;
            }
        }
        let mut out: Vec<S> = data.iter().map(|&v| (v - max).exp()).collect();
        let mut denom = S::zero();
        for &v in &out {
            denom = denom + v;
        }
        out.iter_mut().for_each(|v| *v = *v / denom);
        self.push(Op::Softmax(x), Tensor::vector(out))
    }

    pub fn pick_log(&mut self, x: ValueId, idx: usize) -> ValueId {
        let t = self.value(x);
        assert!(idx < t.len(), "pick_log index out of range");
        let v = t.data()[idx].ln();
        self.push(Op::PickLog { x, idx }, Tensor::scalar(v))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let out: Vec<S> = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = ta.shape();
        self.push(Op::Mul { a, b }, Tensor::from_vec(shape, out))
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let mut acc = S::zero();
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        self.push(Op::SumAll(x), Tensor::scalar(acc))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let t = self.value(x);
        let cs = S::from_f64_lossy(c);
        let out: Vec<S> = t.data().iter().map(|&v| v * cs).collect();
        let shape = t.shape();
        self.push(Op::Scale { x, c }, Tensor::from_vec(shape, out))
    }

    pub fn log_sigmoid(&mut self, x: ValueId) -> ValueId {
        let t = self.value(x);
        // ln sigmoid(x) = -softplus(-x) = min(x,0) - ln(1+exp(-|x|))
        let out: Vec<S> = t
            .data()
            .iter()
            .map(|&v| {
                let zero = S::zero();
                let m = if v < zero { v } else { zero };
                m - (S::one() + (-v.abs()).exp()).ln()
            })
            .collect();
        let shape = t.shape();
        self.push(Op::LogSigmoid(x), Tensor::from_vec(shape, out))
    }

    /// Reverse sweep from a scalar `root`, seeding its gradient with `seed`.
    /// Parameter gradients are accumulated into `out`.
    pub fn backward(&self, root: ValueId, seed: S, out: &mut GradBuffer<S>) {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.values.len()];
        grads[root.index()] = Some(Tensor::scalar(seed));

        for i in (0..=root.index()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Constant => {}
                Op::Param(pid) => {
                    out.slot(*pid, g.shape()).add_assign(&g);
                }
                Op::GatherRow { param, row } => {
                    let shape = self.value_shape_of_param(out, *param);
                    let slot = out.slot(*param, shape);
                    let cols = slot.cols();
                    let dst = &mut slot.data_mut()[row * cols..(row + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(g.data().iter()) {
                        *d = *d + *s;
                    }
                }
                Op::MatVec { m, v } => {
                    let (rows, cols) = match self.value(*m).shape() {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let mdata = self.value(*m).data();
                    let vdata = self.value(*v).data();
                    {
                        let gm = acc_slot(&mut grads, *m, self.value(*m).shape());
                        let gmd = gm.data_mut();
                        for r in 0..rows {
                            let gr = g.data()[r];
                            if gr == S::zero() {
                                continue;
                            }
                            let dst = &mut gmd[r * cols..(r + 1) * cols];
                            for (d, x) in dst.iter_mut().zip(vdata.iter()) {
                                *d = *d + gr * *x;
                            }
                        }
                    }
                    {
                        let gv = acc_slot(&mut grads, *v, self.value(*v).shape());
                        let gvd = gv.data_mut();
                        for r in 0..rows {
                            let gr = g.data()[r];
                            if gr == S::zero() {
                                continue;
                            }
                            let row = &mdata[r * cols..(r + 1) * cols];
                            for (d, x) in gvd.iter_mut().zip(row.iter()) {
                                *d = *d + gr * *x;
                            }
                        }
                    }
                }
                Op::MatMat { a, b } => {
                    let (ar, ak) = match self.value(*a).shape() {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let bc = self.value(*b).cols();
                    let adata = self.value(*a).data();
                    let bdata = self.value(*b).data();
                    let gd = g.data();
                    {
                        // dA = g . B^T
                        let ga = acc_slot(&mut grads, *a, self.value(*a).shape());
                        let gad = ga.data_mut();
                        for r in 0..ar {
                            for k in 0..ak {
                                let brow = &bdata[k * bc..(k + 1) * bc];
                                let grow = &gd[r * bc..(r + 1) * bc];
                                let mut acc = S::zero();
                                for (x, y) in grow.iter().zip(brow.iter()) {
                                    acc = acc + *x * *y;
                                }
                                gad[r * ak + k] = gad[r * ak + k] + acc;
                            }
                        }
                    }
                    {
                        // dB = A^T . g
                        let gb = acc_slot(&mut grads, *b, self.value(*b).shape());
                        let gbd = gb.data_mut();
                        for r in 0..ar {
                            let grow = &gd[r * bc..(r + 1) * bc];
                            for k in 0..ak {
                                let av = adata[r * ak + k];
                                if av == S::zero() {
                                    continue;
                                }
                                let dst = &mut gbd[k * bc..(k + 1) * bc];
                                for (d, x) in dst.iter_mut().zip(grow.iter()) {
                                    *d = *d + av * *x;
                                }
                            }
                        }
                    }
                }
                Op::Add(xs) => {
                    for &x in xs {
                        acc_slot(&mut grads, x, g.shape()).add_assign(&g);
                    }
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        let gx = acc_slot(&mut grads, x, Shape::Vector(n));
                        for (d, s) in gx.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *d = *d + *s;
                        }
                        offset += n;
                    }
                }
                Op::MeanRows(xs) => {
                    let inv = S::from_f64_lossy(1.0 / xs.len() as f64);
                    for &x in xs {
                        let gx = acc_slot(&mut grads, x, g.shape());
                        for (d, s) in gx.data_mut().iter_mut().zip(g.data().iter()) {
                            *d = *d + *s * inv;
                        }
                    }
                }
                Op::StackRows(xs) => {
                    let cols = self.value(xs[0]).len();
                    for (r, &x) in xs.iter().enumerate() {
                        let gx = acc_slot(&mut grads, x, Shape::Vector(cols));
                        let src = &g.data()[r * cols..(r + 1) * cols];
                        for (d, s) in gx.data_mut().iter_mut().zip(src.iter()) {
                            *d = *d + *s;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &self.values[i];
                    let gx = acc_slot(&mut grads, *x, y.shape());
                    for ((d, &yv), &gv) in gx
                        .data_mut()
                        .iter_mut()
                        .zip(y.data().iter())
                        .zip(g.data().iter())
                    {
                        *d = *d + gv * yv * (S::one() - yv);
                    }
                }
                Op::Softmax(x) => {
                    let y = &self.values[i];
                    let mut dot = S::zero();
                    for (&gv, &yv) in g.data().iter().zip(y.data().iter()) {
                        dot = dot + gv * yv;
                    }
                    let gx = acc_slot(&mut grads, *x, y.shape());
                    for ((d, &yv), &gv) in gx
                        .data_mut()
                        .iter_mut()
                        .zip(y.data().iter())
                        .zip(g.data().iter())
                    {
                        *d = *d + yv * (gv - dot);
                    }
                }
                Op::PickLog { x, idx } => {
                    let xv = self.value(*x).data()[*idx];
                    let shape = self.value(*x).shape();
                    let gx = acc_slot(&mut grads, *x, shape);
                    gx.data_mut()[*idx] = gx.data_mut()[*idx] + g.item() / xv;
                }
                Op::Mul { a, b } => {
                    let (ad, bd) = (self.value(*a).clone(), self.value(*b).clone());
                    {
                        let ga = acc_slot(&mut grads, *a, ad.shape());
                        for ((d, &bv), &gv) in ga
                            .data_mut()
                            .iter_mut()
                            .zip(bd.data().iter())
                            .zip(g.data().iter())
                        {
                            *d = *d + gv * bv;
                        }
                    }
                    {
                        let gb = acc_slot(&mut grads, *b, bd.shape());
                        for ((d, &av), &gv) in gb
                            .data_mut()
                            .iter_mut()
                            .zip(ad.data().iter())
                            .zip(g.data().iter())
                        {
                            *d = *d + gv * av;
                        }
                    }
                }
                Op::SumAll(x) => {
                    let shape = self.value(*x).shape();
                    let gx = acc_slot(&mut grads, *x, shape);
                    let gv = g.item();
                    for d in gx.data_mut() {
                        *d = *d + gv;
                    }
                }
                Op::Scale { x, c } => {
                    let shape = self.value(*x).shape();
                    let cs = S::from_f64_lossy(*c);
                    let gx = acc_slot(&mut grads, *x, shape);
                    for (d, &gv) in gx.data_mut().iter_mut().zip(g.data().iter()) {
                        *d = *d + gv * cs;
                    }
                }
                Op::LogSigmoid(x) => {
                    // d/dx ln sigmoid(x) = sigmoid(-x)
                    let xt = self.value(*x).clone();
                    let gx = acc_slot(&mut grads, *x, xt.shape());
                    for ((d, &xv), &gv) in gx
                        .data_mut()
                        .iter_mut()
                        .zip(xt.data().iter())
                        .zip(g.data().iter())
                    {
                        *d = *d + gv * sigmoid(-xv);
                    }
                }
            }
        }
    }

    fn value_shape_of_param(&self, buf: &GradBuffer<S>, pid: ParamId) -> Shape {
        if let Some(t) = buf.get(pid) {
            return t.shape();
        }
        self.param_shapes
            .get(&pid)
            .copied()
            .expect("gather from unknown parameter shape")
    }
}

fn acc_slot<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    id: ValueId,
    shape: Shape,
) -> &mut Tensor<S> {
    grads[id.index()].get_or_insert_with(|| Tensor::zeros(shape))
}

fn sigmoid<S: Scalar>(x: S) -> S {
    let one = S::one();
    if x >= S::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}
