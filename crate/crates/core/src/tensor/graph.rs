use super::{mismatch, ParamId, ParamStore, Real, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    ScaleShift {
        x: Var,
        scale: T,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        inputs: Vec<Var>,
        index: Vec<Option<(usize, usize)>>,
    },
    SegmentSum {
        x: Var,
        groups: Vec<Option<usize>>,
    },
    MaskRows {
        x: Var,
        keep: Vec<bool>,
    },
    NeighborSum {
        x: Var,
        adjacency: Vec<Vec<usize>>,
    },
    Reshape(Var),
    SumAll(Var),
    Mse {
        pred: Var,
        target: Vec<T>,
    },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording tape. Parameter values are borrowed from the store, so a graph
/// lives for one forward/backward pass.
pub struct Graph<'p, T: Real> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.wrt(v))
    }

    /// Writes parameter gradients into the store; parameters that did not
    /// take part in the pass get zero gradient.
    pub fn write_to(&self, store: &mut ParamStore<T>) {
        store.zero_grad();
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                store.get_mut(id).grad.data_mut().copy_from_slice(g.data());
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// `out += a (m x k) * b (k x n)`, skipping zero entries of `a`.
fn gemm_nn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// `out += a (m x k) * b^T` where `b` is `n x k`.
fn gemm_nt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += a^T * b` where `a` is `m x k` and `b` is `m x n`; `out` is `k x n`.
fn gemm_tn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, brow, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// A graph whose `param` calls resolve against `params`.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    /// A graph without parameters, for differentiating plain functions.
    pub fn detached() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => &self
                .params
                .expect("parameter nodes only exist on graphs with a store")
                .get(*id)
                .value,
        }
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input leaf.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `a (.. x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(mismatch(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Batched product of `[B, m, k]` with `[B, k, n]`, or with `[B, n, k]`
    /// transposed when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(mismatch("batch_matmul", format!("{sa:?} x {sb:?}")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let mut out = vec![T::zero(); batch * m * n];
        for t in 0..batch {
            let ad = &av.data()[t * m * k..(t + 1) * m * k];
            let bd = &bv.data()[t * k * n..(t + 1) * k * n];
            let od = &mut out[t * m * n..(t + 1) * m * n];
            if transpose_b {
                gemm_nt(ad, bd, od, m, k, n);
            } else {
                gemm_nn(ad, bd, od, m, k, n);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![batch, m, n], out)?,
            Op::BatchMatMul { a, b, transpose_b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x + *y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.len() != av.cols() {
            return Err(mismatch(
                "add_row",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            add_into(row, bv.data());
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, a: Var, gain: Var) -> Result<Var> {
        let (av, gv) = (self.value(a), self.value(gain));
        if gv.len() != av.cols() {
            return Err(mismatch(
                "mul_row",
                format!("{:?} * {:?}", av.shape(), gv.shape()),
            ));
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, g) in row.iter_mut().zip(gv.data()) {
                *x *= *g;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(gain);
        Ok(self.push(t, Op::MulRow(a, gain), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", format!("{:?} * {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x * *y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn scale_shift(&mut self, x: Var, scale: T, shift: T) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| scale * *v + shift).collect();
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::ScaleShift { x, scale }, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let xv = self.value(x);
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().map(|v| f(*v)).collect(),
        };
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// Softmax over the last axis. `key_mask`, when given, holds one flag per
    /// key for each group of `rows_per_group` consecutive rows (`true` =
    /// attend). Masked keys get exactly zero weight; a row with every key
    /// masked is all zeros.
    pub fn masked_softmax(
        &mut self,
        x: Var,
        key_mask: Option<&[bool]>,
        rows_per_group: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (rows, k) = (xv.rows(), xv.cols());
        if let Some(mask) = key_mask {
            if rows_per_group == 0
                || rows % rows_per_group != 0
                || mask.len() != rows / rows_per_group * k
            {
                return Err(mismatch(
                    "masked_softmax",
                    format!(
                        "{} mask flags for {rows} rows of {k} keys in groups of {rows_per_group}",
                        mask.len()
                    ),
                ));
            }
        }
        let mut out = vec![T::zero(); rows * k];
        for r in 0..rows {
            let row = xv.row(r);
            let mask = key_mask.map(|m| {
                let g = r / rows_per_group;
                &m[g * k..(g + 1) * k]
            });
            let valid = |j: usize| mask.is_none_or(|m| m[j]);
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if valid(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let o = &mut out[r * k..(r + 1) * k];
            let mut sum = T::zero();
            for j in 0..k {
                if valid(j) {
                    o[j] = (row[j] - max).exp();
                    sum += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MaskedSoftmax(x), rg))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let n = T::lit(c as f64);
        let eps = T::lit(eps);
        let mut out = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (*v - mean) * is));
            inv_std.push(is);
        }
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.rg(x);
        self.push(t, Op::LayerNorm { x, inv_std }, rg)
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(mismatch("embedding", format!("table {:?}", tv.shape())));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(mismatch("embedding", format!("id {bad} >= vocabulary {vocab}")));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenation along `axis`: 0 stacks rows of 2-D inputs, the last
    /// axis joins columns of inputs with equal row counts.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(mismatch("concat", "no inputs"));
        }
        let ndim = self.value(inputs[0]).shape().len().max(1);
        if axis == 0 && ndim <= 2 {
            let mut index = Vec::new();
            for (slot, &v) in inputs.iter().enumerate() {
                index.extend((0..self.value(v).rows()).map(|r| Some((slot, r))));
            }
            return self.gather_rows(inputs, &index);
        }
        if axis + 1 != ndim {
            return Err(mismatch("concat", format!("unsupported axis {axis}")));
        }
        let rows = self.value(inputs[0]).rows();
        if inputs.iter().any(|&v| self.value(v).rows() != rows) {
            return Err(mismatch("concat", "row counts differ"));
        }
        let total: usize = inputs.iter().map(|&v| self.value(v).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &v in inputs {
                out.extend_from_slice(self.value(v).row(r));
            }
        }
        let mut shape = self.value(inputs[0]).shape().to_vec();
        *shape.last_mut().unwrap() = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatCols(inputs.to_vec()), rg))
    }

    /// Builds a `[index.len(), cols]` matrix whose row `i` is row `r` of
    /// `inputs[s]` for `index[i] = Some((s, r))`, or zeros for `None`.
    pub fn gather_rows(&mut self, inputs: &[Var], index: &[Option<(usize, usize)>]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(mismatch("gather_rows", "no inputs"));
        }
        let c = self.value(inputs[0]).cols();
        if inputs.iter().any(|&v| self.value(v).cols() != c) {
            return Err(mismatch("gather_rows", "column counts differ"));
        }
        let mut out = vec![T::zero(); index.len() * c];
        for (i, entry) in index.iter().enumerate() {
            if let Some((s, r)) = *entry {
                let src = inputs
                    .get(s)
                    .map(|&v| self.value(v))
                    .filter(|t| r < t.rows())
                    .ok_or_else(|| mismatch("gather_rows", format!("bad source ({s}, {r})")))?;
                out[i * c..(i + 1) * c].copy_from_slice(src.row(r));
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(vec![index.len(), c], out)?,
            Op::GatherRows {
                inputs: inputs.to_vec(),
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Sums rows into `n_groups` outputs; rows with `None` are skipped.
    pub fn segment_sum(&mut self, x: Var, groups: &[Option<usize>], n_groups: usize) -> Result<Var> {
        let xv = self.value(x);
        if groups.len() != xv.rows() || groups.iter().flatten().any(|&g| g >= n_groups) {
            return Err(mismatch(
                "segment_sum",
                format!("{} group labels for {} rows", groups.len(), xv.rows()),
            ));
        }
        let c = xv.cols();
        let mut out = vec![T::zero(); n_groups * c];
        for (r, g) in groups.iter().enumerate() {
            if let Some(g) = *g {
                add_into(&mut out[g * c..(g + 1) * c], xv.row(r));
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n_groups, c], out)?,
            Op::SegmentSum {
                x,
                groups: groups.to_vec(),
            },
            rg,
        ))
    }

    /// Sum over `axis` 0 of a 2-D tensor.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let rows = self.value(x).rows();
        self.segment_sum(x, &vec![Some(0); rows], 1)
    }

    /// Zeroes rows whose flag is `false`.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.rows() {
            return Err(mismatch("mask_rows", format!("{} flags, {} rows", keep.len(), xv.rows())));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, &k) in data.chunks_mut(c).zip(keep) {
            if !k {
                row.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::MaskRows {
                x,
                keep: keep.to_vec(),
            },
            rg,
        ))
    }

    /// Row `i` of the output is the sum of rows `adjacency[i]` of `x`.
    pub fn neighbor_sum(&mut self, x: Var, adjacency: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.rows();
        if adjacency.len() != n || adjacency.iter().flatten().any(|&j| j >= n) {
            return Err(mismatch("neighbor_sum", "adjacency does not match rows"));
        }
        let c = xv.cols();
        let mut out = vec![T::zero(); n * c];
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                add_into(&mut out[i * c..(i + 1) * c], xv.row(j));
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::NeighborSum {
                x,
                adjacency: adjacency.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Mean squared error between `pred` and a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(mismatch(
                "mse_loss",
                format!("{} predictions, {} targets", pv.len(), target.len()),
            ));
        }
        let n = T::lit(target.len() as f64);
        let loss = pv
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| (*p - *t) * (*p - *t))
            .sum::<T>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from the scalar `loss`. Every node is visited at most
    /// once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(mismatch("backward", format!("loss has shape {:?}", lv.shape())));
        }
        if !lv.all_finite() {
            return Err(TensorError::NumericalOverflow(format!(
                "loss is {}",
                lv.data()[0]
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: lv.shape().to_vec(),
            data: vec![T::one()],
        });

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(TensorError::NumericalOverflow(
                    "non-finite gradient".into(),
                ));
            }
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => add_into(g.data_mut(), &data),
            slot @ None => {
                *slot = Some(Tensor {
                    shape: self.value(v).shape().to_vec(),
                    data,
                })
            }
        }
    }

    fn backward_node(&self, idx: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = self.value(Var(idx));
        let g = gy.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(g, bv.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(av.data(), g, &mut db, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = y.shape()[2];
                let mut da = vec![T::zero(); av.len()];
                let mut db = vec![T::zero(); bv.len()];
                for t in 0..batch {
                    let ad = &av.data()[t * m * k..(t + 1) * m * k];
                    let bd = &bv.data()[t * k * n..(t + 1) * k * n];
                    let gd = &g[t * m * n..(t + 1) * m * n];
                    let dad = &mut da[t * m * k..(t + 1) * m * k];
                    let dbd = &mut db[t * k * n..(t + 1) * k * n];
                    if *transpose_b {
                        // y = a b^T: da = g b, db = g^T a
                        gemm_nn(gd, bd, dad, m, n, k);
                        gemm_tn(gd, ad, dbd, m, n, k);
                    } else {
                        // y = a b: da = g b^T, db = a^T g
                        gemm_nt(gd, bd, dad, m, n, k);
                        gemm_tn(ad, gd, dbd, m, k, n);
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.rg(*bias) {
                    let c = y.cols();
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks(c) {
                        add_into(&mut db, row);
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::MulRow(a, gain) => {
                let (av, gv) = (self.value(*a), self.value(*gain));
                let c = y.cols();
                if self.rg(*a) {
                    let mut da = g.to_vec();
                    for row in da.chunks_mut(c) {
                        for (d, w) in row.iter_mut().zip(gv.data()) {
                            *d *= *w;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*gain) {
                    let mut dg = vec![T::zero(); c];
                    for (grow, arow) in g.chunks(c).zip(av.data().chunks(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * arow[j];
                        }
                    }
                    self.accumulate(grads, *gain, dg);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let da = g.iter().zip(bv.data()).map(|(x, y)| *x * *y).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = g.iter().zip(av.data()).map(|(x, y)| *x * *y).collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::ScaleShift { x, scale } => {
                let dx = g.iter().map(|v| *v * *scale).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| if *yv > T::zero() { *gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = g
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| *gv * *yv * (T::one() - *yv))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = g
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| *gv * (T::one() - *yv * *yv))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::MaskedSoftmax(x) => {
                let k = y.cols();
                let mut dx = vec![T::zero(); y.len()];
                for ((drow, grow), yrow) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.data().chunks(k)) {
                    let s = dot(grow, yrow);
                    for j in 0..k {
                        drow[j] = yrow[j] * (grow[j] - s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm { x, inv_std } => {
                let c = y.cols();
                let n = T::lit(c as f64);
                let mut dx = vec![T::zero(); y.len()];
                for (r, ((drow, grow), xhat)) in dx
                    .chunks_mut(c)
                    .zip(g.chunks(c))
                    .zip(y.data().chunks(c))
                    .enumerate()
                {
                    let mean_g = grow.iter().copied().sum::<T>() / n;
                    let mean_gx = dot(grow, xhat) / n;
                    for j in 0..c {
                        drow[j] = inv_std[r] * (grow[j] - mean_g - xhat[j] * mean_gx);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let mut dt = vec![T::zero(); tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
                self.accumulate(grads, *table, dt);
            }
            Op::ConcatCols(inputs) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).cols();
                    if self.rg(v) {
                        let mut dv = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dv.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, v, dv);
                    }
                    offset += c;
                }
            }
            Op::GatherRows { inputs, index } => {
                let c = y.cols();
                let mut parts: Vec<Option<Vec<T>>> = inputs
                    .iter()
                    .map(|&v| self.rg(v).then(|| vec![T::zero(); self.value(v).len()]))
                    .collect();
                for (i, entry) in index.iter().enumerate() {
                    if let Some((s, r)) = *entry {
                        if let Some(part) = &mut parts[s] {
                            add_into(&mut part[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                }
                for (&v, part) in inputs.iter().zip(parts) {
                    if let Some(p) = part {
                        self.accumulate(grads, v, p);
                    }
                }
            }
            Op::SegmentSum { x, groups } => {
                let c = y.cols();
                let mut dx = vec![T::zero(); groups.len() * c];
                for (r, grp) in groups.iter().enumerate() {
                    if let Some(gi) = *grp {
                        dx[r * c..(r + 1) * c].copy_from_slice(&g[gi * c..(gi + 1) * c]);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaskRows { x, keep } => {
                let c = y.cols();
                let mut dx = g.to_vec();
                for (row, &k) in dx.chunks_mut(c).zip(keep) {
                    if !k {
                        row.iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::NeighborSum { x, adjacency } => {
                let c = y.cols();
                let mut dx = vec![T::zero(); y.len()];
                for (i, nbrs) in adjacency.iter().enumerate() {
                    for &j in nbrs {
                        add_into(&mut dx[j * c..(j + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let scale = T::lit(2.0) * g[0] / T::lit(target.len() as f64);
                let dp = pv
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| scale * (*p - *t))
                    .collect();
                self.accumulate(grads, *pred, dp);
            }
        }
    }
}

/// Parameters of one gated recurrent unit: input maps `w_*` (`in x hidden`),
/// recurrent maps `u_*` (`hidden x hidden`), biases `b_*` (`hidden`) for the
/// update (`z`), reset (`r`) and candidate (`n`) paths.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_z: Var,
    pub w_r: Var,
    pub w_n: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_n: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_n: Var,
}

/// One gated recurrent step:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `n = tanh(x W_n + r ⊙ (h U_n) + b_n)`, `h' = (1 - z) ⊙ n + z ⊙ h`.
pub fn recurrent_step<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    h: Var,
    w: &GruWeights,
) -> Result<Var> {
    let gate = |g: &mut Graph<'_, T>, wx: Var, uh: Var, b: Var| -> Result<Var> {
        let a = g.matmul(x, wx)?;
        let c = g.matmul(h, uh)?;
        let s = g.add(a, c)?;
        g.add_row(s, b)
    };
    let z_pre = gate(g, w.w_z, w.u_z, w.b_z)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate(g, w.w_r, w.u_r, w.b_r)?;
    let r = g.sigmoid(r_pre);
    let xn = g.matmul(x, w.w_n)?;
    let hn = g.matmul(h, w.u_n)?;
    let rhn = g.mul(r, hn)?;
    let n_pre = g.add(xn, rhn)?;
    let n_pre = g.add_row(n_pre, w.b_n)?;
    let n = g.tanh(n_pre);
    let one_minus_z = g.scale_shift(z, -T::one(), T::one());
    let keep_new = g.mul(one_minus_z, n)?;
    let keep_old = g.mul(z, h)?;
    g.add(keep_new, keep_old)
}
