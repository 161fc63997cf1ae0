use super::tensor::matrix_dims;
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var, Vec<usize>),
    Pick(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    grad: Option<Vec<f64>>,
}

impl Node {
    fn dims(&self) -> (usize, usize) {
        matrix_dims(&self.shape)
    }
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a valid topological order,
/// so [`Tape::backward`] is a single reverse sweep. Trainable leaves keep
/// their gradient between calls to `backward` until [`Tape::reset`] or
/// [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Previously issued [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Records a leaf whose gradient is tracked.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(Vec::new(), vec![value], Op::Leaf { trainable: false })
    }

    fn leaf(&mut self, tensor: &Tensor, trainable: bool) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            Op::Leaf { trainable },
        )
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let value = &self.nodes[v.0].value;
        assert_eq!(value.len(), 1, "scalar_value on a non-scalar node");
        value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.nodes[a.0].dims();
        let (k2, n) = self.nodes[b.0].dims();
        if k != k2 {
            return Err(self.shape_error("matmul", a, b));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (shape, value) = self.broadcast("add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (shape, value) = self.broadcast("sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (shape, value) = self.broadcast("mul", a, b, |x, y| x * y)?;
        Ok(self.push(shape, value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|x| x * factor).collect();
        let shape = node.shape.clone();
        self.push(shape, value, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Softmax over all elements of `a`, whatever its shape.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let node = &self.nodes[a.0];
        if node.value.is_empty() {
            return Err(AutodiffError::Shape {
                op: "softmax",
                lhs: node.shape.clone(),
                rhs: Vec::new(),
            });
        }
        let value = softmax(&node.value);
        let shape = node.shape.clone();
        Ok(self.push(shape, value, Op::Softmax(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.iter().sum();
        self.push(Vec::new(), vec![total], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let node = &self.nodes[a.0];
        if node.value.is_empty() {
            return Err(AutodiffError::Contract("mean of an empty tensor".into()));
        }
        let mean = node.value.iter().sum::<f64>() / node.value.len() as f64;
        Ok(self.push(Vec::new(), vec![mean], Op::Mean(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let (r, c) = node.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = node.value[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(a))
    }

    /// Side-by-side concatenation; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::Contract("concat of zero tensors".into()))?;
        let rows = self.nodes[first.0].dims().0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.nodes[p.0].dims();
            if r != rows {
                return Err(self.shape_error("concat_cols", first, p));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let node = &self.nodes[p.0];
                let c = node.dims().1;
                out.extend_from_slice(&node.value[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks parts vertically; all parts need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::Contract("concat of zero tensors".into()))?;
        let cols = self.nodes[first.0].dims().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.nodes[p.0].dims();
            if c != cols {
                return Err(self.shape_error("concat_rows", first, p));
            }
            rows += r;
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.nodes[a.0].dims();
        if start + len > r {
            return Err(AutodiffError::Contract(format!(
                "row slice {}..{} out of bounds for {} rows",
                start,
                start + len,
                r
            )));
        }
        let value = self.nodes[a.0].value[start * c..(start + len) * c].to_vec();
        Ok(self.push(vec![len, c], value, Op::SliceRows(a, start)))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.nodes[a.0].dims();
        if start + len > c {
            return Err(AutodiffError::Contract(format!(
                "column slice {}..{} out of bounds for {} columns",
                start,
                start + len,
                c
            )));
        }
        let src = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(vec![r, len], out, Op::SliceCols(a, start)))
    }

    /// Row lookup, as used for embedding tables.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.nodes[table.0].dims();
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::Contract(format!(
                "row index {} out of bounds for {} rows",
                bad, r
            )));
        }
        let src = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            vec![indices.len(), c],
            out,
            Op::GatherRows(table, indices.to_vec()),
        ))
    }

    /// Mean of the selected rows as a `1 × cols` row; the zero row when
    /// `indices` is empty.
    pub fn mean_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.nodes[a.0].dims();
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::Contract(format!(
                "row index {} out of bounds for {} rows",
                bad, r
            )));
        }
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; c];
        if !indices.is_empty() {
            let w = 1.0 / indices.len() as f64;
            for &i in indices {
                for (o, x) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(vec![1, c], out, Op::MeanRows(a, indices.to_vec())))
    }

    /// Single element (flat index) as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, AutodiffError> {
        let node = &self.nodes[a.0];
        let value = *node.value.get(index).ok_or_else(|| {
            AutodiffError::Contract(format!(
                "index {} out of bounds for shape {:?}",
                index, node.shape
            ))
        })?;
        Ok(self.push(Vec::new(), vec![value], Op::Pick(a, index)))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let diff = self.sub(a, b)?;
        let sq = self.mul(diff, diff)?;
        self.mean(sq)
    }

    /// Propagates d`loss`/d(node) to every trainable leaf, adding into the
    /// gradients already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let nodes = &self.nodes;
            let node = &nodes[i];
            match &node.op {
                Op::Leaf { .. } => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = nodes[a.0].dims();
                    let n = nodes[b.0].dims().1;
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    {
                        let da = slot(&mut adj, *a, m * k);
                        for r in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[r * n + j] * bv[p * n + j];
                                }
                                da[r * k + p] += acc;
                            }
                        }
                    }
                    let db = slot(&mut adj, *b, k * n);
                    for r in 0..m {
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += x * g[r * n + j];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    reduce_into(&mut adj, *a, nodes[a.0].value.len(), &g, |x| x);
                    reduce_into(&mut adj, *b, nodes[b.0].value.len(), &g, |x| x);
                }
                Op::Sub(a, b) => {
                    reduce_into(&mut adj, *a, nodes[a.0].value.len(), &g, |x| x);
                    reduce_into(&mut adj, *b, nodes[b.0].value.len(), &g, |x| -x);
                }
                Op::Mul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, gk)| gk * broadcast_at(bv, k))
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, gk)| gk * broadcast_at(av, k))
                        .collect();
                    reduce_into(&mut adj, *a, av.len(), &ga, |x| x);
                    reduce_into(&mut adj, *b, bv.len(), &gb, |x| x);
                }
                Op::Scale(a, factor) => {
                    let da = slot(&mut adj, *a, g.len());
                    for (d, gk) in da.iter_mut().zip(&g) {
                        *d += factor * gk;
                    }
                }
                Op::Tanh(a) => {
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gk), y) in da.iter_mut().zip(&g).zip(&node.value) {
                        *d += gk * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gk), y) in da.iter_mut().zip(&g).zip(&node.value) {
                        *d += gk * y * (1.0 - y);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(gk, yk)| gk * yk).sum();
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gk), yk) in da.iter_mut().zip(&g).zip(y) {
                        *d += yk * (gk - dot);
                    }
                }
                Op::Log(a) => {
                    let x = &nodes[a.0].value;
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gk), xk) in da.iter_mut().zip(&g).zip(x) {
                        *d += gk / xk;
                    }
                }
                Op::Sum(a) => {
                    let n = nodes[a.0].value.len();
                    for d in slot(&mut adj, *a, n).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = nodes[a.0].value.len();
                    let w = g[0] / n as f64;
                    for d in slot(&mut adj, *a, n).iter_mut() {
                        *d += w;
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = nodes[a.0].dims();
                    let da = slot(&mut adj, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = node.dims();
                    let mut offset = 0;
                    for p in parts {
                        let c = nodes[p.0].dims().1;
                        let dp = slot(&mut adj, *p, rows * c);
                        for i in 0..rows {
                            for q in 0..c {
                                dp[i * c + q] += g[i * total + offset + q];
                            }
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        let dp = slot(&mut adj, *p, n);
                        for (d, gk) in dp.iter_mut().zip(&g[offset..offset + n]) {
                            *d += gk;
                        }
                        offset += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = nodes[a.0].dims();
                    let da = slot(&mut adj, *a, r * c);
                    for (d, gk) in da[start * c..].iter_mut().zip(&g) {
                        *d += gk;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = nodes[a.0].dims();
                    let len = node.dims().1;
                    let da = slot(&mut adj, *a, r * c);
                    for i in 0..r {
                        for q in 0..len {
                            da[i * c + start + q] += g[i * len + q];
                        }
                    }
                }
                Op::GatherRows(table, indices) => {
                    let (r, c) = nodes[table.0].dims();
                    let dt = slot(&mut adj, *table, r * c);
                    for (k, &row) in indices.iter().enumerate() {
                        for q in 0..c {
                            dt[row * c + q] += g[k * c + q];
                        }
                    }
                }
                Op::MeanRows(a, indices) => {
                    if indices.is_empty() {
                        continue;
                    }
                    let (r, c) = nodes[a.0].dims();
                    let w = 1.0 / indices.len() as f64;
                    let da = slot(&mut adj, *a, r * c);
                    for &row in indices {
                        for q in 0..c {
                            da[row * c + q] += w * g[q];
                        }
                    }
                }
                Op::Pick(a, index) => {
                    let n = nodes[a.0].value.len();
                    slot(&mut adj, *a, n)[*index] += g[0];
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(adj) {
            if let (Op::Leaf { trainable: true }, Some(g)) = (&node.op, g) {
                match &mut node.grad {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&g) {
                            *a += d;
                        }
                    }
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&x| f(x)).collect();
        let shape = node.shape.clone();
        self.push(shape, value, op)
    }

    fn broadcast(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>), AutodiffError> {
        let na = &self.nodes[a.0];
        let nb = &self.nodes[b.0];
        let (la, lb) = (na.value.len(), nb.value.len());
        if na.shape == nb.shape || (la == lb && na.dims() == nb.dims()) {
            let value = na
                .value
                .iter()
                .zip(&nb.value)
                .map(|(&x, &y)| f(x, y))
                .collect();
            Ok((na.shape.clone(), value))
        } else if lb == 1 {
            let y = nb.value[0];
            Ok((
                na.shape.clone(),
                na.value.iter().map(|&x| f(x, y)).collect(),
            ))
        } else if la == 1 {
            let x = na.value[0];
            Ok((
                nb.shape.clone(),
                nb.value.iter().map(|&y| f(x, y)).collect(),
            ))
        } else {
            Err(self.shape_error(op, a, b))
        }
    }

    fn shape_error(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::Shape {
            op,
            lhs: self.nodes[a.0].shape.clone(),
            rhs: self.nodes[b.0].shape.clone(),
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn broadcast_at(values: &[f64], k: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[k]
    }
}

/// Adds `g` into the adjoint of `v`, summing when `v` was scalar-broadcast.
fn reduce_into(
    adj: &mut [Option<Vec<f64>>],
    v: Var,
    len: usize,
    g: &[f64],
    f: impl Fn(f64) -> f64,
) {
    let d = slot(adj, v, len);
    if len == g.len() {
        for (dk, gk) in d.iter_mut().zip(g) {
            *dk += f(*gk);
        }
    } else {
        d[0] += f(g.iter().sum());
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax over a flat slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
