use super::array::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{DiffError, NumArray};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Value(usize);

impl Value {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Value, Value),
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Div(Value, Value),
    Neg(Value),
    AddScalar(Value),
    MulScalar(Value, f64),
    Log(Value),
    Exp(Value),
    Sigmoid(Value),
    Relu(Value),
    Clamp(Value, f64, f64),
    Powf(Value, f64),
    Sum(Value, Option<usize>),
    Mean(Value, Option<usize>),
    Concat(Value, Value, usize),
    AddRow(Value, Value),
    Reshape(Value),
    GatherRows(Value, Vec<usize>),
    ScatterSym(Value, Vec<(usize, usize)>),
    Dropout(Value, Vec<f64>),
    CrossEntropy(Value, Vec<usize>, Vec<f64>),
    Mse(Value, NumArray),
}

#[derive(Debug)]
struct Node {
    value: NumArray,
    grad: Option<NumArray>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in creation order, which is also a
/// topological order, so `backward` walks the node list once in reverse.
///
/// Operations whose output is treated as a constant by differentiation
/// (`stop_gradient`, `step`, dropout masks) can be recorded and replayed: a
/// tape built with [`Tape::replaying`] returns the recorded constants in call
/// order instead of recomputing them. Finite-difference oracles use this to
/// evaluate the same piecewise-smooth function that autodiff differentiates.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    recorded: Option<Vec<NumArray>>,
    replay: Option<(Vec<NumArray>, usize)>,
}

fn dim_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Dimension { op, detail }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that records every frozen constant it produces.
    pub fn recording() -> Self {
        Self { recorded: Some(Vec::new()), ..Self::default() }
    }

    /// A tape that substitutes previously recorded constants, in order.
    pub fn replaying(constants: Vec<NumArray>) -> Self {
        Self { replay: Some((constants, 0)), ..Self::default() }
    }

    pub fn take_recorded(&mut self) -> Vec<NumArray> {
        self.recorded.take().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Value) -> &NumArray {
        &self.nodes[v.0].value
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, v: Value) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Value) -> Option<&NumArray> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: NumArray, op: Op, requires_grad: bool) -> Value {
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Value(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: NumArray, op: Op, parents: &[Value]) -> Result<Value, DiffError> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op: name, node: self.nodes.len() });
        }
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    pub fn leaf(&mut self, value: NumArray, requires_grad: bool) -> Value {
        self.push_raw(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: NumArray) -> Value {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: NumArray) -> Value {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Value {
        self.constant(NumArray::scalar(x))
    }

    fn frozen(&mut self, op: &'static str, computed: NumArray) -> Result<NumArray, DiffError> {
        let out = match &mut self.replay {
            Some((values, pos)) => {
                let v = values.get(*pos).cloned().ok_or_else(|| {
                    DiffError::Usage(format!("{op}: replay exhausted after {pos} constants"))
                })?;
                *pos += 1;
                if v.shape() != computed.shape() {
                    return Err(dim_err(op, format!("replayed {:?} vs computed {:?}", v.shape(), computed.shape())));
                }
                v
            }
            None => computed,
        };
        if let Some(rec) = &mut self.recorded {
            rec.push(out.clone());
        }
        Ok(out)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (r, k, c) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; r * c];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, r, k, c);
        let value = NumArray::new(vec![r, c], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    // ---- elementwise ----

    fn broadcast_shape(&self, op: &'static str, a: Value, b: Value) -> Result<Vec<usize>, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() || vb.is_scalar_like() {
            Ok(va.shape().to_vec())
        } else if va.is_scalar_like() {
            Ok(vb.shape().to_vec())
        } else {
            Err(dim_err(op, format!("{:?} vs {:?}", va.shape(), vb.shape())))
        }
    }

    fn zip_with(&self, a: Value, b: Value, n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let at = |i: usize| if da.len() == 1 { da[0] } else { da[i] };
        let bt = |i: usize| if db.len() == 1 { db[0] } else { db[i] };
        (0..n).map(|i| f(at(i), bt(i))).collect()
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Value,
        b: Value,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Value, DiffError> {
        let shape = self.broadcast_shape(name, a, b)?;
        let n = shape.iter().product();
        let data = self.zip_with(a, b, n, f);
        self.push(name, NumArray::new(shape, data)?, op, &[a, b])
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        if self.value(b).data().contains(&0.0) {
            return Err(DiffError::Domain { op: "div", detail: "division by zero".into() });
        }
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn unary(&mut self, name: &'static str, a: Value, op: Op, f: impl Fn(f64) -> f64) -> Result<Value, DiffError> {
        let value = self.value(a).map(f);
        self.push(name, value, op, &[a])
    }

    pub fn neg(&mut self, a: Value) -> Result<Value, DiffError> {
        self.unary("neg", a, Op::Neg(a), |x| -x)
    }

    pub fn add_scalar(&mut self, a: Value, c: f64) -> Result<Value, DiffError> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: Value, c: f64) -> Result<Value, DiffError> {
        self.unary("mul_scalar", a, Op::MulScalar(a, c), |x| x * c)
    }

    /// Natural log. Inputs must already be strictly positive.
    pub fn log(&mut self, a: Value) -> Result<Value, DiffError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(DiffError::Domain { op: "log", detail: format!("nonpositive input {bad}") });
        }
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: Value) -> Result<Value, DiffError> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn sigmoid(&mut self, a: Value) -> Result<Value, DiffError> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Value) -> Result<Value, DiffError> {
        self.unary("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn clamp(&mut self, a: Value, lo: f64, hi: f64) -> Result<Value, DiffError> {
        if lo > hi {
            return Err(DiffError::Domain { op: "clamp", detail: format!("lo {lo} > hi {hi}") });
        }
        self.unary("clamp", a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn powf(&mut self, a: Value, exponent: f64) -> Result<Value, DiffError> {
        if exponent.fract() != 0.0 && self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(DiffError::Domain { op: "powf", detail: "fractional power of nonpositive input".into() });
        }
        self.unary("powf", a, Op::Powf(a, exponent), |x| x.powf(exponent))
    }

    /// Identical payload, no gradient path back to `a`.
    pub fn stop_gradient(&mut self, a: Value) -> Result<Value, DiffError> {
        let v = self.value(a).clone();
        let v = self.frozen("stop_gradient", v)?;
        Ok(self.constant(v))
    }

    /// `1[x > threshold]`, a constant with respect to differentiation.
    pub fn step(&mut self, a: Value, threshold: f64) -> Result<Value, DiffError> {
        let v = self.value(a).map(|x| if x > threshold { 1.0 } else { 0.0 });
        let v = self.frozen("step", v)?;
        Ok(self.constant(v))
    }

    /// Inverted dropout. `uniform` supplies one draw in [0,1) per element.
    pub fn dropout(&mut self, a: Value, rate: f64, mut uniform: impl FnMut() -> f64) -> Result<Value, DiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DiffError::Domain { op: "dropout", detail: format!("rate {rate} outside [0,1)") });
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.value(a).shape().to_vec();
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n).map(|_| if uniform() >= rate { keep } else { 0.0 }).collect();
        let mask = self.frozen("dropout", NumArray::new(shape, mask)?)?.into_data();
        let value = NumArray::new(
            self.value(a).shape().to_vec(),
            self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        )?;
        self.push("dropout", value, Op::Dropout(a, mask), &[a])
    }

    // ---- shape ops and reductions ----

    fn check_axis(&self, op: &'static str, a: Value, axis: usize) -> Result<(), DiffError> {
        let rank = self.value(a).rank();
        if axis >= rank {
            return Err(dim_err(op, format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    fn reduce(&self, a: Value, axis: Option<usize>) -> NumArray {
        let va = self.value(a);
        match axis {
            None => NumArray::scalar(va.sum()),
            Some(ax) => {
                let (outer, len, inner) = axis_split(va.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                let d = va.data();
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += d[base + i];
                        }
                    }
                }
                let mut shape = va.shape().to_vec();
                shape.remove(ax);
                NumArray::new(shape, out).expect("reduce shape")
            }
        }
    }

    pub fn sum(&mut self, a: Value, axis: Option<usize>) -> Result<Value, DiffError> {
        if let Some(ax) = axis {
            self.check_axis("sum", a, ax)?;
        }
        let value = self.reduce(a, axis);
        self.push("sum", value, Op::Sum(a, axis), &[a])
    }

    pub fn mean(&mut self, a: Value, axis: Option<usize>) -> Result<Value, DiffError> {
        let count = match axis {
            Some(ax) => {
                self.check_axis("mean", a, ax)?;
                self.value(a).shape()[ax]
            }
            None => self.value(a).len(),
        };
        if count == 0 {
            return Err(DiffError::Domain { op: "mean", detail: "mean over zero elements".into() });
        }
        let mut value = self.reduce(a, axis);
        value.scale(1.0 / count as f64);
        self.push("mean", value, Op::Mean(a, axis), &[a])
    }

    pub fn concat(&mut self, a: Value, b: Value, axis: usize) -> Result<Value, DiffError> {
        self.check_axis("concat", a, axis)?;
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let compatible = sa.len() == sb.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(dim_err("concat", format!("{sa:?} and {sb:?} along axis {axis}")));
        }
        let (outer, la, inner) = axis_split(&sa, axis);
        let lb = sb[axis];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            out.extend_from_slice(&da[o * la * inner..(o + 1) * la * inner]);
            out.extend_from_slice(&db[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = sa;
        shape[axis] = la + lb;
        let value = NumArray::new(shape, out)?;
        self.push("concat", value, Op::Concat(a, b, axis), &[a, b])
    }

    /// `a[r×c] + b[c]`, adding `b` to every row.
    pub fn add_row(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(dim_err("add_row", format!("{sa:?} + row {sb:?}")));
        }
        let c = sa[1];
        let bias = self.value(b).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, x)| x + bias[i % c]).collect();
        let value = NumArray::new(sa.to_vec(), data)?;
        self.push("add_row", value, Op::AddRow(a, b), &[a, b])
    }

    pub fn reshape(&mut self, a: Value, shape: &[usize]) -> Result<Value, DiffError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(&mut self, a: Value, rows: &[usize]) -> Result<Value, DiffError> {
        let sa = self.value(a).shape();
        if sa.len() != 2 {
            return Err(dim_err("gather_rows", format!("expected a matrix, got {sa:?}")));
        }
        let (n, c) = (sa[0], sa[1]);
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(dim_err("gather_rows", format!("row {bad} out of range for {n} rows")));
        }
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(&d[r * c..(r + 1) * c]);
        }
        let value = NumArray::new(vec![rows.len(), c], out)?;
        self.push("gather_rows", value, Op::GatherRows(a, rows.to_vec()), &[a])
    }

    /// Writes `a[k]` to positions (i,j) and (j,i) of an `n×n` zero matrix for
    /// the k-th pair. Pairs must be distinct unordered positions.
    pub fn scatter_symmetric(&mut self, a: Value, pairs: &[(usize, usize)], n: usize) -> Result<Value, DiffError> {
        let src = self.value(a);
        if src.len() != pairs.len() {
            return Err(dim_err("scatter_symmetric", format!("{} values for {} pairs", src.len(), pairs.len())));
        }
        let mut out = vec![0.0; n * n];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= n || j >= n || i == j {
                return Err(dim_err("scatter_symmetric", format!("pair ({i},{j}) invalid for n={n}")));
            }
            out[i * n + j] = src.data()[k];
            out[j * n + i] = src.data()[k];
        }
        let value = NumArray::new(vec![n, n], out)?;
        self.push("scatter_symmetric", value, Op::ScatterSym(a, pairs.to_vec()), &[a])
    }

    // ---- losses ----

    /// Mean cross-entropy of row-wise logits against class indices.
    pub fn cross_entropy(&mut self, logits: Value, labels: &[usize]) -> Result<Value, DiffError> {
        let s = self.value(logits).shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(dim_err("cross_entropy", format!("logits {s:?} for {} labels", labels.len())));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(DiffError::Domain { op: "cross_entropy", detail: format!("label {bad} not in [0,{c})") });
        }
        let d = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for r in 0..n {
            let row = &d[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[labels[r]];
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
        }
        let value = NumArray::scalar(total / n as f64);
        self.push("cross_entropy", value, Op::CrossEntropy(logits, labels.to_vec(), probs), &[logits])
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, pred: Value, target: &NumArray) -> Result<Value, DiffError> {
        let p = self.value(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(dim_err("mse", format!("{:?} vs target {:?}", p.shape(), target.shape())));
        }
        let n = p.len() as f64;
        let loss = p.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push("mse", NumArray::scalar(loss), Op::Mse(pred, target.clone()), &[pred])
    }

    // ---- reverse pass ----

    /// Accumulates d(root)/d(node) into every node that requires a gradient.
    pub fn backward(&mut self, root: Value) -> Result<(), DiffError> {
        if !self.value(root).is_scalar_like() {
            return Err(DiffError::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let seed = NumArray::filled(self.value(root).shape(), 1.0);
        match &mut self.nodes[root.0].grad {
            Some(g) => g.add_assign(&seed),
            slot => *slot = Some(seed),
        }
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else { continue };
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (parent, contrib) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[parent.0].grad {
                    Some(pg) => pg.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Clears every stored gradient.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn reduce_to(&self, target: Value, full: Vec<f64>) -> NumArray {
        let shape = self.value(target).shape().to_vec();
        if self.value(target).len() == full.len() {
            NumArray::new(shape, full).expect("grad shape")
        } else {
            NumArray::new(shape, vec![full.iter().sum()]).expect("grad shape")
        }
    }

    fn bcast(&self, v: Value, i: usize) -> f64 {
        let d = self.value(v).data();
        if d.len() == 1 {
            d[0]
        } else {
            d[i]
        }
    }

    fn local_grads(&self, idx: usize, g: &NumArray) -> Vec<(Value, NumArray)> {
        let node = &self.nodes[idx];
        let gd = g.data();
        let out = node.value.data();
        let like = |v: Value, data: Vec<f64>| NumArray::new(self.value(v).shape().to_vec(), data).expect("grad shape");
        let wants = |v: Value| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (r, k, c) = (sa[0], sa[1], sb[1]);
                let mut res = Vec::new();
                if wants(*a) {
                    let mut da = vec![0.0; r * k];
                    gemm_nt_acc(gd, self.value(*b).data(), &mut da, r, k, c);
                    res.push((*a, like(*a, da)));
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * c];
                    gemm_tn_acc(self.value(*a).data(), gd, &mut db, r, k, c);
                    res.push((*b, like(*b, db)));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, self.reduce_to(*a, gd.to_vec())), (*b, self.reduce_to(*b, gd.to_vec()))],
            Op::Sub(a, b) => vec![
                (*a, self.reduce_to(*a, gd.to_vec())),
                (*b, self.reduce_to(*b, gd.iter().map(|x| -x).collect())),
            ],
            Op::Mul(a, b) => {
                let da = gd.iter().enumerate().map(|(i, x)| x * self.bcast(*b, i)).collect();
                let db = gd.iter().enumerate().map(|(i, x)| x * self.bcast(*a, i)).collect();
                vec![(*a, self.reduce_to(*a, da)), (*b, self.reduce_to(*b, db))]
            }
            Op::Div(a, b) => {
                let da = gd.iter().enumerate().map(|(i, x)| x / self.bcast(*b, i)).collect();
                let db = gd
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let bv = self.bcast(*b, i);
                        -x * self.bcast(*a, i) / (bv * bv)
                    })
                    .collect();
                vec![(*a, self.reduce_to(*a, da)), (*b, self.reduce_to(*b, db))]
            }
            Op::Neg(a) => vec![(*a, like(*a, gd.iter().map(|x| -x).collect()))],
            Op::AddScalar(a) | Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::MulScalar(a, c) => vec![(*a, like(*a, gd.iter().map(|x| x * c).collect()))],
            Op::Log(a) => {
                let x = self.value(*a).data();
                vec![(*a, like(*a, gd.iter().zip(x).map(|(g, x)| g / x).collect()))]
            }
            Op::Exp(a) => vec![(*a, like(*a, gd.iter().zip(out).map(|(g, y)| g * y).collect()))],
            Op::Sigmoid(a) => vec![(*a, like(*a, gd.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect()))],
            Op::Relu(a) => {
                let x = self.value(*a).data();
                vec![(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()))]
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 }).collect();
                vec![(*a, like(*a, d))]
            }
            Op::Powf(a, p) => {
                let x = self.value(*a).data();
                vec![(*a, like(*a, gd.iter().zip(x).map(|(g, x)| g * p * x.powf(p - 1.0)).collect()))]
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let va = self.value(*a);
                let count = match axis {
                    Some(ax) => va.shape()[*ax],
                    None => va.len(),
                };
                let scale = if matches!(node.op, Op::Mean(..)) { 1.0 / count as f64 } else { 1.0 };
                let d = match axis {
                    None => vec![gd[0] * scale; va.len()],
                    Some(ax) => {
                        let (outer, len, inner) = axis_split(va.shape(), *ax);
                        let mut d = vec![0.0; va.len()];
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    d[(o * len + l) * inner + i] = gd[o * inner + i] * scale;
                                }
                            }
                        }
                        d
                    }
                };
                vec![(*a, like(*a, d))]
            }
            Op::Concat(a, b, axis) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (outer, la, inner) = axis_split(sa, *axis);
                let lb = sb[*axis];
                let mut da = Vec::with_capacity(outer * la * inner);
                let mut db = Vec::with_capacity(outer * lb * inner);
                let stride = (la + lb) * inner;
                for o in 0..outer {
                    da.extend_from_slice(&gd[o * stride..o * stride + la * inner]);
                    db.extend_from_slice(&gd[o * stride + la * inner..(o + 1) * stride]);
                }
                vec![(*a, like(*a, da)), (*b, like(*b, db))]
            }
            Op::AddRow(a, b) => {
                let c = self.value(*b).len();
                let mut db = vec![0.0; c];
                for (i, x) in gd.iter().enumerate() {
                    db[i % c] += x;
                }
                vec![(*a, like(*a, gd.to_vec())), (*b, like(*b, db))]
            }
            Op::GatherRows(a, rows) => {
                let c = self.value(*a).cols();
                let mut da = vec![0.0; self.value(*a).len()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        da[r * c + j] += gd[k * c + j];
                    }
                }
                vec![(*a, like(*a, da))]
            }
            Op::ScatterSym(a, pairs) => {
                let n = node.value.rows();
                let da = pairs.iter().map(|&(i, j)| gd[i * n + j] + gd[j * n + i]).collect();
                vec![(*a, like(*a, da))]
            }
            Op::Dropout(a, mask) => vec![(*a, like(*a, gd.iter().zip(mask).map(|(g, m)| g * m).collect()))],
            Op::CrossEntropy(a, labels, probs) => {
                let c = self.value(*a).cols();
                let n = labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * gd[0] / n).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * c + y] -= gd[0] / n;
                }
                vec![(*a, like(*a, d))]
            }
            Op::Mse(a, target) => {
                let x = self.value(*a).data();
                let n = x.len() as f64;
                let d = x.iter().zip(target.data()).map(|(p, t)| 2.0 * (p - t) / n * gd[0]).collect();
                vec![(*a, like(*a, d))]
            }
        }
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
