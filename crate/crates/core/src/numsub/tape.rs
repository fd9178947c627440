use std::borrow::Cow;

use super::{log_sigmoid, log_sum_exp, sigmoid, Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumRows(Var),
    SumAll(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var, Option<Vec<bool>>),
    Pick(Var, usize, usize),
    GaussianKl(Var, Var),
    CrossEntropy(Var, Vec<usize>),
}

/// Records a computation over parameters of one store. Values are computed
/// eagerly; [`Tape::backward`] replays the record in reverse.
pub struct Tape<'s> {
    store: &'s ParamStore,
    vals: Vec<Cow<'s, Tensor>>,
    ops: Vec<Op>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Tape<'s> {
        Tape {
            store,
            vals: Vec::new(),
            ops: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, v: Cow<'s, Tensor>, op: Op) -> Var {
        self.vals.push(v);
        self.ops.push(op);
        Var(self.vals.len() - 1)
    }

    fn owned(&mut self, t: Tensor, op: Op) -> Var {
        self.push(Cow::Owned(t), op)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.owned(t, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Cow::Borrowed(self.store.get(id)), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", x, y));
        }
        let out = x.matmul(y);
        Ok(self.owned(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.owned(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.owned(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.owned(out, Op::Mul(a, b)))
    }

    /// Adds the `1 × c` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_row", xv, bv));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[k % c];
        }
        Ok(self.owned(out, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.owned(out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.owned(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.owned(out, Op::Sigmoid(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(log_sigmoid);
        self.owned(out, Op::LogSigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.owned(out, Op::Exp(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(parts[0]), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.owned(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), v));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.owned(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Column sums as a `1 × c` row.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = Tensor::zeros(1, v.cols());
        for r in 0..v.rows() {
            for (o, &a) in out.data_mut().iter_mut().zip(v.row(r)) {
                *o += a;
            }
        }
        self.owned(out, Op::SumRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.owned(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Rows `idx[k]` of `x`, stacked.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: v.shape(),
                right: (bad, 0),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * v.cols());
        for &i in idx {
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::new(idx.len(), v.cols(), data)?;
        Ok(self.owned(out, Op::GatherRows(x, idx.to_vec())))
    }

    /// `out[idx[k]] += x[k]` into `rows` zero rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let v = self.value(x);
        if idx.len() != v.rows() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                left: v.shape(),
                right: (idx.len(), rows),
            });
        }
        let c = v.cols();
        let mut out = Tensor::zeros(rows, c);
        for (k, &i) in idx.iter().enumerate() {
            for (o, &a) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(v.row(k)) {
                *o += a;
            }
        }
        let mut idx_v = idx.to_vec();
        idx_v.push(rows);
        Ok(self.owned(out, Op::ScatterAddRows(x, idx_v)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = v.clone();
        let c = v.cols();
        for r in 0..v.rows() {
            let lse = log_sum_exp(v.row(r), None);
            for j in 0..c {
                out.data_mut()[r * c + j] = (v.get(r, j) - lse).exp();
            }
        }
        self.owned(out, Op::Softmax(x))
    }

    /// Row-wise log-softmax restricted to `mask` (same for every row); masked
    /// entries are `-inf` and receive no gradient. At least one entry per
    /// row must be unmasked.
    pub fn log_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let v = self.value(x);
        let c = v.cols();
        if let Some(m) = mask {
            if m.len() != c || !m.iter().any(|&b| b) {
                return Err(Error::InvalidArgument(format!(
                    "log_softmax mask of length {} over {c} columns with no open entry",
                    m.len()
                )));
            }
        }
        let mut out = v.clone();
        for r in 0..v.rows() {
            let lse = log_sum_exp(v.row(r), mask);
            for j in 0..c {
                let open = mask.is_none_or(|m| m[j]);
                out.data_mut()[r * c + j] = if open {
                    v.get(r, j) - lse
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        Ok(self.owned(out, Op::LogSoftmax(x, mask.map(<[bool]>::to_vec))))
    }

    /// The single entry `x[r][c]` as a scalar.
    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Var {
        let v = self.value(x).get(r, c);
        self.owned(Tensor::scalar(v), Op::Pick(x, r, c))
    }

    /// `Σ ½(μ² + exp(2s) − 2s − 1)` where `exp(s)` is the standard deviation.
    pub fn gaussian_kl(&mut self, mu: Var, log_sigma: Var) -> Result<Var> {
        self.same_shape("gaussian_kl", mu, log_sigma)?;
        let (m, s) = (self.value(mu), self.value(log_sigma));
        let kl = m
            .data()
            .iter()
            .zip(s.data())
            .map(|(&m, &s)| 0.5 * (m * m + (2.0 * s).exp() - 2.0 * s - 1.0))
            .sum();
        Ok(self.owned(Tensor::scalar(kl), Op::GaussianKl(mu, log_sigma)))
    }

    /// `Σ_r −log softmax(x_r)[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        if targets.len() != v.rows() || targets.iter().any(|&t| t >= v.cols()) {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: v.shape(),
                right: (targets.len(), 1),
            });
        }
        let loss = (0..v.rows())
            .map(|r| log_sum_exp(v.row(r), None) - v.get(r, targets[r]))
            .sum();
        Ok(self.owned(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec()),
        ))
    }

    /// Accumulates `d loss / d param` into `grads` for every parameter the
    /// loss depends on.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(d) = adj[i].take() else { continue };
            let y = &self.vals[i];
            let mut send = |v: Var, g: Tensor| match &mut adj[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            };
            match &self.ops[i] {
                Op::Const => {}
                Op::Param(id) => grads.accumulate(*id, &d),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    send(*a, d.matmul(&bv.transpose()));
                    send(*b, av.transpose().matmul(&d));
                }
                Op::Add(a, b) => {
                    send(*a, d.clone());
                    send(*b, d);
                }
                Op::Sub(a, b) => {
                    send(*b, d.map(|x| -x));
                    send(*a, d);
                }
                Op::Mul(a, b) => {
                    send(*a, d.zip(self.value(*b), |g, x| g * x));
                    send(*b, d.zip(self.value(*a), |g, x| g * x));
                }
                Op::AddRow(x, b) => {
                    let c = d.cols();
                    let mut gb = Tensor::zeros(1, c);
                    for r in 0..d.rows() {
                        for (o, &g) in gb.data_mut().iter_mut().zip(d.row(r)) {
                            *o += g;
                        }
                    }
                    send(*b, gb);
                    send(*x, d);
                }
                Op::Scale(x, s) => send(*x, d.map(|g| g * s)),
                Op::Relu(x) => send(
                    *x,
                    d.zip(self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 }),
                ),
                Op::Sigmoid(x) => send(*x, d.zip(y, |g, s| g * s * (1.0 - s))),
                Op::LogSigmoid(x) => send(*x, d.zip(self.value(*x), |g, v| g * sigmoid(-v))),
                Op::Exp(x) => send(*x, d.zip(y, |g, e| g * e)),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut data = Vec::with_capacity(d.rows() * pc);
                        for r in 0..d.rows() {
                            data.extend_from_slice(&d.row(r)[off..off + pc]);
                        }
                        send(p, Tensor::new(d.rows(), pc, data).expect("sized"));
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pr = self.value(p).rows();
                        let c = d.cols();
                        let data = d.data()[off * c..(off + pr) * c].to_vec();
                        send(p, Tensor::new(pr, c, data).expect("sized"));
                        off += pr;
                    }
                }
                Op::SumRows(x) => {
                    let rows = self.value(*x).rows();
                    let mut data = Vec::with_capacity(rows * d.cols());
                    for _ in 0..rows {
                        data.extend_from_slice(d.data());
                    }
                    send(*x, Tensor::new(rows, d.cols(), data).expect("sized"));
                }
                Op::SumAll(x) => {
                    let (r, c) = self.value(*x).shape();
                    send(*x, Tensor::filled(r, c, d.item()));
                }
                Op::GatherRows(x, idx) => {
                    let (r, c) = self.value(*x).shape();
                    let mut g = Tensor::zeros(r, c);
                    for (k, &row) in idx.iter().enumerate() {
                        for (o, &v) in g.data_mut()[row * c..(row + 1) * c]
                            .iter_mut()
                            .zip(d.row(k))
                        {
                            *o += v;
                        }
                    }
                    send(*x, g);
                }
                Op::ScatterAddRows(x, idx) => {
                    let idx = &idx[..idx.len() - 1];
                    let c = d.cols();
                    let mut data = Vec::with_capacity(idx.len() * c);
                    for &row in idx {
                        data.extend_from_slice(d.row(row));
                    }
                    send(*x, Tensor::new(idx.len(), c, data).expect("sized"));
                }
                Op::Softmax(x) => {
                    let c = y.cols();
                    let mut g = Tensor::zeros(y.rows(), c);
                    for r in 0..y.rows() {
                        let dot: f64 = d.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g.data_mut()[r * c + j] = y.get(r, j) * (d.get(r, j) - dot);
                        }
                    }
                    send(*x, g);
                }
                Op::LogSoftmax(x, mask) => {
                    let c = y.cols();
                    let open = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
                    let mut g = Tensor::zeros(y.rows(), c);
                    for r in 0..y.rows() {
                        let total: f64 = (0..c).filter(|&j| open(j)).map(|j| d.get(r, j)).sum();
                        for j in (0..c).filter(|&j| open(j)) {
                            g.data_mut()[r * c + j] = d.get(r, j) - y.get(r, j).exp() * total;
                        }
                    }
                    send(*x, g);
                }
                Op::Pick(x, r, c) => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut g = Tensor::zeros(rows, cols);
                    g.data_mut()[r * cols + c] = d.item();
                    send(*x, g);
                }
                Op::GaussianKl(mu, ls) => {
                    let k = d.item();
                    send(*mu, self.value(*mu).map(|m| k * m));
                    send(*ls, self.value(*ls).map(|s| k * ((2.0 * s).exp() - 1.0)));
                }
                Op::CrossEntropy(x, targets) => {
                    let v = self.value(*x);
                    let (rows, c) = v.shape();
                    let k = d.item();
                    let mut g = Tensor::zeros(rows, c);
                    for r in 0..rows {
                        let lse = log_sum_exp(v.row(r), None);
                        for j in 0..c {
                            let p = (v.get(r, j) - lse).exp();
                            let t = if j == targets[r] { 1.0 } else { 0.0 };
                            g.data_mut()[r * c + j] = k * (p - t);
                        }
                    }
                    send(*x, g);
                }
            }
        }
        Ok(())
    }
}

/// Largest relative error between analytic gradients and central finite
/// differences over every parameter entry. The relative error of an entry is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check<F>(store: &mut ParamStore, eps: f64, floor: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut grads = Gradients::zeros_like(store);
    {
        let mut t = Tape::new(store);
        let loss = f(&mut t)?;
        t.backward(loss, &mut grads)?;
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new(s);
        let l = f(&mut t)?;
        Ok(t.value(l).item())
    };
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(id).data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(x));
        (s, id)
    }

    #[test]
    fn trivial_values() {
        let (s, id) = scalar_store(0.0);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).item(), 0.5);
        let z = t.constant(Tensor::row_vector(vec![0.0, 0.0]));
        let sm = t.softmax(z);
        assert_eq!(t.value(sm).data(), &[0.5, 0.5]);
        let kl = t.gaussian_kl(z, z).unwrap();
        assert_eq!(t.value(kl).item(), 0.0);
    }

    #[test]
    fn simple_derivatives() {
        let (s, id) = scalar_store(0.0);
        let mut g = Gradients::zeros_like(&s);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let y = t.sigmoid(x);
        t.backward(y, &mut g).unwrap();
        assert_eq!(g.get(id).item(), 0.25);

        let (s, id) = scalar_store(3.0);
        let mut g = Gradients::zeros_like(&s);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let y = t.mul(x, x).unwrap();
        t.backward(y, &mut g).unwrap();
        assert_eq!(g.get(id).item(), 6.0);
        // A second backward accumulates.
        t.backward(y, &mut g).unwrap();
        assert_eq!(g.get(id).item(), 12.0);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        match t.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => assert_eq!((left, right), ((2, 3), (2, 3))),
            other => panic!("{other:?}"),
        }
        let mut g = Gradients::zeros_like(&s);
        assert!(t.backward(a, &mut g).is_err());
    }

    #[test]
    fn two_layer_relu_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let w1 = s.add_init("w1", 4, 6, &mut rng);
        let b1 = s.add_init("b1", 1, 6, &mut rng);
        let w2 = s.add_init("w2", 6, 3, &mut rng);
        let x = Tensor::new(
            5,
            4,
            (0..20).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect(),
        )
        .unwrap();
        let err = gradient_check(&mut s, 1e-5, 1e-6, |t| {
            let xv = t.constant(x.clone());
            let (w1, b1, w2) = (t.param(w1), t.param(b1), t.param(w2));
            let h = t.matmul(xv, w1)?;
            let h = t.add_row(h, b1)?;
            let h = t.relu(h);
            let o = t.matmul(h, w2)?;
            t.cross_entropy(o, &[0, 1, 2, 1, 0])
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn op_gradchecks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = ParamStore::new();
        let a = s.add_init("a", 4, 3, &mut rng);
        let b = s.add_init("b", 1, 3, &mut rng);
        let err = gradient_check(&mut s, 1e-5, 1e-6, |t| {
            let (a, b) = (t.param(a), t.param(b));
            let g = t.gather_rows(a, &[0, 2, 2, 3])?;
            let sc = t.scatter_add_rows(g, &[1, 0, 1, 2], 3)?;
            let e = t.exp(sc);
            let rs = t.row_sum(e);
            let c = t.concat_cols(&[rs, b])?;
            let cr = t.concat_rows(&[b, b])?;
            let ls = t.log_softmax(c, Some(&[true, false, true, true, true, false]))?;
            let p = t.pick(ls, 0, 3);
            let sm = t.softmax(cr);
            let smp = t.pick(sm, 1, 2);
            let lsg = t.log_sigmoid(b);
            let sg = t.sigmoid(lsg);
            let sgs = t.sum_all(sg);
            let kl = t.gaussian_kl(b, rs)?;
            let d = t.sub(p, smp)?;
            let d = t.add(d, sgs)?;
            let d = t.add(d, kl)?;
            Ok(t.scale(d, 0.7))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn softmax_ce_translation_invariant() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::row_vector(vec![0.3, -1.2, 2.0]));
        let y = t.constant(Tensor::row_vector(vec![100.3, 98.8, 102.0]));
        let a = t.cross_entropy(x, &[1]).unwrap();
        let b = t.cross_entropy(y, &[1]).unwrap();
        assert!((t.value(a).item() - t.value(b).item()).abs() < 1e-9);
        let sm = t.softmax(x);
        assert!((t.value(sm).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_steps() {
        let (mut s, id) = scalar_store(1.0);
        let mut adam = super::super::Adam::new(Default::default(), &s);
        let zero = Gradients::zeros_like(&s);
        adam.step(&mut s, &zero).unwrap();
        assert_eq!(s.get(id).item(), 1.0);

        let (mut s, id) = scalar_store(1.0);
        let cfg = super::super::AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = super::super::Adam::new(cfg, &s);
        let mut g = Gradients::zeros_like(&s);
        g.tensors[0] = Tensor::scalar(1.0);
        adam.step(&mut s, &g).unwrap();
        assert!((s.get(id).item() - 0.9).abs() < 1e-6);

        g.tensors[0] = Tensor::scalar(f64::NAN);
        match adam.step(&mut s, &g) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains('x')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.add_init("enc.w", 3, 4, &mut rng);
        s.add("bias", Tensor::row_vector(vec![1.5, -0.25]));
        let bytes = s.to_bytes();
        let back = ParamStore::read_binary(bytes.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(
            s.manifest()["params"][0]["shape"],
            serde_json::json!([3, 4])
        );
        assert!(ParamStore::read_binary(&b"nope"[..]).is_err());
    }
}
