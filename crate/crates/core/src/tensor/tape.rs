use std::cell::{Ref, RefCell};
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};

use super::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    /// `a * b^T`
    MatMulT(usize, usize),
    Add(usize, usize),
    /// `a + 1 b` for a `1 x n` row `b`
    AddRow(usize, usize),
    Scale(usize, T),
    MulConst(usize, Array2<T>),
    Relu(usize),
    Elu(usize),
    SoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    RepeatRow(usize),
    FlattenPad(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Array2<T>,
        inv_std: Array1<T>,
    },
    GraphAttention(Box<GatCache<T>>),
    CrossEntropy {
        logits: usize,
        target: usize,
        probs: Array1<T>,
    },
    WeightedSum(Vec<(usize, T)>),
}

struct GatCache<T> {
    h: usize,
    a_src: usize,
    a_dst: usize,
    heads: usize,
    slope: T,
    neighbors: Arc<Vec<Vec<usize>>>,
    /// Per node `i`, per neighbor slot, per head: attention weight and
    /// pre-activation score.
    alpha: Vec<Vec<T>>,
    score: Vec<Vec<T>>,
}

struct Entry<T> {
    value: Array2<T>,
    op: Op<T>,
}

/// Records every operation so that [`Tape::backward`] can return gradients
/// for all recorded values. Each forward pass gets its own tape.
pub struct Tape<T: Real> {
    entries: RefCell<Vec<Entry<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn leaky(x: impl Real, slope: impl Real) -> f64 {
    if x > x - x {
        x.as_f64()
    } else {
        x.as_f64() * slope.as_f64()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            entries: RefCell::new(Vec::with_capacity(256)),
        }
    }

    fn push(&self, value: Array2<T>, op: Op<T>) -> Var {
        let mut e = self.entries.borrow_mut();
        e.push(Entry { value, op });
        Var(e.len() - 1)
    }

    fn val(&self, v: Var) -> Ref<'_, Array2<T>> {
        Ref::map(self.entries.borrow(), |e| &e[v.0].value)
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Array2<T> {
        self.val(v).clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.val(v).dim()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.val(v)[[0, 0]]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = self.val(a).dot(&*self.val(b));
        self.push(out, Op::MatMul(a.0, b.0))
    }

    pub fn matmul_t(&self, a: Var, b: Var) -> Var {
        let out = self.val(a).dot(&self.val(b).t());
        self.push(out, Op::MatMulT(a.0, b.0))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = &*self.val(a) + &*self.val(b);
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let out = {
            let r = self.val(row);
            assert_eq!(r.nrows(), 1, "add_row expects a 1 x n row");
            &*self.val(a) + &r.row(0)
        };
        self.push(out, Op::AddRow(a.0, row.0))
    }

    /// `x W + b`
    pub fn affine(&self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let out = self.val(a).mapv(|x| x * c);
        self.push(out, Op::Scale(a.0, c))
    }

    pub fn mul_const(&self, a: Var, mask: Array2<T>) -> Var {
        let out = &*self.val(a) * &mask;
        self.push(out, Op::MulConst(a.0, mask))
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.val(a).mapv(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a.0))
    }

    pub fn elu(&self, a: Var) -> Var {
        let out = self
            .val(a)
            .mapv(|x| if x > T::zero() { x } else { x.exp() - T::one() });
        self.push(out, Op::Elu(a.0))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let mut out = self.value(a);
        for mut row in out.rows_mut() {
            let m = row.fold(T::neg_infinity(), |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z: T = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(out, Op::SoftmaxRows(a.0))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let out = {
            let vals: Vec<_> = parts.iter().map(|&p| self.val(p)).collect();
            let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("row counts agree")
        };
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let out = {
            let vals: Vec<_> = parts.iter().map(|&p| self.val(p)).collect();
            let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("column counts agree")
        };
        self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Var {
        let out = self.val(a).slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(a.0, start))
    }

    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let out = self.val(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a.0, start))
    }

    /// Stacks `rows` copies of a `1 x n` row.
    pub fn repeat_row(&self, a: Var, rows: usize) -> Var {
        let out = {
            let v = self.val(a);
            assert_eq!(v.nrows(), 1);
            v.broadcast((rows, v.ncols())).expect("broadcast").to_owned()
        };
        self.push(out, Op::RepeatRow(a.0))
    }

    /// Flattens a `k x d` matrix row-major into `1 x (cap d)`, zero-padding
    /// the rows past `k`.
    pub fn flatten_pad(&self, a: Var, cap: usize) -> Var {
        let out = {
            let v = self.val(a);
            let (k, d) = v.dim();
            assert!(k <= cap, "{k} rows exceed capacity {cap}");
            let mut out = Array2::zeros((1, cap * d));
            for (i, row) in v.rows().into_iter().enumerate() {
                out.slice_mut(s![0, i * d..(i + 1) * d]).assign(&row);
            }
            out
        };
        self.push(out, Op::FlattenPad(a.0))
    }

    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let (out, xhat, inv_std) = {
            let xv = self.val(x);
            let g = self.val(gamma);
            let b = self.val(beta);
            let n = T::lit(xv.ncols() as f64);
            let mut xhat = xv.clone();
            let mut inv_std = Array1::zeros(xv.nrows());
            for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
                let mean = row.sum() / n;
                row.mapv_inplace(|v| v - mean);
                let var = row.iter().map(|&v| v * v).sum::<T>() / n;
                let is = T::one() / (var + eps).sqrt();
                row.mapv_inplace(|v| v * is);
                inv_std[i] = is;
            }
            let out = &(&xhat * &g.row(0)) + &b.row(0);
            (out, xhat, inv_std)
        };
        self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head graph attention aggregation.
    ///
    /// `h` is `M x F` with `F = heads * dh`; head `k` owns columns
    /// `k*dh..(k+1)*dh`. For every node `i` and head `k`,
    /// `out_i = sum_j alpha_ij h_j` over `j in neighbors[i]`, where
    /// `alpha_i. = softmax_j(LeakyReLU(<h_i, a_dst> + <h_j, a_src>))` with the
    /// dot products restricted to the head's columns.
    pub fn graph_attention(
        &self,
        h: Var,
        a_src: Var,
        a_dst: Var,
        heads: usize,
        neighbors: Arc<Vec<Vec<usize>>>,
        slope: T,
    ) -> Var {
        let (out, alpha, score) = {
            let hv = self.val(h);
            let asrc = self.val(a_src);
            let adst = self.val(a_dst);
            let (m, f) = hv.dim();
            assert_eq!(neighbors.len(), m, "one neighbor list per node");
            assert_eq!(f % heads, 0);
            let dh = f / heads;
            let mut ssrc = Array2::<T>::zeros((m, heads));
            let mut sdst = Array2::<T>::zeros((m, heads));
            for i in 0..m {
                for k in 0..heads {
                    let cols = k * dh..(k + 1) * dh;
                    let row = hv.slice(s![i, cols.clone()]);
                    ssrc[[i, k]] = row.dot(&asrc.slice(s![0, cols.clone()]));
                    sdst[[i, k]] = row.dot(&adst.slice(s![0, cols]));
                }
            }
            let mut out = Array2::<T>::zeros((m, f));
            let mut alpha = Vec::with_capacity(m);
            let mut score = Vec::with_capacity(m);
            for i in 0..m {
                let nb = &neighbors[i];
                let mut a_i = vec![T::zero(); nb.len() * heads];
                let mut z_i = vec![T::zero(); nb.len() * heads];
                for k in 0..heads {
                    let mut mx = T::neg_infinity();
                    for (slot, &j) in nb.iter().enumerate() {
                        let z = sdst[[i, k]] + ssrc[[j, k]];
                        z_i[slot * heads + k] = z;
                        let e = T::lit(leaky(z, slope));
                        a_i[slot * heads + k] = e;
                        mx = mx.max(e);
                    }
                    let mut total = T::zero();
                    for slot in 0..nb.len() {
                        let e = (a_i[slot * heads + k] - mx).exp();
                        a_i[slot * heads + k] = e;
                        total += e;
                    }
                    for slot in 0..nb.len() {
                        a_i[slot * heads + k] /= total;
                    }
                    for (slot, &j) in nb.iter().enumerate() {
                        let w = a_i[slot * heads + k];
                        for c in k * dh..(k + 1) * dh {
                            out[[i, c]] += w * hv[[j, c]];
                        }
                    }
                }
                alpha.push(a_i);
                score.push(z_i);
            }
            (out, alpha, score)
        };
        self.push(
            out,
            Op::GraphAttention(Box::new(GatCache {
                h: h.0,
                a_src: a_src.0,
                a_dst: a_dst.0,
                heads,
                slope,
                neighbors,
                alpha,
                score,
            })),
        )
    }

    /// `-log softmax(logits)[target]` as a `1 x 1` value; `logits` may be a
    /// row or a column.
    pub fn cross_entropy(&self, logits: Var, target: usize) -> Var {
        let (loss, probs) = {
            let l = self.val(logits);
            let flat: Array1<T> = l.iter().copied().collect();
            assert!(target < flat.len(), "target {target} out of range {}", flat.len());
            let m = flat.fold(T::neg_infinity(), |m, &x| m.max(x));
            let exps = flat.mapv(|x| (x - m).exp());
            let z = exps.sum();
            let probs = exps / z;
            let loss = -(flat[target] - m - z.ln());
            (loss, probs)
        };
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits: logits.0,
                target,
                probs,
            },
        )
    }

    /// `sum_i w_i x_i` over `1 x 1` values.
    pub fn weighted_sum(&self, terms: &[(Var, T)]) -> Var {
        let total = terms
            .iter()
            .fold(T::zero(), |acc, &(v, w)| acc + w * self.val(v)[[0, 0]]);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::WeightedSum(terms.iter().map(|&(v, w)| (v.0, w)).collect()),
        )
    }

    /// Gradients of the `1 x 1` value `root` with respect to everything
    /// recorded before it.
    pub fn backward(&self, root: Var) -> Grads<T> {
        let entries = self.entries.borrow();
        assert_eq!(entries[root.0].value.dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<T>>> = (0..entries.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        fn acc<T: Real>(grads: &mut [Option<Array2<T>>], i: usize, g: Array2<T>) {
            match &mut grads[i] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let entry = &entries[idx];
            match &entry.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&entries[*b].value.t());
                    let gb = entries[*a].value.t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&entries[*b].value);
                    let gb = g.t().dot(&entries[*a].value);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.mapv(|x| x * *c)),
                Op::MulConst(a, mask) => acc(&mut grads, *a, &g * mask),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&entries[*a].value, |gv, &x| {
                        if x <= T::zero() {
                            *gv = T::zero()
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Elu(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&entry.value, |gv, &y| {
                        if y <= T::zero() {
                            *gv *= y + T::one()
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &entry.value;
                    let mut ga = Array2::zeros(y.dim());
                    for ((mut out, yr), gr) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        let dot = yr.dot(&gr);
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = entries[p].value.ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = entries[p].value.nrows();
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(entries[*a].value.dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(entries[*a].value.dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::RepeatRow(a) => {
                    acc(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::FlattenPad(a) => {
                    let (k, d) = entries[*a].value.dim();
                    let ga = g
                        .slice(s![0, ..k * d])
                        .to_owned()
                        .into_shape_with_order((k, d))
                        .expect("shape");
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = &entries[*gamma].value;
                    let n = T::lit(xhat.ncols() as f64);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * &gam.row(0);
                    let mut dx = Array2::zeros(g.dim());
                    for i in 0..g.nrows() {
                        let dr = dxhat.row(i);
                        let xr = xhat.row(i);
                        let s1 = dr.sum();
                        let s2 = dr.dot(&xr);
                        let is = inv_std[i];
                        for c in 0..g.ncols() {
                            dx[[i, c]] = is / n * (n * dr[c] - s1 - xr[c] * s2);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::GraphAttention(cache) => {
                    let hv = &entries[cache.h].value;
                    let asrc = &entries[cache.a_src].value;
                    let adst = &entries[cache.a_dst].value;
                    let (m, f) = hv.dim();
                    let heads = cache.heads;
                    let dh = f / heads;
                    let mut dh_mat = Array2::<T>::zeros((m, f));
                    let mut dssrc = Array2::<T>::zeros((m, heads));
                    let mut dsdst = Array2::<T>::zeros((m, heads));
                    for i in 0..m {
                        let nb = &cache.neighbors[i];
                        let a_i = &cache.alpha[i];
                        let z_i = &cache.score[i];
                        for k in 0..heads {
                            let cols = k * dh..(k + 1) * dh;
                            let gi = g.slice(s![i, cols.clone()]);
                            let mut dalpha = vec![T::zero(); nb.len()];
                            let mut weighted = T::zero();
                            for (slot, &j) in nb.iter().enumerate() {
                                let w = a_i[slot * heads + k];
                                for c in cols.clone() {
                                    dh_mat[[j, c]] += w * g[[i, c]];
                                }
                                let da = gi.dot(&hv.slice(s![j, cols.clone()]));
                                dalpha[slot] = da;
                                weighted += w * da;
                            }
                            for (slot, &j) in nb.iter().enumerate() {
                                let w = a_i[slot * heads + k];
                                let de = w * (dalpha[slot] - weighted);
                                let z = z_i[slot * heads + k];
                                let dz = if z > T::zero() { de } else { de * cache.slope };
                                dsdst[[i, k]] += dz;
                                dssrc[[j, k]] += dz;
                            }
                        }
                    }
                    let mut dasrc = Array2::<T>::zeros((1, f));
                    let mut dadst = Array2::<T>::zeros((1, f));
                    for j in 0..m {
                        for k in 0..heads {
                            for c in k * dh..(k + 1) * dh {
                                dh_mat[[j, c]] += dssrc[[j, k]] * asrc[[0, c]] + dsdst[[j, k]] * adst[[0, c]];
                                dasrc[[0, c]] += dssrc[[j, k]] * hv[[j, c]];
                                dadst[[0, c]] += dsdst[[j, k]] * hv[[j, c]];
                            }
                        }
                    }
                    acc(&mut grads, cache.h, dh_mat);
                    acc(&mut grads, cache.a_src, dasrc);
                    acc(&mut grads, cache.a_dst, dadst);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let gs = g[[0, 0]];
                    let shape = entries[*logits].value.dim();
                    let mut d = probs.mapv(|p| p * gs);
                    d[*target] -= gs;
                    acc(&mut grads, *logits, d.into_shape_with_order(shape).expect("shape"));
                }
                Op::WeightedSum(terms) => {
                    let gs = g[[0, 0]];
                    for &(v, w) in terms {
                        acc(&mut grads, v, Array2::from_elem((1, 1), gs * w));
                    }
                }
            }
        }
        Grads { grads }
    }
}

/// Result of [`Tape::backward`]; only leaves keep their gradient.
pub struct Grads<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of a leaf, or `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` at every entry of `x`.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let eps = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.as_slice_mut().unwrap()[idx] += eps;
            m.as_slice_mut().unwrap()[idx] -= eps;
            g.as_slice_mut().unwrap()[idx] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    /// Builds a scalar from one input matrix through `build`, then compares
    /// tape gradients against central differences.
    fn check(x: Array2<f64>, build: impl Fn(&Tape<f64>, Var) -> Var) {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let root = build(&tape, xv);
        let grads = tape.backward(root);
        let analytic = grads.get(xv).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
        let numeric = numeric_grad(&x, |p| {
            let t = Tape::new();
            let v = t.leaf(p.clone());
            let r = build(&t, v);
            t.scalar(r)
        });
        assert_close(&analytic, &numeric, 1e-6);
    }

    fn sum_weighted(t: &Tape<f64>, v: Var) -> Var {
        // A fixed non-uniform reduction so every output entry matters.
        let (r, c) = t.shape(v);
        let w = Array2::from_shape_fn((c, 1), |(i, _)| 0.3 + 0.17 * i as f64);
        let wv = t.leaf(w);
        let col = t.matmul(v, wv);
        let u = Array2::from_shape_fn((1, r), |(_, i)| 1.0 - 0.21 * i as f64);
        let uv = t.leaf(u);
        t.matmul(uv, col)
    }

    fn input(r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37 + 0.1).sin() * 0.9)
    }

    #[test]
    fn elementwise_and_structural_ops() {
        check(input(3, 4), |t, x| {
            let y = t.relu(x);
            sum_weighted(t, y)
        });
        check(input(3, 4), |t, x| {
            let y = t.elu(x);
            sum_weighted(t, y)
        });
        check(input(3, 4), |t, x| {
            let y = t.softmax_rows(x);
            sum_weighted(t, y)
        });
        check(input(4, 3), |t, x| {
            let a = t.slice_rows(x, 1, 3);
            let b = t.slice_cols(x, 0, 2);
            let bt = t.matmul_t(a, a);
            let c = t.concat_cols(&[bt, a]);
            let d = t.concat_rows(&[b, b]);
            let e = t.scale(d, 0.5);
            let s1 = sum_weighted(t, c);
            let s2 = sum_weighted(t, e);
            t.weighted_sum(&[(s1, 1.0), (s2, -2.0)])
        });
        check(input(1, 3), |t, x| {
            let r = t.repeat_row(x, 4);
            let f = t.flatten_pad(r, 6);
            sum_weighted(t, f)
        });
    }

    #[test]
    fn layer_norm_and_affine() {
        let gamma = array![[1.2, 0.7, -0.4, 0.9]];
        let beta = array![[0.1, -0.2, 0.3, 0.0]];
        check(input(3, 4), |t, x| {
            let g = t.leaf(gamma.clone());
            let b = t.leaf(beta.clone());
            let y = t.layer_norm(x, g, b, 1e-5);
            sum_weighted(t, y)
        });
        // gradient w.r.t. gamma
        check(gamma.clone(), |t, g| {
            let x = t.leaf(input(3, 4));
            let b = t.leaf(beta.clone());
            let y = t.layer_norm(x, g, b, 1e-5);
            sum_weighted(t, y)
        });
        check(input(2, 3), |t, w| {
            let x = t.leaf(input(4, 2));
            let b = t.leaf(array![[0.5, -0.5, 0.25]]);
            let y = t.affine(x, w, b);
            sum_weighted(t, y)
        });
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        let t = Tape::<f64>::new();
        let l = t.leaf(Array2::zeros((1, 8)));
        let ce = t.cross_entropy(l, 3);
        assert!((t.scalar(ce) - 8f64.ln()).abs() < 1e-12);
        check(input(5, 1), |t, x| t.cross_entropy(x, 2));
        check(input(1, 6), |t, x| t.cross_entropy(x, 0));
    }

    #[test]
    fn graph_attention_gradients() {
        let neighbors = Arc::new(vec![vec![0, 1], vec![1, 0, 2], vec![2], vec![3, 2, 0]]);
        let a_src = Array2::from_shape_fn((1, 6), |(_, j)| 0.3 * (j as f64 - 2.5));
        let a_dst = Array2::from_shape_fn((1, 6), |(_, j)| 0.2 * ((j * j) as f64).cos());
        let nb = neighbors.clone();
        let (s, d) = (a_src.clone(), a_dst.clone());
        check(input(4, 6), move |t, h| {
            let a = t.leaf(s.clone());
            let b = t.leaf(d.clone());
            let y = t.graph_attention(h, a, b, 2, nb.clone(), 0.2);
            sum_weighted(t, y)
        });
        let nb = neighbors.clone();
        check(a_src.clone(), move |t, a| {
            let h = t.leaf(input(4, 6));
            let b = t.leaf(a_dst.clone());
            let y = t.graph_attention(h, a, b, 2, nb.clone(), 0.2);
            sum_weighted(t, y)
        });
        check(a_src, move |t, b| {
            let h = t.leaf(input(4, 6));
            let a = t.leaf(Array2::from_elem((1, 6), 0.1));
            let y = t.graph_attention(h, a, b, 3, neighbors.clone(), 0.2);
            sum_weighted(t, y)
        });
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let t = Tape::<f64>::new();
        let a = t.leaf(Array2::ones((1, 1)));
        let b = t.leaf(Array2::ones((1, 1)));
        let root = t.scale(a, 2.0);
        let g = t.backward(root);
        assert_eq!(g.get(a).unwrap()[[0, 0]], 2.0);
        assert!(g.get(b).is_none());
    }
}
