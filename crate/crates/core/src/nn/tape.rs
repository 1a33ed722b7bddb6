//! A small reverse-mode autodiff tape over row-major `f64` matrices.
//!
//! Every network in the crate is expressed with these ops, so one code path serves
//! inference, training and finite-difference checks.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use ndarray::{s, Array2, Array3, Axis, Zip};

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse linear row combination: `out[i] = Σ w · in[src]` over `rows[i]`.
///
/// Gathers, neighbour pooling, joint adjacency mixing and temporal shifts all reduce to this.
#[derive(Debug, Clone, Default)]
pub struct RowMix {
    pub in_rows: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl RowMix {
    pub fn new(in_rows: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|(r, _)| *r < in_rows));
        Self { in_rows, rows }
    }

    /// Selects `indices` rows in order.
    pub fn gather(in_rows: usize, indices: &[usize]) -> Self {
        Self::new(in_rows, indices.iter().map(|&i| vec![(i, 1.0)]).collect())
    }

    /// Plain (non-recorded) application to a matrix.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.in_rows, "row mix input rows");
        let mut out = Array2::zeros((self.rows.len(), x.ncols()));
        for (i, entries) in self.rows.iter().enumerate() {
            let mut row = out.row_mut(i);
            for &(src, w) in entries {
                row.scaled_add(w, &x.row(src));
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.in_rows, g.ncols()));
        for (i, entries) in self.rows.iter().enumerate() {
            for &(src, w) in entries {
                out.row_mut(src).scaled_add(w, &g.row(i));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Array2<f64>>),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Huber(Var, f64),
    RowMix(Var, Arc<RowMix>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    GroupMax(Var, Arc<Array2<usize>>),
    LogSoftmax(Var),
    Sum(Var),
    Mixture {
        scores: Var,
        mean: Var,
        logvar: Var,
        noise: Arc<Array3<f64>>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients of a scalar with respect to every parameter leaf on a tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub by_param: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.by_param.len() < other.by_param.len() {
            self.by_param.resize(other.by_param.len(), None);
        }
        for (mine, theirs) in self.by_param.iter_mut().zip(&other.by_param) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m += t,
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.by_param.iter_mut().flatten() {
            g.mapv_inplace(|v| v * k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Records a computation and differentiates it.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + &r.row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn mul_const(&mut self, a: Var, c: Arc<Array2<f64>>) -> Var {
        let v = self.value(a) * &*c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Element-wise Huber penalty.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let v = self.value(a).mapv(|r| huber_scalar(r, delta));
        self.push(v, Op::Huber(a, delta))
    }

    pub fn row_mix(&mut self, a: Var, mix: Arc<RowMix>) -> Var {
        let v = mix.apply(self.value(a));
        self.push(v, Op::RowMix(a, mix))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape size mismatch");
        let flat: Vec<f64> = src.iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).unwrap();
        self.push(v, Op::Reshape(a))
    }

    /// Column-wise max over each group of rows. Groups must be non-empty.
    pub fn group_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let x = self.value(a);
        let cols = x.ncols();
        let mut out = Array2::from_elem((groups.len(), cols), f64::NEG_INFINITY);
        let mut arg = Array2::zeros((groups.len(), cols));
        for (g, members) in groups.iter().enumerate() {
            assert!(!members.is_empty(), "empty group");
            for &m in members {
                for c in 0..cols {
                    let val = x[[m, c]];
                    if val > out[[g, c]] {
                        out[[g, c]] = val;
                        arg[[g, c]] = m;
                    }
                }
            }
        }
        self.push(out, Op::GroupMax(a, Arc::new(arg)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Score-weighted sum of reparameterised Gaussian draws, one draw per row and mode:
    /// `out[v, d] = Σ_k scores[v, k] · (mean[k, d] + exp(logvar[k, d] / 2) · noise[v, k, d])`.
    pub fn mixture(&mut self, scores: Var, mean: Var, logvar: Var, noise: Arc<Array3<f64>>) -> Var {
        let v = mixture_forward(self.value(scores), self.value(mean), self.value(logvar), &noise);
        self.push(
            v,
            Op::Mixture {
                scores,
                mean,
                logvar,
                noise,
            },
        )
    }

    /// Hash of every piecewise branch taken while recording: rectifier signs, clamp and
    /// Huber regions, max-pool winners, row-mix structure and constant masks. Two evaluations with the
    /// same signature lie on the same smooth piece of the recorded function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.nodes.len().hash(&mut h);
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => self.value(*a).iter().for_each(|&x| (x > 0.0).hash(&mut h)),
                Op::Clamp(a, lo, hi) => self
                    .value(*a)
                    .iter()
                    .for_each(|&x| ((x < *lo) as u8 + 2 * (x > *hi) as u8).hash(&mut h)),
                Op::Huber(a, d) => self.value(*a).iter().for_each(|&x| (x.abs() <= *d).hash(&mut h)),
                Op::MulConst(_, c) => c.iter().for_each(|x| x.to_bits().hash(&mut h)),
                Op::GroupMax(_, arg) => arg.iter().for_each(|i| i.hash(&mut h)),
                Op::RowMix(_, mix) => {
                    for row in &mix.rows {
                        row.len().hash(&mut h);
                        row.iter().for_each(|(i, w)| (*i, w.to_bits()).hash(&mut h));
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Back-propagates from the scalar `loss` and returns per-parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients {
            by_param: vec![None; self.store.len()],
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut out.by_param[id.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::MulConst(a, c) => acc(&mut grads, *a, g * &**c),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|gv, &y| {
                        if y <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &y| *gv *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g * &node.value;
                    acc(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        if x < *lo || x > *hi {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Huber(a, delta) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &r| *gv *= huber_grad(r, *delta));
                    acc(&mut grads, *a, ga);
                }
                Op::RowMix(a, mix) => acc(&mut grads, *a, mix.apply_transpose(&g)),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let src = self.value(*a);
                    let mut ga = Array2::zeros(src.dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&mut grads, *a, Array2::from_shape_vec(dim, flat).unwrap());
                }
                Op::GroupMax(a, arg) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for ((gi, c), &src) in arg.indexed_iter() {
                        ga[[src, c]] += g[[gi, c]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    // d/dx log_softmax: g - softmax * rowsum(g)
                    let mut ga = g.clone();
                    for (mut row, (grow, yrow)) in ga
                        .rows_mut()
                        .into_iter()
                        .zip(g.rows().into_iter().zip(node.value.rows()))
                    {
                        let total: f64 = grow.sum();
                        for (o, &y) in row.iter_mut().zip(yrow.iter()) {
                            *o -= y.exp() * total;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    acc(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::Mixture {
                    scores,
                    mean,
                    logvar,
                    noise,
                } => {
                    let (gs, gm, gl) =
                        mixture_backward(&g, self.value(*scores), self.value(*mean), self.value(*logvar), noise);
                    acc(&mut grads, *scores, gs);
                    acc(&mut grads, *mean, gm);
                    acc(&mut grads, *logvar, gl);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn huber_scalar(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r / delta
    } else {
        a - 0.5 * delta
    }
}

#[inline]
fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r / delta
    } else {
        r.signum()
    }
}

pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(x).mapv(f64::exp)
}

pub fn mixture_forward(
    scores: &Array2<f64>,
    mean: &Array2<f64>,
    logvar: &Array2<f64>,
    noise: &Array3<f64>,
) -> Array2<f64> {
    let (rows, modes) = scores.dim();
    let dims = mean.ncols();
    assert_eq!(mean.nrows(), modes);
    assert_eq!(noise.dim(), (rows, modes, dims), "noise shape");
    let std = logvar.mapv(|l| (0.5 * l).exp());
    let mut out = Array2::zeros((rows, dims));
    for v in 0..rows {
        for k in 0..modes {
            let w = scores[[v, k]];
            if w == 0.0 {
                continue;
            }
            for d in 0..dims {
                out[[v, d]] += w * (mean[[k, d]] + std[[k, d]] * noise[[v, k, d]]);
            }
        }
    }
    out
}

fn mixture_backward(
    g: &Array2<f64>,
    scores: &Array2<f64>,
    mean: &Array2<f64>,
    logvar: &Array2<f64>,
    noise: &Array3<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (rows, modes) = scores.dim();
    let dims = mean.ncols();
    let std = logvar.mapv(|l| (0.5 * l).exp());
    let mut gs = Array2::zeros((rows, modes));
    let mut gm = Array2::zeros((modes, dims));
    let mut gl = Array2::zeros((modes, dims));
    for v in 0..rows {
        for k in 0..modes {
            let w = scores[[v, k]];
            let mut acc_s = 0.0;
            for d in 0..dims {
                let e = noise[[v, k, d]];
                let gv = g[[v, d]];
                acc_s += gv * (mean[[k, d]] + std[[k, d]] * e);
                gm[[k, d]] += gv * w;
                gl[[k, d]] += gv * w * e * std[[k, d]] * 0.5;
            }
            gs[[v, k]] = acc_s;
        }
    }
    (gs, gm, gl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn branch_signature_tracks_relu_pattern() {
        let mut store = ParamStore::default();
        let id = store.insert("w", array![[0.5, -0.2]]);
        let sig = |store: &ParamStore| {
            let mut t = Tape::new(store);
            let w = t.param(id);
            let r = t.relu(w);
            t.sum(r);
            t.branch_signature()
        };
        let base = sig(&store);
        store.value_mut(id)[[0, 0]] = 0.7;
        assert_eq!(sig(&store), base);
        store.value_mut(id)[[0, 1]] = 0.1;
        assert_ne!(sig(&store), base);
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central differences of `f` over every entry of parameter `id`.
    fn check<F>(store: &mut ParamStore, id: ParamId, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let analytic = {
            let mut t = Tape::new(store);
            let l = f(&mut t);
            t.backward(l).get(id).cloned().unwrap()
        };
        let eps = 1e-6;
        let shape = store.value(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = store.value(id)[[r, c]];
                store.value_mut(id)[[r, c]] = orig + eps;
                let lp = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.value_mut(id)[[r, c]] = orig - eps;
                let lm = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.value_mut(id)[[r, c]] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let a = analytic[[r, c]];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs()),
                    "entry ({r},{c}): analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let w = store.insert("w", random(&mut rng, 3, 4));
        let b = store.insert("b", random(&mut rng, 1, 4));
        let x = random(&mut rng, 5, 3);
        let c = Arc::new(random(&mut rng, 5, 4));
        let f = |t: &mut Tape| {
            let xi = t.input(x.clone());
            let wv = t.param(w);
            let bv = t.param(b);
            let h = t.matmul(xi, wv);
            let h = t.add_row(h, bv);
            let a = t.sigmoid(h);
            let e = t.exp(h);
            let m = t.mul(a, e);
            let m = t.mul_const(m, c.clone());
            let hb = t.huber(m, 0.3);
            let d = t.sub(hb, a);
            let s = t.scale(d, 0.7);
            t.sum(s)
        };
        check(&mut store, w, f);
        check(&mut store, b, f);
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::default();
        let w = store.insert("w", random(&mut rng, 6, 4));
        let mix = Arc::new(RowMix::new(
            6,
            vec![
                vec![(0, 0.5), (3, 0.5)],
                vec![(5, 1.0)],
                vec![(1, 2.0), (2, -1.0), (4, 0.3)],
            ],
        ));
        let f = |t: &mut Tape| {
            let wv = t.param(w);
            let m = t.row_mix(wv, mix.clone());
            let a = t.slice_cols(wv, 1, 3);
            let r = t.reshape(a, 3, 4);
            let cat = t.concat_cols(&[m, r]);
            let gm = t.group_max(cat, &[vec![0, 1], vec![2], vec![0, 1, 2]]);
            let ls = t.log_softmax(gm);
            let cl = t.clamp(ls, -2.0, 0.0);
            t.sum(cl)
        };
        check(&mut store, w, f);
    }

    #[test]
    fn mixture_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        let s = store.insert("s", random(&mut rng, 4, 5));
        let mu = store.insert("mu", random(&mut rng, 5, 3));
        let lv = store.insert("lv", random(&mut rng, 5, 3));
        let noise = Arc::new(Array3::from_shape_fn((4, 5, 3), |_| rng.random_range(-2.0..2.0)));
        let target = random(&mut rng, 4, 3);
        let f = |t: &mut Tape| {
            let sv = t.param(s);
            let sv = t.sigmoid(sv);
            let m = t.param(mu);
            let l = t.param(lv);
            let y = t.mixture(sv, m, l, noise.clone());
            let tgt = t.input(target.clone());
            let d = t.sub(y, tgt);
            let h = t.huber(d, 1.0);
            t.sum(h)
        };
        check(&mut store, s, f);
        check(&mut store, mu, f);
        check(&mut store, lv, f);
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let p = softmax_rows(&x);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((p[[1, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parameter_used_twice_accumulates() {
        let mut store = ParamStore::default();
        let w = store.insert("w", array![[2.0]]);
        let mut t = Tape::new(&store);
        let a = t.param(w);
        let b = t.param(w);
        let m = t.mul(a, b);
        let l = t.sum(m);
        let g = t.backward(l);
        assert_eq!(g.get(w).unwrap()[[0, 0]], 4.0);
    }
}
