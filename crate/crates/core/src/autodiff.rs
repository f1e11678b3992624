//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Leaves are either constants or parameters; only nodes that (transitively)
//! depend on a parameter take part in the backward sweep, so a frozen
//! backbone costs nothing beyond its forward pass.

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a (n×m) + b (1×m)` broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    /// Row-wise log-sum-exp over fixed column groups: `1×V -> 1×G`.
    GroupLogSumExp(Var, Vec<Vec<usize>>),
    /// `-log softmax(a)[label]` for a single-row `a`.
    Nll(Var, usize),
    SumSquares(Var),
    MeanRows(Var),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that is a parameter only when `trainable` is set.
    pub fn leaf(&mut self, value: Mat, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, cols) = self.shape(a);
        assert_eq!(self.shape(row), (1, cols), "add_row: bias shape mismatch");
        let v = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        let ng = self.ng(table);
        self.push(out, Op::Gather(table, ids.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape: element count mismatch");
        let data: Vec<f64> = src.iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), data).expect("reshape");
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        let ng = self.ng(a);
        self.push(v, Op::Gelu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (c, &v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let out = &xhat * g + b;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn group_logsumexp(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros((av.nrows(), groups.len()));
        for (r, row) in av.rows().into_iter().enumerate() {
            for (g, ids) in groups.iter().enumerate() {
                out[[r, g]] = logsumexp(ids.iter().map(|&i| row[i]));
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::GroupLogSumExp(a, groups.to_vec()), ng)
    }

    pub fn nll(&mut self, logits: Var, label: usize) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), 1, "nll: expects a single row");
        let lse = logsumexp(lv.row(0).iter().copied());
        let v = Mat::from_elem((1, 1), lse - lv[[0, label]]);
        let ng = self.ng(logits);
        self.push(v, Op::Nll(logits, label), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumSquares(a), ng)
    }

    /// Column-wise mean over rows: `n×m -> 1×m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows: empty")
            .insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(v, Op::MeanRows(a), ng)
    }

    /// Sum of `1×1` nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Backpropagate from the `1×1` node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward: output must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::from_elem((1, 1), 1.0));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, -g);
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*row) {
                    accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, k) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g * *k);
                }
            }
            Op::Gather(table, ids) => {
                if self.ng(*table) {
                    let mut gt = Mat::zeros(self.shape(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    accumulate(grads, *table, gt);
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p).0;
                    if self.ng(p) {
                        accumulate(grads, p, g.slice(s![start..start + n, ..]).to_owned());
                    }
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p).1;
                    if self.ng(p) {
                        accumulate(grads, p, g.slice(s![.., start..start + n]).to_owned());
                    }
                    start += n;
                }
            }
            Op::SliceRows(a, start) => {
                if self.ng(*a) {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                    accumulate(grads, *a, ga);
                }
            }
            Op::SliceCols(a, start) => {
                if self.ng(*a) {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    accumulate(grads, *a, ga);
                }
            }
            Op::Reshape(a) => {
                if self.ng(*a) {
                    let data: Vec<f64> = g.iter().copied().collect();
                    let ga = Mat::from_shape_vec(self.shape(*a), data).expect("reshape grad");
                    accumulate(grads, *a, ga);
                }
            }
            Op::Tanh(a) => {
                if self.ng(*a) {
                    let y = &node.value;
                    accumulate(grads, *a, g * &y.mapv(|t| 1.0 - t * t));
                }
            }
            Op::Gelu(a) => {
                if self.ng(*a) {
                    let d = self.value(*a).mapv(|x| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
                    });
                    accumulate(grads, *a, g * &d);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.ng(*a) {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.ncols() {
                            ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.ng(*gamma) {
                    accumulate(
                        grads,
                        *gamma,
                        (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                }
                if self.ng(*beta) {
                    accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let gam = self.value(*gamma);
                    let (rows, cols) = xhat.dim();
                    let n = cols as f64;
                    let mut gx = Mat::zeros((rows, cols));
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..cols {
                            let d = g[[r, c]] * gam[[0, c]];
                            sum_d += d;
                            sum_dx += d * xhat[[r, c]];
                        }
                        for c in 0..cols {
                            let d = g[[r, c]] * gam[[0, c]];
                            gx[[r, c]] = inv_std[r] / n * (n * d - sum_d - xhat[[r, c]] * sum_dx);
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::GroupLogSumExp(a, groups) => {
                if self.ng(*a) {
                    let av = self.value(*a);
                    let mut ga = Mat::zeros(av.dim());
                    for r in 0..av.nrows() {
                        for (gi, ids) in groups.iter().enumerate() {
                            let lse = node.value[[r, gi]];
                            for &i in ids {
                                ga[[r, i]] += g[[r, gi]] * (av[[r, i]] - lse).exp();
                            }
                        }
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::Nll(a, label) => {
                if self.ng(*a) {
                    let av = self.value(*a);
                    let lse = logsumexp(av.row(0).iter().copied());
                    let mut ga = av.mapv(|x| (x - lse).exp());
                    ga[[0, *label]] -= 1.0;
                    accumulate(grads, *a, ga * g[[0, 0]]);
                }
            }
            Op::SumSquares(a) => {
                if self.ng(*a) {
                    accumulate(grads, *a, self.value(*a) * (2.0 * g[[0, 0]]));
                }
            }
            Op::MeanRows(a) => {
                if self.ng(*a) {
                    let (rows, cols) = self.shape(*a);
                    let ga = Mat::from_shape_fn((rows, cols), |(_, c)| g[[0, c]] / rows as f64);
                    accumulate(grads, *a, ga);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Central differences of `f` around `x`, one coordinate at a time.
    fn numeric_grad(x: &Mat, f: &dyn Fn(&Mat) -> f64) -> Mat {
        let eps = 1e-5;
        let mut g = Mat::zeros(x.dim());
        let mut xp = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = xp[[r, c]];
            xp[[r, c]] = orig + eps;
            let fp = f(&xp);
            xp[[r, c]] = orig - eps;
            let fm = f(&xp);
            xp[[r, c]] = orig;
            g[[r, c]] = (fp - fm) / (2.0 * eps);
        }
        g
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / denom < tol, "analytic {x} vs numeric {y}");
        }
    }

    fn check_unary(build: impl Fn(&mut Tape, Var) -> Var, rows: usize, cols: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_mat(&mut rng, rows, cols);
        let w = random_mat(&mut rng, 4 * rows, 4 * cols);
        let eval = |x: &Mat| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let y = build(&mut t, xv);
            let wv = t.constant(w.slice(s![..t.shape(y).0, ..t.shape(y).1]).to_owned());
            let d = t.sub(y, wv);
            let out = t.sum_squares(d);
            (t, xv, out)
        };
        let (t, xv, out) = eval(&x);
        let analytic = t.backward(out).get_or_zeros(xv, x.dim());
        let numeric = numeric_grad(&x, &|x| {
            let (t, _, out) = eval(x);
            t.scalar(out)
        });
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn elementwise_and_softmax_grads() {
        check_unary(|t, x| t.tanh(x), 3, 4, 1);
        check_unary(|t, x| t.gelu(x), 3, 4, 2);
        check_unary(|t, x| t.softmax_rows(x), 3, 4, 3);
        check_unary(|t, x| t.scale(x, -2.5), 2, 2, 4);
        check_unary(|t, x| t.mean_rows(x), 4, 3, 5);
        check_unary(|t, x| t.reshape(x, 2, 6), 3, 4, 6);
    }

    #[test]
    fn structural_grads() {
        check_unary(|t, x| t.slice_rows(x, 1, 2), 4, 3, 7);
        check_unary(|t, x| t.slice_cols(x, 1, 2), 3, 4, 8);
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 1);
                t.concat_rows(&[x, a])
            },
            3,
            3,
            9,
        );
        check_unary(
            |t, x| {
                let a = t.slice_cols(x, 0, 2);
                t.concat_cols(&[a, x])
            },
            3,
            3,
            10,
        );
        check_unary(|t, x| t.gather(x, &[2, 0, 2]), 4, 3, 11);
    }

    #[test]
    fn layer_norm_grads_all_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_mat(&mut rng, 3, 5);
        let gamma = random_mat(&mut rng, 1, 5);
        let beta = random_mat(&mut rng, 1, 5);
        let target = random_mat(&mut rng, 3, 5);
        let f = |x: &Mat, g: &Mat, b: &Mat| {
            let mut t = Tape::new();
            let (xv, gv, bv) = (t.param(x.clone()), t.param(g.clone()), t.param(b.clone()));
            let y = t.layer_norm(xv, gv, bv);
            let tv = t.constant(target.clone());
            let d = t.sub(y, tv);
            let out = t.sum_squares(d);
            (t, [xv, gv, bv], out)
        };
        let (t, vars, out) = f(&x, &gamma, &beta);
        let grads = t.backward(out);
        let nx = numeric_grad(&x, &|x| {
            let (t, _, o) = f(x, &gamma, &beta);
            t.scalar(o)
        });
        let ng = numeric_grad(&gamma, &|g| {
            let (t, _, o) = f(&x, g, &beta);
            t.scalar(o)
        });
        let nb = numeric_grad(&beta, &|b| {
            let (t, _, o) = f(&x, &gamma, b);
            t.scalar(o)
        });
        assert_close(grads.get(vars[0]).unwrap(), &nx, 1e-6);
        assert_close(grads.get(vars[1]).unwrap(), &ng, 1e-6);
        assert_close(grads.get(vars[2]).unwrap(), &nb, 1e-6);
    }

    #[test]
    fn matmul_and_bias_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_mat(&mut rng, 3, 4);
        let b = random_mat(&mut rng, 5, 4);
        let bias = random_mat(&mut rng, 1, 5);
        let fixed_bt = random_mat(&mut rng, 4, 5);
        let f = |a: &Mat, b: &Mat, bias: &Mat| {
            let mut t = Tape::new();
            let (av, bv, cv) = (t.param(a.clone()), t.param(b.clone()), t.param(bias.clone()));
            let m = t.matmul_bt(av, bv);
            let m = t.add_row(m, cv);
            let bt = t.constant(fixed_bt.clone());
            let m2 = t.matmul(av, bt);
            let sum = t.add(m, m2);
            let out = t.sum_squares(sum);
            (t, [av, bv, cv], out)
        };
        let (t, vars, out) = f(&a, &b, &bias);
        let grads = t.backward(out);
        let na = numeric_grad(&a, &|a| {
            let (t, _, o) = f(a, &b, &bias);
            t.scalar(o)
        });
        let nb = numeric_grad(&b, &|b| {
            let (t, _, o) = f(&a, b, &bias);
            t.scalar(o)
        });
        let nc = numeric_grad(&bias, &|c| {
            let (t, _, o) = f(&a, &b, c);
            t.scalar(o)
        });
        assert_close(grads.get(vars[0]).unwrap(), &na, 1e-6);
        assert_close(grads.get(vars[1]).unwrap(), &nb, 1e-6);
        assert_close(grads.get(vars[2]).unwrap(), &nc, 1e-6);
    }

    #[test]
    fn nll_and_group_lse_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_mat(&mut rng, 1, 6);
        let groups = vec![vec![0, 3], vec![1, 4, 5]];
        let f = |x: &Mat| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let g = t.group_logsumexp(xv, &groups);
            let out = t.nll(g, 1);
            (t, xv, out)
        };
        let (t, xv, out) = f(&x);
        let analytic = t.backward(out).get_or_zeros(xv, x.dim());
        let numeric = numeric_grad(&x, &|x| {
            let (t, _, o) = f(x);
            t.scalar(o)
        });
        assert_close(&analytic, &numeric, 1e-6);
        // index 2 belongs to no group
        assert_eq!(analytic[[0, 2]], 0.0);
    }

    #[test]
    fn frozen_leaves_receive_no_gradient() {
        let mut t = Tape::new();
        let w = t.constant(Mat::eye(2));
        let x = t.param(Mat::ones((1, 2)));
        let y = t.matmul(x, w);
        let out = t.sum_squares(y);
        let g = t.backward(out);
        assert!(g.get(w).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn logsumexp_is_stable() {
        let v = logsumexp([1000.0, 1000.0].into_iter());
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
