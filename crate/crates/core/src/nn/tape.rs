//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records every operation in evaluation order; `backward`
//! walks it in reverse and accumulates adjoints. Rows are batch entries,
//! columns are features.

use ndarray::{s, Array2, Axis, Zip};

pub type Var = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + row` with `row` broadcast over the rows of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Silu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Row sums, `n x m -> n x 1`.
    SumCols(Var),
    /// Mean of every entry, `-> 1 x 1`.
    Mean(Var),
    Min(Var, Var),
    Clamp(Var, f64, f64),
    LogSoftmax(Var),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

/// Adjoints indexed by [`Var`]; `None` where no gradient flowed.
#[derive(Debug)]
pub struct Grads(Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0[v].as_ref()
    }

    /// Gradient of `v`, zeros shaped like `like` when nothing flowed.
    pub fn get_or_zeros(&self, v: Var, like: &Array2<f64>) -> Array2<f64> {
        self.0[v]
            .clone()
            .unwrap_or_else(|| Array2::zeros(like.raw_dim()))
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

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v][[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a].dot(&self.values[b]);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a] + &self.values[b];
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a] - &self.values[b];
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a] * &self.values[b];
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.values[row].nrows(), 1, "add_row expects a 1 x n row");
        let v = &self.values[a] + &self.values[row];
        self.push(v, Op::AddRow(a, row))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = &self.values[a] * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = &self.values[a] + s;
        self.push(v, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(silu);
        self.push(v, Op::Silu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.values[p].view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.values[a].slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.values[a].sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.values[a].mean().expect("mean of non-empty array");
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.values[a].clone();
        Zip::from(&mut v)
            .and(&self.values[b])
            .for_each(|x, &y| *x = x.min(y));
        self.push(v, Op::Min(a, b))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.values[a].mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut v = self.values[a].clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmax(a))
    }

    /// Adjoints of every node with respect to the 1 x 1 node `out`.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.values[out].dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[out] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for node in (0..=out).rev() {
            let Some(g) = grads[node].take() else { continue };
            let x = |v: Var| &self.values[v];
            match &self.ops[node] {
                Op::Leaf => {
                    grads[node] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&x(*b).t()));
                    acc(&mut grads, *b, x(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * x(*b));
                    acc(&mut grads, *b, &g * x(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Sigmoid(a) => {
                    let y = &self.values[node];
                    let mut d = g.clone();
                    Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let y = &self.values[node];
                    let mut d = g.clone();
                    Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::Gelu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(x(*a)).for_each(|d, &v| *d *= gelu_grad(v));
                    acc(&mut grads, *a, d);
                }
                Op::Silu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(x(*a)).for_each(|d, &v| {
                        let s = sigmoid(v);
                        *d *= s * (1.0 + v * (1.0 - s));
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &self.values[node]),
                Op::Log(a) => acc(&mut grads, *a, &g / x(*a)),
                Op::Square(a) => acc(&mut grads, *a, &g * x(*a) * 2.0),
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.values[p].ncols();
                        acc(&mut grads, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut d = Array2::zeros(x(*a).raw_dim());
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::SumCols(a) => {
                    let d = g.broadcast(x(*a).raw_dim()).expect("column broadcast").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let n = x(*a).len() as f64;
                    acc(&mut grads, *a, Array2::from_elem(x(*a).raw_dim(), g[[0, 0]] / n));
                }
                Op::Min(a, b) => {
                    let (va, vb) = (x(*a), x(*b));
                    let mut da = g.clone();
                    let mut db = g.clone();
                    Zip::from(&mut da)
                        .and(&mut db)
                        .and(va)
                        .and(vb)
                        .for_each(|da, db, &p, &q| {
                            if p <= q {
                                *db = 0.0;
                            } else {
                                *da = 0.0;
                            }
                        });
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(x(*a)).for_each(|d, &v| {
                        if v < *lo || v > *hi {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let y = &self.values[node];
                    let mut d = g.clone();
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let total: f64 = drow.sum();
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|d, &y| *d -= y.exp() * total);
                    }
                    acc(&mut grads, *a, d);
                }
            }
        }
        Grads(grads)
    }
}
