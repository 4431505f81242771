//! Reverse-mode autodiff over 2D f64 tensors.
//!
//! A `Tape` records every operation of one forward pass; `backward` walks the
//! record in reverse accumulating gradients. The op set is exactly what the
//! network needs — dense matmul, softmax rows, layer norm, GELU, shape
//! plumbing, pooling/upsampling between pixel and token grids, and a fused
//! weighted-BCE + soft-Dice loss. Every backward formula is locked down by
//! finite-difference tests.

use ndarray::{concatenate, s, Array2, Axis};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// C = A · B
    MatMul(usize, usize),
    /// C = A · Bᵀ
    MatMulNT(usize, usize),
    Add(usize, usize),
    /// Row vector broadcast over rows of A.
    AddRow(usize, usize),
    /// Elementwise multiply by a broadcast row vector.
    MulRow(usize, usize),
    Scale(usize, f64),
    SoftmaxRows(usize),
    /// Row-wise normalization (x − μ)/√(σ² + eps), no affine.
    LayerNormRows(usize, f64),
    Gelu(usize),
    ConcatRows(usize, usize),
    ConcatCols(usize, usize),
    /// Rows [lo, hi) of the input.
    SliceRows(usize, usize, usize),
    /// Columns [lo, hi) of the input.
    SliceCols(usize, usize, usize),
    /// Row-major reinterpretation to a new shape of equal length.
    Reshape(usize),
    /// Mean over non-overlapping f×f blocks.
    AvgPool(usize, usize),
    /// Bilinear upsample by an integer factor (half-pixel mapping).
    BilinearUp(usize, usize),
    Square(usize),
    /// Mean over all elements, giving a 1×1 scalar.
    MeanAll(usize),
    /// Scalar loss: mean weighted BCE-with-logits + (1 − soft Dice).
    DiceBce { logits: usize, target: Array2<f64>, pos_weight: f64, eps: f64 },
}

pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    grads: Vec<Array2<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + eˣ), overflow-safe.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044715;

impl Tape {
    pub fn new() -> Tape {
        Tape { values: Vec::new(), ops: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    /// Gradient of the last `backward` target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> &Array2<f64> {
        &self.grads[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.values[v.0].dim(), (1, 1));
        self.values[v.0][[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].dot(&self.values[b.0]);
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].dot(&self.values[b.0].t());
        self.push(value, Op::MatMulNT(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.values[a.0] + &self.values[b.0];
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.values[row.0].nrows(), 1);
        let value = &self.values[a.0] + &self.values[row.0].row(0);
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.values[row.0].nrows(), 1);
        let value = &self.values[a.0] * &self.values[row.0].row(0);
        self.push(value, Op::MulRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.values[a.0] * c;
        self.push(value, Op::Scale(a.0, c))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.values[a.0].clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(value, Op::SoftmaxRows(a.0))
    }

    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.values[a.0].clone();
        for mut row in value.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(value, Op::LayerNormRows(a.0, eps))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| {
            0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
        });
        self.push(value, Op::Gelu(a.0))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let value =
            concatenate(Axis(0), &[self.values[a.0].view(), self.values[b.0].view()]).unwrap();
        self.push(value, Op::ConcatRows(a.0, b.0))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value =
            concatenate(Axis(1), &[self.values[a.0].view(), self.values[b.0].view()]).unwrap();
        self.push(value, Op::ConcatCols(a.0, b.0))
    }

    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let value = self.values[a.0].slice(s![lo..hi, ..]).to_owned();
        self.push(value, Op::SliceRows(a.0, lo, hi))
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let value = self.values[a.0].slice(s![.., lo..hi]).to_owned();
        self.push(value, Op::SliceCols(a.0, lo, hi))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.values[a.0]
            .clone()
            .into_shape_with_order((rows, cols))
            .expect("reshape length must match");
        self.push(value, Op::Reshape(a.0))
    }

    pub fn avg_pool(&mut self, a: Var, factor: usize) -> Var {
        let (nr, nc) = self.values[a.0].dim();
        debug_assert!(nr % factor == 0 && nc % factor == 0);
        let (or, oc) = (nr / factor, nc / factor);
        let mut value = Array2::<f64>::zeros((or, oc));
        let norm = 1.0 / (factor * factor) as f64;
        for i in 0..or {
            for j in 0..oc {
                value[[i, j]] = self.values[a.0]
                    .slice(s![i * factor..(i + 1) * factor, j * factor..(j + 1) * factor])
                    .sum()
                    * norm;
            }
        }
        self.push(value, Op::AvgPool(a.0, factor))
    }

    /// Half-pixel bilinear interpolation weights for one output index.
    fn up_weights(i: usize, factor: usize, n: usize) -> (usize, usize, f64) {
        let src = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let w = src - lo as f64;
        (lo, hi, w)
    }

    pub fn bilinear_up(&mut self, a: Var, factor: usize) -> Var {
        let (nr, nc) = self.values[a.0].dim();
        let (or, oc) = (nr * factor, nc * factor);
        let mut value = Array2::<f64>::zeros((or, oc));
        for i in 0..or {
            let (r0, r1, wr) = Self::up_weights(i, factor, nr);
            for j in 0..oc {
                let (c0, c1, wc) = Self::up_weights(j, factor, nc);
                let src = &self.values[a.0];
                value[[i, j]] = src[[r0, c0]] * (1.0 - wr) * (1.0 - wc)
                    + src[[r0, c1]] * (1.0 - wr) * wc
                    + src[[r1, c0]] * wr * (1.0 - wc)
                    + src[[r1, c1]] * wr * wc;
            }
        }
        self.push(value, Op::BilinearUp(a.0, factor))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| x * x);
        self.push(value, Op::Square(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.values[a.0].mean().unwrap());
        self.push(value, Op::MeanAll(a.0))
    }

    /// Combined loss on a logit map: mean weighted BCE-with-logits plus
    /// (1 − soft Dice), equal weighting. `pos_weight` scales the positive-
    /// class BCE term; `eps` is the Dice smoothing constant.
    pub fn dice_bce(&mut self, logits: Var, target: &Array2<f64>, pos_weight: f64, eps: f64) -> Var {
        let l = &self.values[logits.0];
        debug_assert_eq!(l.dim(), target.dim());
        let n = l.len() as f64;
        let mut bce = 0.0;
        let mut sum_p = 0.0;
        let mut sum_pq = 0.0;
        let mut sum_q = 0.0;
        for (&x, &q) in l.iter().zip(target.iter()) {
            bce += pos_weight * q * softplus(-x) + (1.0 - q) * softplus(x);
            let p = sigmoid(x);
            sum_p += p;
            sum_pq += p * q;
            sum_q += q;
        }
        let dice = (2.0 * sum_pq + eps) / (sum_p + sum_q + eps);
        let value = Array2::from_elem((1, 1), bce / n + 1.0 - dice);
        self.push(value, Op::DiceBce { logits: logits.0, target: target.clone(), pos_weight, eps })
    }

    /// Accumulate gradients of scalar `loss` into every node; callable once
    /// per tape.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.values[loss.0].dim(), (1, 1), "backward target must be scalar");
        self.grads = self.values.iter().map(|v| Array2::zeros(v.dim())).collect();
        self.grads[loss.0][[0, 0]] = 1.0;
        for i in (0..self.ops.len()).rev() {
            let g = self.grads[i].clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.values[*b].t());
                    let db = self.values[*a].t().dot(&g);
                    self.grads[*a] += &da;
                    self.grads[*b] += &db;
                }
                Op::MatMulNT(a, b) => {
                    let da = g.dot(&self.values[*b]);
                    let db = g.t().dot(&self.values[*a]);
                    self.grads[*a] += &da;
                    self.grads[*b] += &db;
                }
                Op::Add(a, b) => {
                    self.grads[*a] += &g;
                    self.grads[*b] += &g;
                }
                Op::AddRow(a, r) => {
                    self.grads[*a] += &g;
                    let dr = g.sum_axis(Axis(0));
                    self.grads[*r] += &dr.insert_axis(Axis(0));
                }
                Op::MulRow(a, r) => {
                    let da = &g * &self.values[*r].row(0);
                    let dr = (&g * &self.values[*a]).sum_axis(Axis(0));
                    self.grads[*a] += &da;
                    self.grads[*r] += &dr.insert_axis(Axis(0));
                }
                Op::Scale(a, c) => {
                    self.grads[*a].scaled_add(*c, &g);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.values[i];
                    let mut da = Array2::<f64>::zeros(y.dim());
                    for (r, (y_row, g_row)) in y.rows().into_iter().zip(g.rows()).enumerate() {
                        let dot: f64 = y_row.iter().zip(g_row.iter()).map(|(&yv, &gv)| yv * gv).sum();
                        for (c, (&yv, &gv)) in y_row.iter().zip(g_row.iter()).enumerate() {
                            da[[r, c]] = yv * (gv - dot);
                        }
                    }
                    self.grads[*a] += &da;
                }
                Op::LayerNormRows(a, eps) => {
                    let x = &self.values[*a];
                    let y = &self.values[i];
                    let n = x.ncols() as f64;
                    let mut da = Array2::<f64>::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let row = x.row(r);
                        let mean = row.sum() / n;
                        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_row = g.row(r);
                        let y_row = y.row(r);
                        let mean_g = g_row.sum() / n;
                        let mean_gy: f64 =
                            g_row.iter().zip(y_row.iter()).map(|(&gv, &yv)| gv * yv).sum::<f64>() / n;
                        for c in 0..x.ncols() {
                            da[[r, c]] = inv * (g_row[c] - mean_g - y_row[c] * mean_gy);
                        }
                    }
                    self.grads[*a] += &da;
                }
                Op::Gelu(a) => {
                    let x = &self.values[*a];
                    let da = ndarray::Zip::from(x).and(&g).map_collect(|&xv, &gv| {
                        let u = GELU_C * (xv + GELU_A * xv * xv * xv);
                        let t = u.tanh();
                        let sech2 = 1.0 - t * t;
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * xv * xv);
                        gv * (0.5 * (1.0 + t) + 0.5 * xv * sech2 * du)
                    });
                    self.grads[*a] += &da;
                }
                Op::ConcatRows(a, b) => {
                    let na = self.values[*a].nrows();
                    let (ga, gb) = (g.slice(s![..na, ..]).to_owned(), g.slice(s![na.., ..]).to_owned());
                    self.grads[*a] += &ga;
                    self.grads[*b] += &gb;
                }
                Op::ConcatCols(a, b) => {
                    let na = self.values[*a].ncols();
                    let (ga, gb) = (g.slice(s![.., ..na]).to_owned(), g.slice(s![.., na..]).to_owned());
                    self.grads[*a] += &ga;
                    self.grads[*b] += &gb;
                }
                Op::SliceRows(a, lo, _hi) => {
                    let mut da = self.grads[*a].clone();
                    da.slice_mut(s![*lo..*lo + g.nrows(), ..]).scaled_add(1.0, &g);
                    self.grads[*a] = da;
                }
                Op::SliceCols(a, lo, _hi) => {
                    let mut da = self.grads[*a].clone();
                    da.slice_mut(s![.., *lo..*lo + g.ncols()]).scaled_add(1.0, &g);
                    self.grads[*a] = da;
                }
                Op::Reshape(a) => {
                    let shape = self.values[*a].dim();
                    let da = g.into_shape_with_order(shape).expect("reshape backward");
                    self.grads[*a] += &da;
                }
                Op::AvgPool(a, f) => {
                    let norm = 1.0 / (*f * *f) as f64;
                    let mut da = Array2::<f64>::zeros(self.values[*a].dim());
                    for i in 0..g.nrows() {
                        for j in 0..g.ncols() {
                            da.slice_mut(s![i * *f..(i + 1) * *f, j * *f..(j + 1) * *f])
                                .mapv_inplace(|_| g[[i, j]] * norm);
                        }
                    }
                    self.grads[*a] += &da;
                }
                Op::BilinearUp(a, f) => {
                    let (nr, nc) = self.values[*a].dim();
                    let mut da = Array2::<f64>::zeros((nr, nc));
                    for i in 0..g.nrows() {
                        let (r0, r1, wr) = Self::up_weights(i, *f, nr);
                        for j in 0..g.ncols() {
                            let (c0, c1, wc) = Self::up_weights(j, *f, nc);
                            let gv = g[[i, j]];
                            da[[r0, c0]] += gv * (1.0 - wr) * (1.0 - wc);
                            da[[r0, c1]] += gv * (1.0 - wr) * wc;
                            da[[r1, c0]] += gv * wr * (1.0 - wc);
                            da[[r1, c1]] += gv * wr * wc;
                        }
                    }
                    self.grads[*a] += &da;
                }
                Op::Square(a) => {
                    let da = 2.0 * &g * &self.values[*a];
                    self.grads[*a] += &da;
                }
                Op::MeanAll(a) => {
                    let n = self.values[*a].len() as f64;
                    let da = Array2::from_elem(self.values[*a].dim(), g[[0, 0]] / n);
                    self.grads[*a] += &da;
                }
                Op::DiceBce { logits, target, pos_weight, eps } => {
                    let l = &self.values[*logits];
                    let n = l.len() as f64;
                    let mut sum_p = 0.0;
                    let mut sum_pq = 0.0;
                    let mut sum_q = 0.0;
                    for (&x, &q) in l.iter().zip(target.iter()) {
                        let p = sigmoid(x);
                        sum_p += p;
                        sum_pq += p * q;
                        sum_q += q;
                    }
                    let denom = sum_p + sum_q + eps;
                    let num = 2.0 * sum_pq + eps;
                    let gs = g[[0, 0]];
                    let da = ndarray::Zip::from(l).and(target).map_collect(|&x, &q| {
                        let p = sigmoid(x);
                        let dbce = (-pos_weight * q * sigmoid(-x) + (1.0 - q) * p) / n;
                        // dDice/dp = (2q·denom − num) / denom²; loss has −Dice.
                        let ddice = (2.0 * q * denom - num) / (denom * denom);
                        gs * (dbce - ddice * p * (1.0 - p))
                    });
                    self.grads[*logits] += &da;
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Convenience: 1×n row from a slice.
pub fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap()
}

/// Convenience: column vector (n×1).
pub fn col(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
}
