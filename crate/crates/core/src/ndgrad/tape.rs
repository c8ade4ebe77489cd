//! Computation tape and reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and a record of
//! its inputs. Nodes are created in topological order, so [`Tape::backward`]
//! visits them once in reverse creation order.

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    Concat { a: Var, b: Var, axis: usize },
    Downsample2(Var),
    Upsample2(Var),
    BoxFilter { x: Var, k: usize },
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    L1 { a: Var, b: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Concat { .. } => "concat",
            Op::Downsample2(..) => "downsample2",
            Op::Upsample2(..) => "upsample2",
            Op::BoxFilter { .. } => "box_filter",
            Op::Mean(..) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::L1 { .. } => "l1_loss",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Single-threaded record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

/// Gradients of a scalar with respect to every tracked node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Bilinear x2 taps along one axis, half-pixel centers with edge clamping:
/// output `o` reads `(i0, w0), (i1, w1)`.
fn upsample_taps(n: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let j = o / 2;
            if o % 2 == 0 {
                (j.saturating_sub(1), 0.25, j, 0.75)
            } else {
                (j, 0.75, (j + 1).min(n - 1), 0.25)
            }
        })
        .collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every op fail with [`Error::NonFinite`] when it produces a NaN
    /// or infinity.
    pub fn with_finite_check(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    /// Tracked leaf, e.g. a model parameter.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push_raw(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.push_raw(value, op, tracked))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, op, &[a, b])
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        self.push(value, op, &[x])
    }

    /// Cross-correlation of `x [N,C,H,W]` with `w [F,C,k,k]` (odd `k`).
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4("conv2d")?;
        let (f, wc, kh, kw) = self.value(w).dims4("conv2d")?;
        if wc != c || kh != kw || kh % 2 == 0 || stride == 0 {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input {:?} incompatible with kernel {:?} (stride {stride})",
                    self.shape(x),
                    self.shape(w)
                ),
            ));
        }
        if h + 2 * padding < kh || wd + 2 * padding < kh {
            return Err(Error::shape("conv2d", format!("kernel {kh} larger than padded input {h}x{wd}")));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            f,
            k: kh,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (wd + 2 * padding - kh) / stride + 1,
        };
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data());
        let value = Tensor::new(vec![n, f, geom.oh, geom.ow], out)?;
        self.push(value, Op::Conv2d { x, w, geom }, &[x, w])
    }

    /// Adds `b[f]` to every element of channel `f` of a rank-4 tensor.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c, h, w) = self.value(x).dims4("add_bias")?;
        if self.shape(b) != [c] {
            return Err(Error::shape("add_bias", format!("bias {:?} for {c} channels", self.shape(b))));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        self.push(out, Op::AddBias { x, b }, &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map(x, Op::MulScalar(x, s), |v| v * s)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.mul_scalar(x, -1.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map(x, Op::LeakyRelu { x, slope }, |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = split_axis(self.shape(x), axis)?;
        let src = self.value(x);
        let mut out = src.clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| d[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (d[idx(k)] - m).exp();
                    d[idx(k)] = e;
                    sum += e;
                }
                for k in 0..len {
                    d[idx(k)] /= sum;
                }
            }
        }
        self.push(out, Op::Softmax { x, axis }, &[x])
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (outer, la, inner) = split_axis(&sa, axis)?;
        let compatible = sa.len() == sb.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?} on axis {axis}")));
        }
        let lb = sb[axis];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            data.extend_from_slice(&da[o * la * inner..(o + 1) * la * inner]);
            data.extend_from_slice(&db[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = sa;
        shape[axis] = la + lb;
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Concat { a, b, axis }, &[a, b])
    }

    /// 2x2 mean pooling of a rank-4 tensor.
    pub fn downsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("downsample2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("downsample2", format!("odd spatial size {h}x{w}")));
        }
        let (h2, w2) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * h2 * w2];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    let i = 2 * y * w + 2 * xx;
                    d[y * w2 + xx] = 0.25 * (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, h2, w2], out)?;
        self.push(value, Op::Downsample2(x), &[x])
    }

    /// Bilinear x2 upsampling of a rank-4 tensor.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("upsample2")?;
        let out = upsample2_raw(self.value(x).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        self.push(value, Op::Upsample2(x), &[x])
    }

    /// Mean over each `k x k` window, valid positions only.
    pub fn box_filter(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("box_filter")?;
        if k == 0 || k > h || k > w {
            return Err(Error::shape("box_filter", format!("window {k} on {h}x{w}")));
        }
        let (oh, ow) = (h - k + 1, w - k + 1);
        let src = self.value(x).data();
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; n * c * oh * ow];
        let mut rows = vec![0.0; oh * w];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            // vertical window sums, then horizontal
            rows.fill(0.0);
            for y in 0..oh {
                for dy in 0..k {
                    let r = &s[(y + dy) * w..(y + dy + 1) * w];
                    for (acc, v) in rows[y * w..(y + 1) * w].iter_mut().zip(r) {
                        *acc += v;
                    }
                }
            }
            let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                let r = &rows[y * w..(y + 1) * w];
                for xx in 0..ow {
                    d[y * ow + xx] = norm * r[xx..xx + k].iter().sum::<f64>();
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, Op::BoxFilter { x, k }, &[x])
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let s = &src[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(s) {
                    *d += v;
                }
            }
        }
        let mut new_shape = shape;
        new_shape[axis] = 1;
        let value = Tensor::new(new_shape, out)?;
        self.push(value, Op::SumAxis { x, axis }, &[x])
    }

    /// `mean(|a - b|)` as a rank-0 tensor.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1_loss")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).abs()).sum();
        let value = Tensor::scalar(s / ta.len() as f64);
        self.push(value, Op::L1 { a, b }, &[a, b])
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must hold one value, has shape {:?}", self.shape(output)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| self.value(v);
        let mut acc = |v: Var, t: Tensor| {
            if !self.tracked(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape");
        let gd = g.data();
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = conv::backward(
                    &geom,
                    val(x).data(),
                    val(w).data(),
                    gd,
                    self.tracked(x),
                    self.tracked(w),
                );
                if let Some(dx) = dx {
                    acc(x, like(x, dx));
                }
                if let Some(dw) = dw {
                    acc(w, like(w, dw));
                }
            }
            Op::AddBias { x, b } => {
                let c = self.shape(b)[0];
                let (_, _, h, w) = val(x).dims4("add_bias").expect("rank 4");
                let mut db = vec![0.0; c];
                for (i, chunk) in gd.chunks(h * w).enumerate() {
                    db[i % c] += chunk.iter().sum::<f64>();
                }
                acc(x, g.clone());
                acc(b, like(b, db));
            }
            Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, like(b, gd.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(a).data(), val(b).data());
                acc(a, like(a, gd.iter().zip(db).map(|(g, y)| g * y).collect()));
                acc(b, like(b, gd.iter().zip(da).map(|(g, x)| g * x).collect()));
            }
            Op::Div(a, b) => {
                let (da, db) = (val(a).data(), val(b).data());
                acc(a, like(a, gd.iter().zip(db).map(|(g, y)| g / y).collect()));
                acc(
                    b,
                    like(
                        b,
                        gd.iter()
                            .zip(da.iter().zip(db))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    ),
                );
            }
            Op::AddScalar(x) => acc(x, g.clone()),
            Op::MulScalar(x, s) => acc(x, like(x, gd.iter().map(|v| v * s).collect())),
            Op::LeakyRelu { x, slope } => {
                let dx = gd
                    .iter()
                    .zip(val(x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                    .collect();
                acc(x, like(x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                acc(x, like(x, dx));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(x), axis).expect("checked");
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| gd[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = y[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                acc(x, like(x, dx));
            }
            Op::Concat { a, b, axis } => {
                let (outer, la, inner) = split_axis(self.shape(a), axis).expect("checked");
                let lb = self.shape(b)[axis];
                let mut ga = Vec::with_capacity(outer * la * inner);
                let mut gb = Vec::with_capacity(outer * lb * inner);
                for o in 0..outer {
                    let base = o * (la + lb) * inner;
                    ga.extend_from_slice(&gd[base..base + la * inner]);
                    gb.extend_from_slice(&gd[base + la * inner..base + (la + lb) * inner]);
                }
                acc(a, like(a, ga));
                acc(b, like(b, gb));
            }
            Op::Downsample2(x) => {
                let (n, c, h, w) = val(x).dims4("downsample2").expect("rank 4");
                let (h2, w2) = (h / 2, w / 2);
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let s = &gd[p * h2 * w2..(p + 1) * h2 * w2];
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            let v = 0.25 * s[y * w2 + xx];
                            let i = 2 * y * w + 2 * xx;
                            d[i] = v;
                            d[i + 1] = v;
                            d[i + w] = v;
                            d[i + w + 1] = v;
                        }
                    }
                }
                acc(x, like(x, dx));
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = val(x).dims4("upsample2").expect("rank 4");
                acc(x, like(x, upsample2_adjoint(gd, n * c, h, w)));
            }
            Op::BoxFilter { x, k } => {
                let (n, c, h, w) = val(x).dims4("box_filter").expect("rank 4");
                let (oh, ow) = (h - k + 1, w - k + 1);
                let norm = 1.0 / (k * k) as f64;
                let mut dx = vec![0.0; n * c * h * w];
                let mut rows = vec![0.0; oh * w];
                for p in 0..n * c {
                    let s = &gd[p * oh * ow..(p + 1) * oh * ow];
                    rows.fill(0.0);
                    for y in 0..oh {
                        for xx in 0..ow {
                            let v = norm * s[y * ow + xx];
                            for r in &mut rows[y * w + xx..y * w + xx + k] {
                                *r += v;
                            }
                        }
                    }
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for dy in 0..k {
                            for (t, r) in d[(y + dy) * w..(y + dy + 1) * w].iter_mut().zip(&rows[y * w..(y + 1) * w]) {
                                *t += r;
                            }
                        }
                    }
                }
                acc(x, like(x, dx));
            }
            Op::Mean(x) => {
                let n = val(x).len();
                acc(x, Tensor::full(self.shape(x), gd[0] / n as f64));
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(x), axis).expect("checked");
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        dx[(o * len + k) * inner..(o * len + k + 1) * inner]
                            .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                acc(x, like(x, dx));
            }
            Op::L1 { a, b } => {
                let (da, db) = (val(a).data(), val(b).data());
                let s = gd[0] / da.len() as f64;
                let ga: Vec<f64> = da
                    .iter()
                    .zip(db)
                    .map(|(x, y)| {
                        if x > y {
                            s
                        } else if x < y {
                            -s
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(b, like(b, ga.iter().map(|v| -v).collect()));
                acc(a, like(a, ga));
            }
        }
    }
}

/// Bilinear x2 upsampling of `planes` contiguous `h x w` planes.
fn upsample2_raw(src: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (tx, ty) = (upsample_taps(w), upsample_taps(h));
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    let mut tmp = vec![0.0; h * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, &(i0, w0, i1, w1)) in tx.iter().enumerate() {
                tmp[y * ow + ox] = w0 * s[y * w + i0] + w1 * s[y * w + i1];
            }
        }
        let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(j0, w0, j1, w1)) in ty.iter().enumerate() {
            for ox in 0..ow {
                d[oy * ow + ox] = w0 * tmp[j0 * ow + ox] + w1 * tmp[j1 * ow + ox];
            }
        }
    }
    out
}

fn upsample2_adjoint(g: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (tx, ty) = (upsample_taps(w), upsample_taps(h));
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * h * w];
    let mut tmp = vec![0.0; h * ow];
    for p in 0..planes {
        let s = &g[p * oh * ow..(p + 1) * oh * ow];
        tmp.fill(0.0);
        for (oy, &(j0, w0, j1, w1)) in ty.iter().enumerate() {
            for ox in 0..ow {
                let v = s[oy * ow + ox];
                tmp[j0 * ow + ox] += w0 * v;
                tmp[j1 * ow + ox] += w1 * v;
            }
        }
        let d = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, &(i0, w0, i1, w1)) in tx.iter().enumerate() {
                let v = tmp[y * ow + ox];
                d[y * w + i0] += w0 * v;
                d[y * w + i1] += w1 * v;
            }
        }
    }
    out
}
