use super::{Scalar, Tensor, LEAKY_SLOPE};
use crate::{Error, Result};

/// Variance epsilon for batch normalization.
pub const BN_EPSILON: f64 = 1e-5;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

const KERNEL: usize = 4;
const TAPS: usize = KERNEL * KERNEL;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Statistics source for [`Graph::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize with the moments of the current batch.
    Train,
    /// Normalize with fixed running moments.
    Eval { mean: &'a [T], var: &'a [T] },
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gain: Var,
        shift: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LeakyRelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Reshape(Var),
    ConcatChannels(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    PairDiff(Var),
    CosineTravel {
        real: Var,
        gen: Var,
        l2_weight: T,
    },
    Margin {
        input: Var,
        margin: T,
    },
    NegLogLikelihood {
        input: Var,
        positive: bool,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already a topological order for the backward sweep.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`; zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn conv_out_extent(extent: usize) -> usize {
    extent / 2
}

/// Unfolds 4x4 stride-2 pad-1 patches: result is `(c*16, n*ho*wo)`.
fn im2col<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (conv_out_extent(h), conv_out_extent(w));
    let p = ho * wo;
    let cols_n = n * p;
    let mut cols = vec![T::zero(); c * TAPS * cols_n];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * TAPS + ky * KERNEL + kx) * cols_n;
                for ni in 0..n {
                    let plane = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    let base = row + ni * p;
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut cols[base + oy * wo..base + (oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back into an image batch.
fn col2im<T: Scalar>(cols: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (conv_out_extent(h), conv_out_extent(w));
    let p = ho * wo;
    let cols_n = n * p;
    let mut x = vec![T::zero(); n * c * h * w];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * TAPS + ky * KERNEL + kx) * cols_n;
                for ni in 0..n {
                    let plane_off = (ni * c + ci) * h * w;
                    let base = row + ni * p;
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_off = plane_off + iy as usize * w;
                        let src = &cols[base + oy * wo..base + (oy + 1) * wo];
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                x[dst_off + ix as usize] = x[dst_off + ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(n, f, p)` -> `(f, n*p)`.
fn batch_to_channel_major<T: Scalar>(x: &[T], n: usize, f: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for fi in 0..f {
            out[fi * n * p + ni * p..fi * n * p + (ni + 1) * p]
                .copy_from_slice(&x[(ni * f + fi) * p..(ni * f + fi + 1) * p]);
        }
    }
    out
}

/// `(f, n*p)` -> `(n, f, p)`.
fn channel_to_batch_major<T: Scalar>(x: &[T], n: usize, f: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for fi in 0..f {
            out[(ni * f + fi) * p..(ni * f + fi + 1) * p]
                .copy_from_slice(&x[fi * n * p + ni * p..fi * n * p + (ni + 1) * p]);
        }
    }
    out
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, f: usize, p: usize) {
    for ni in 0..n {
        for (fi, &b) in bias.iter().enumerate().take(f) {
            for v in &mut out[(ni * f + fi) * p..(ni * f + fi + 1) * p] {
                *v = *v + b;
            }
        }
    }
}

fn channel_sums<T: Scalar>(g: &[T], n: usize, f: usize, p: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); f];
    for ni in 0..n {
        for (fi, s) in sums.iter_mut().enumerate() {
            *s = *s
                + g[(ni * f + fi) * p..(ni * f + fi + 1) * p]
                    .iter()
                    .copied()
                    .sum();
        }
    }
    sums
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn dims4(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(op, shape, &[0, 0, 0, 0])),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Stride-2 4x4 convolution with padding 1; kernel is `(out, in, 4, 4)`.
    pub fn conv2d_s2(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input), "conv2d_s2")?;
        let (f, kc, kh, kw) = dims4(self.shape(kernel), "conv2d_s2 kernel")?;
        if kc != c || kh != KERNEL || kw != KERNEL {
            return Err(Error::shape(
                "conv2d_s2",
                self.shape(input),
                self.shape(kernel),
            ));
        }
        if h < 4 || w < 4 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!(
                "conv2d_s2 needs even spatial extents >= 4, got {h}x{w}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::shape("conv2d_s2 bias", self.shape(b), &[f]));
            }
        }
        let (ho, wo) = (h / 2, w / 2);
        let p = ho * wo;
        let cols = im2col(self.value(input).data(), n, c, h, w);
        let mut out_cm = vec![T::zero(); f * n * p];
        T::gemm(
            f,
            c * TAPS,
            n * p,
            self.value(kernel).data(),
            false,
            &cols,
            false,
            T::zero(),
            &mut out_cm,
        );
        let mut out = channel_to_batch_major(&out_cm, n, f, p);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), n, f, p);
        }
        let rg = self.rg(&[input, kernel]) || bias.is_some_and(|b| self.rg(&[b]));
        let value = Tensor::new(vec![n, f, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            rg,
        ))
    }

    /// Stride-2 4x4 transposed convolution; kernel is `(in, out, 4, 4)`, the
    /// same layout as the forward convolution it is the adjoint of.
    pub fn conv_transpose2d_s2(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input), "conv_transpose2d_s2")?;
        let (kc, f, kh, kw) = dims4(self.shape(kernel), "conv_transpose2d_s2 kernel")?;
        if kc != c || kh != KERNEL || kw != KERNEL {
            return Err(Error::shape(
                "conv_transpose2d_s2",
                self.shape(input),
                self.shape(kernel),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::shape(
                    "conv_transpose2d_s2 bias",
                    self.shape(b),
                    &[f],
                ));
            }
        }
        let (ho, wo) = (2 * h, 2 * w);
        let p = h * w;
        let x_cm = batch_to_channel_major(self.value(input).data(), n, c, p);
        let mut cols = vec![T::zero(); f * TAPS * n * p];
        T::gemm(
            f * TAPS,
            c,
            n * p,
            self.value(kernel).data(),
            true,
            &x_cm,
            false,
            T::zero(),
            &mut cols,
        );
        let mut out = col2im(&cols, n, f, ho, wo);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), n, f, ho * wo);
        }
        let rg = self.rg(&[input, kernel]) || bias.is_some_and(|b| self.rg(&[b]));
        let value = Tensor::new(vec![n, f, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
            },
            rg,
        ))
    }

    /// Per-channel normalization over the batch and trailing axes of an
    /// `(N, C, ...)` tensor. In train mode the batch mean and (biased)
    /// variance are also returned so callers can update running statistics.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gain: Var,
        shift: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", &shape, &[0, 0]));
        }
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        if self.shape(gain) != [c] || self.shape(shift) != [c] {
            return Err(Error::shape("batch_norm gain", self.shape(gain), &[c]));
        }
        let eps = T::of(BN_EPSILON);
        let count = T::of((n * spatial) as f64);
        let x = self.value(input).data();
        let (mean, var, batch_stats) = match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ci in 0..c {
                    let mut s = T::zero();
                    for ni in 0..n {
                        let off = (ni * c + ci) * spatial;
                        s = s + x[off..off + spatial].iter().copied().sum::<T>();
                    }
                    let m = s / count;
                    let mut ss = T::zero();
                    for ni in 0..n {
                        let off = (ni * c + ci) * spatial;
                        ss = ss
                            + x[off..off + spatial]
                                .iter()
                                .map(|&v| (v - m) * (v - m))
                                .sum::<T>();
                    }
                    mean[ci] = m;
                    var[ci] = ss / count;
                }
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm running stats",
                        &[mean.len()],
                        &[c],
                    ));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gain).data();
        let b = self.value(shift).data();
        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * spatial;
                for i in off..off + spatial {
                    let xh = (x[i] - mean[ci]) * inv_std[ci];
                    normalized[i] = xh;
                    out[i] = g[ci] * xh + b[ci];
                }
            }
        }
        let rg = self.rg(&[input, gain, shift]);
        let value = Tensor::new(shape, out)?;
        let var_out = self.push(
            value,
            Op::BatchNorm {
                input,
                gain,
                shift,
                normalized,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((var_out, batch_stats.then_some((mean, var))))
    }

    fn unary(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(input).map(f);
        let rg = self.rg(&[input]);
        self.push(value, op, rg)
    }

    pub fn leaky_relu(&mut self, input: Var) -> Var {
        let leak = T::of(LEAKY_SLOPE);
        self.unary(input, Op::LeakyRelu(input), |v| {
            if v >= T::zero() {
                v
            } else {
                leak * v
            }
        })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, Op::Tanh(input), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Op::Sigmoid(input), sigmoid)
    }

    /// Affine map of `(N, in)` rows with a `(in, out)` weight.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, k) = match *self.shape(input) {
            [n, k] => (n, k),
            _ => return Err(Error::shape("dense", self.shape(input), self.shape(weight))),
        };
        let m = match *self.shape(weight) {
            [wk, m] if wk == k => m,
            _ => return Err(Error::shape("dense", self.shape(input), self.shape(weight))),
        };
        let mut out = vec![T::zero(); n * m];
        T::gemm(
            n,
            k,
            m,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            false,
            T::zero(),
            &mut out,
        );
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(Error::shape("dense bias", self.shape(b), &[m]));
            }
            let bias = self.value(b).data();
            for row in out.chunks_mut(m) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o = *o + bv;
                }
            }
        }
        let rg = self.rg(&[input, weight]) || bias.is_some_and(|b| self.rg(&[b]));
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    /// `(N, C, ...)` -> `(N, C * ...)`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input);
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(input, vec![n, rest])
    }

    /// Concatenates two `(N, C, H, W)` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = dims4(self.shape(a), "concat_channels")?;
        let (nb, cb, hb, wb) = dims4(self.shape(b), "concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                self.shape(a),
                self.shape(b),
            ));
        }
        let p = h * w;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * p);
        for ni in 0..n {
            out.extend_from_slice(&xa[ni * ca * p..(ni + 1) * ca * p]);
            out.extend_from_slice(&xb[ni * cb * p..(ni + 1) * cb * p]);
        }
        let rg = self.rg(&[a, b]);
        let value = Tensor::new(vec![n, ca + cb, h, w], out)?;
        Ok(self.push(value, Op::ConcatChannels(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let factor = T::of(factor);
        self.unary(input, Op::Scale(input, factor), |v| v * factor)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len() as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// `(B, L)` -> `(B, B, L)` with entry `[i][j] = x[j] - x[i]`.
    pub fn pair_diff(&mut self, input: Var) -> Result<Var> {
        let (b, l) = match *self.shape(input) {
            [b, l] => (b, l),
            _ => return Err(Error::shape("pair_diff", self.shape(input), &[0, 0])),
        };
        let x = self.value(input).data();
        let mut out = vec![T::zero(); b * b * l];
        for i in 0..b {
            for j in 0..b {
                if i == j {
                    continue;
                }
                let dst = &mut out[(i * b + j) * l..(i * b + j + 1) * l];
                for (k, d) in dst.iter_mut().enumerate() {
                    *d = x[j * l + k] - x[i * l + k];
                }
            }
        }
        let rg = self.rg(&[input]);
        let value = Tensor::new(vec![b, b, l], out)?;
        Ok(self.push(value, Op::PairDiff(input), rg))
    }

    /// Mean over ordered pairs `i != j` of the cosine distance between
    /// `real[i][j]` and `gen[i][j]`, plus `l2_weight * |real - gen|^2 / L`.
    pub fn cosine_travel(&mut self, real: Var, gen: Var, l2_weight: f64) -> Result<Var> {
        let (b, l) = match *self.shape(real) {
            [b, b2, l] if b == b2 => (b, l),
            _ => {
                return Err(Error::shape(
                    "cosine_travel",
                    self.shape(real),
                    self.shape(gen),
                ))
            }
        };
        if self.shape(real) != self.shape(gen) {
            return Err(Error::shape(
                "cosine_travel",
                self.shape(real),
                self.shape(gen),
            ));
        }
        let l2w = T::of(l2_weight);
        let mut total = T::zero();
        if b >= 2 {
            let (xr, xg) = (self.value(real).data(), self.value(gen).data());
            let eps = T::of(COSINE_EPSILON);
            let ll = T::of(l as f64);
            for i in 0..b {
                for j in 0..b {
                    if i == j {
                        continue;
                    }
                    let off = (i * b + j) * l;
                    let (u, v) = (&xr[off..off + l], &xg[off..off + l]);
                    let pd = PairDot::new(u, v, eps);
                    let mut term = T::one() - pd.dot / pd.den;
                    if l2w > T::zero() {
                        let sq: T = u.iter().zip(v).map(|(&a, &c)| (a - c) * (a - c)).sum();
                        term = term + l2w * sq / ll;
                    }
                    total = total + term;
                }
            }
            total = total / T::of((b * (b - 1)) as f64);
        } else {
            log::warn!("transformation-vector loss needs at least two samples; returning 0");
        }
        let rg = self.rg(&[real, gen]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CosineTravel {
                real,
                gen,
                l2_weight: l2w,
            },
            rg,
        ))
    }

    /// Mean over ordered pairs of `max(0, margin - |x[i][j]|)` for a `(B, B, L)` input.
    pub fn margin_hinge(&mut self, input: Var, margin: f64) -> Result<Var> {
        let (b, l) = match *self.shape(input) {
            [b, b2, l] if b == b2 => (b, l),
            _ => return Err(Error::shape("margin_hinge", self.shape(input), &[0, 0, 0])),
        };
        let margin = T::of(margin);
        let mut total = T::zero();
        if b >= 2 {
            let x = self.value(input).data();
            for i in 0..b {
                for j in 0..b {
                    if i == j {
                        continue;
                    }
                    let off = (i * b + j) * l;
                    let norm = x[off..off + l].iter().map(|&v| v * v).sum::<T>().sqrt();
                    if margin > norm {
                        total = total + (margin - norm);
                    }
                }
            }
            total = total / T::of((b * (b - 1)) as f64);
        } else {
            log::warn!("margin loss needs at least two samples; returning 0");
        }
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::scalar(total), Op::Margin { input, margin }, rg))
    }

    /// `-mean(log p)` when `positive`, otherwise `-mean(log(1 - p))`, with
    /// probabilities clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn neg_log_likelihood(&mut self, input: Var, positive: bool) -> Var {
        let (lo, hi) = (T::of(PROB_CLAMP), T::one() - T::of(PROB_CLAMP));
        let x = self.value(input).data();
        let n = T::of(x.len() as f64);
        let total: T = x
            .iter()
            .map(|&p| {
                let p = p.max(lo).min(hi);
                if positive {
                    -p.ln()
                } else {
                    -(T::one() - p).ln()
                }
            })
            .sum();
        let rg = self.rg(&[input]);
        self.push(
            Tensor::scalar(total / n),
            Op::NegLogLikelihood { input, positive },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_shape, T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, delta: Vec<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                    *e = *e + d;
                }
            }
            slot @ None => {
                let shape = self.nodes[var.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
            }
        }
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let [n, c, h, w] = self.shape(*input).try_into().expect("4-d");
                let f = self.shape(*kernel)[0];
                let p = (h / 2) * (w / 2);
                let g_cm = batch_to_channel_major(gd, n, f, p);
                let k = c * TAPS;
                if self.requires_grad(*kernel) {
                    let cols = im2col(self.value(*input).data(), n, c, h, w);
                    let mut dk = vec![T::zero(); f * k];
                    T::gemm(f, n * p, k, &g_cm, false, &cols, true, T::zero(), &mut dk);
                    self.accumulate(grads, *kernel, dk);
                }
                if self.requires_grad(*input) {
                    let mut dcols = vec![T::zero(); k * n * p];
                    T::gemm(
                        k,
                        f,
                        n * p,
                        self.value(*kernel).data(),
                        true,
                        &g_cm,
                        false,
                        T::zero(),
                        &mut dcols,
                    );
                    self.accumulate(grads, *input, col2im(&dcols, n, c, h, w));
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, channel_sums(gd, n, f, p));
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
            } => {
                let [n, c, h, w] = self.shape(*input).try_into().expect("4-d");
                let f = self.shape(*kernel)[1];
                let (ho, wo) = (2 * h, 2 * w);
                let p = h * w;
                let gcols = im2col(gd, n, f, ho, wo);
                if self.requires_grad(*kernel) {
                    let x_cm = batch_to_channel_major(self.value(*input).data(), n, c, p);
                    let mut dk = vec![T::zero(); c * f * TAPS];
                    T::gemm(
                        c,
                        n * p,
                        f * TAPS,
                        &x_cm,
                        false,
                        &gcols,
                        true,
                        T::zero(),
                        &mut dk,
                    );
                    self.accumulate(grads, *kernel, dk);
                }
                if self.requires_grad(*input) {
                    let mut dx_cm = vec![T::zero(); c * n * p];
                    T::gemm(
                        c,
                        f * TAPS,
                        n * p,
                        self.value(*kernel).data(),
                        false,
                        &gcols,
                        false,
                        T::zero(),
                        &mut dx_cm,
                    );
                    self.accumulate(grads, *input, channel_to_batch_major(&dx_cm, n, c, p));
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, channel_sums(gd, n, f, ho * wo));
                }
            }
            Op::BatchNorm {
                input,
                gain,
                shift,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let shape = self.shape(*input);
                let (n, c) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let count = T::of((n * spatial) as f64);
                let gain_v = self.value(*gain).data();
                let mut dgain = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * spatial;
                        for i in off..off + spatial {
                            dgain[ci] = dgain[ci] + gd[i] * normalized[i];
                            dshift[ci] = dshift[ci] + gd[i];
                        }
                    }
                }
                if self.requires_grad(*input) {
                    let mut dx = vec![T::zero(); gd.len()];
                    for ci in 0..c {
                        let scale = gain_v[ci] * inv_std[ci];
                        // sums of dy and dy * xhat over the channel are dshift and dgain
                        let (sum_dy, sum_dy_xhat) = (dshift[ci], dgain[ci]);
                        for ni in 0..n {
                            let off = (ni * c + ci) * spatial;
                            for i in off..off + spatial {
                                dx[i] = if *batch_stats {
                                    scale
                                        * (gd[i]
                                            - sum_dy / count
                                            - normalized[i] * sum_dy_xhat / count)
                                } else {
                                    scale * gd[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *input, dx);
                }
                self.accumulate(grads, *gain, dgain);
                self.accumulate(grads, *shift, dshift);
            }
            Op::LeakyRelu(input) => {
                let leak = T::of(LEAKY_SLOPE);
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v >= T::zero() { gv } else { leak * gv })
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Tanh(input) => {
                let y = node.value.data();
                let dx = y
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| gv * (T::one() - v * v))
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Sigmoid(input) => {
                let y = node.value.data();
                let dx = y
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| gv * v * (T::one() - v))
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let [n, k] = self.shape(*input).try_into().expect("2-d");
                let m = self.shape(*weight)[1];
                if self.requires_grad(*input) {
                    let mut dx = vec![T::zero(); n * k];
                    let w = self.value(*weight).data();
                    T::gemm(n, m, k, gd, false, w, true, T::zero(), &mut dx);
                    self.accumulate(grads, *input, dx);
                }
                if self.requires_grad(*weight) {
                    let mut dw = vec![T::zero(); k * m];
                    let x = self.value(*input).data();
                    T::gemm(k, n, m, x, true, gd, false, T::zero(), &mut dw);
                    self.accumulate(grads, *weight, dw);
                }
                if let Some(b) = bias {
                    let mut db = vec![T::zero(); m];
                    for row in gd.chunks(m) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d = *d + gv;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Reshape(input) => self.accumulate(grads, *input, gd.to_vec()),
            Op::ConcatChannels(a, b) => {
                let [n, ca, h, w] = self.shape(*a).try_into().expect("4-d");
                let cb = self.shape(*b)[1];
                let p = h * w;
                let mut da = Vec::with_capacity(n * ca * p);
                let mut db = Vec::with_capacity(n * cb * p);
                for ni in 0..n {
                    let off = ni * (ca + cb) * p;
                    da.extend_from_slice(&gd[off..off + ca * p]);
                    db.extend_from_slice(&gd[off + ca * p..off + (ca + cb) * p]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(xb).map(|(&gv, &v)| gv * v).collect();
                let db = gd.iter().zip(xa).map(|(&gv, &v)| gv * v).collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(input, factor) => {
                let dx = gd.iter().map(|&gv| gv * *factor).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Sum(input) => {
                let len = self.value(*input).len();
                self.accumulate(grads, *input, vec![gd[0]; len]);
            }
            Op::PairDiff(input) => {
                let [b, l] = self.shape(*input).try_into().expect("2-d");
                let mut dx = vec![T::zero(); b * l];
                for i in 0..b {
                    for j in 0..b {
                        if i == j {
                            continue;
                        }
                        let off = (i * b + j) * l;
                        for k in 0..l {
                            dx[j * l + k] = dx[j * l + k] + gd[off + k];
                            dx[i * l + k] = dx[i * l + k] - gd[off + k];
                        }
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::CosineTravel {
                real,
                gen,
                l2_weight,
            } => {
                let [b, _, l] = self.shape(*real).try_into().expect("3-d");
                if b < 2 {
                    return;
                }
                let (xr, xg) = (self.value(*real).data(), self.value(*gen).data());
                let upstream = gd[0] / T::of((b * (b - 1)) as f64);
                let eps = T::of(COSINE_EPSILON);
                let l2 = *l2_weight * T::of(2.0 / l as f64);
                let mut dr = vec![T::zero(); xr.len()];
                let mut dg = vec![T::zero(); xg.len()];
                for i in 0..b {
                    for j in 0..b {
                        if i == j {
                            continue;
                        }
                        let off = (i * b + j) * l;
                        let (u, v) = (&xr[off..off + l], &xg[off..off + l]);
                        let pd = PairDot::new(u, v, eps);
                        let den2 = pd.den * pd.den;
                        // d(1 - cos)/du = -(v/den - dot * |v| * u / (|u| den^2))
                        let cu = if !pd.floored && pd.nu > T::zero() {
                            pd.dot * pd.nv / (pd.nu * den2)
                        } else {
                            T::zero()
                        };
                        let cv = if !pd.floored && pd.nv > T::zero() {
                            pd.dot * pd.nu / (pd.nv * den2)
                        } else {
                            T::zero()
                        };
                        for k in 0..l {
                            let diff = u[k] - v[k];
                            dr[off + k] = upstream * (-(v[k] / pd.den) + cu * u[k] + l2 * diff);
                            dg[off + k] = upstream * (-(u[k] / pd.den) + cv * v[k] - l2 * diff);
                        }
                    }
                }
                self.accumulate(grads, *real, dr);
                self.accumulate(grads, *gen, dg);
            }
            Op::Margin { input, margin } => {
                let [b, _, l] = self.shape(*input).try_into().expect("3-d");
                if b < 2 {
                    return;
                }
                let x = self.value(*input).data();
                let upstream = gd[0] / T::of((b * (b - 1)) as f64);
                let mut dx = vec![T::zero(); x.len()];
                for i in 0..b {
                    for j in 0..b {
                        if i == j {
                            continue;
                        }
                        let off = (i * b + j) * l;
                        let row = &x[off..off + l];
                        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                        // subgradient 0 at the kink and at the origin
                        if *margin > norm && norm > T::zero() {
                            for k in 0..l {
                                dx[off + k] = -upstream * row[k] / norm;
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::NegLogLikelihood { input, positive } => {
                let (lo, hi) = (T::of(PROB_CLAMP), T::one() - T::of(PROB_CLAMP));
                let x = self.value(*input).data();
                let upstream = gd[0] / T::of(x.len() as f64);
                let dx = x
                    .iter()
                    .map(|&p| {
                        if p < lo || p > hi {
                            T::zero()
                        } else if *positive {
                            -upstream / p
                        } else {
                            upstream / (T::one() - p)
                        }
                    })
                    .collect();
                self.accumulate(grads, *input, dx);
            }
        }
    }
}

/// Floor on the norm product in the cosine denominator, for zero-norm vectors.
pub(crate) const COSINE_EPSILON: f64 = 1e-8;

struct PairDot<T> {
    dot: T,
    nu: T,
    nv: T,
    den: T,
    /// The norm product fell below the epsilon floor.
    floored: bool,
}

impl<T: Scalar> PairDot<T> {
    fn new(u: &[T], v: &[T], eps: T) -> Self {
        let mut dot = T::zero();
        let mut uu = T::zero();
        let mut vv = T::zero();
        for (&a, &b) in u.iter().zip(v) {
            dot = dot + a * b;
            uu = uu + a * a;
            vv = vv + b * b;
        }
        let (nu, nv) = (uu.sqrt(), vv.sqrt());
        let prod = nu * nv;
        Self {
            dot,
            nu,
            nv,
            den: prod.max(eps),
            floored: prod < eps,
        }
    }
}
