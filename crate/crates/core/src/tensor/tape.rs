use super::kernels::{self, bilinear, conv, filter, layout, shuffle, time};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    /// `b` must hold a single element.
    Scale,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    BroadcastAdd(Var, Var, Vec<usize>),
    BroadcastMul(Var, Var, Vec<usize>),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Sigmoid(Var),
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: conv::ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    Bilinear {
        src: Var,
        flow: Var,
    },
    TimeMix {
        x: Var,
        w: Var,
        geom: time::TimeGeom,
    },
    Concat {
        inputs: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Repeat(Var, usize),
    Slice {
        x: Var,
        outer: usize,
        dim: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    GaussianValid {
        x: Var,
        kernel: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation and replays it backwards.
///
/// Nodes are appended in creation order, which is a topological order of the
/// graph; the backward pass visits them in exact reverse. Gradients reaching a
/// node along several paths are summed. A tape supports one backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        reason: reason.into(),
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn phi<T: Scalar>(x: T) -> (T, T) {
    // (cdf, pdf) of the standard normal
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of(0.398_942_280_401_432_7);
    (cdf, pdf)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the backward root wrt a leaf, once [`Tape::backward`] ran.
    /// Leaves that received no gradient report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        if !self.consumed || !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let shape = node.value.shape();
        Some(match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_vec(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        })
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(!self.consumed, "recording onto a consumed tape");
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

    fn record(&mut self, shape: &[usize], data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = self.rg(inputs);
        let value = Tensor::from_vec(shape, data).expect("kernel produced inconsistent data");
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    // ---- elementwise ------------------------------------------------------

    pub fn elementwise(&mut self, a: Var, b: Var, kind: ElementwiseKind) -> Result<Var> {
        match kind {
            ElementwiseKind::Add => self.add(a, b),
            ElementwiseKind::Sub => self.sub(a, b),
            ElementwiseKind::Mul => self.mul(a, b),
            ElementwiseKind::Scale => {
                if self.value(b).numel() != 1 {
                    return Err(mismatch("scale", self.shape(a), self.shape(b)));
                }
                self.broadcast_mul(a, b)
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.record(&shape, data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.record(&shape, data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.record(&shape, data, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x / y);
        let shape = self.shape(a).to_vec();
        Ok(self.record(&shape, data, Op::Div(a, b), &[a, b]))
    }

    fn broadcast_map(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sb.len() <= sa.len()
            && sb
                .iter()
                .rev()
                .zip(sa.iter().rev())
                .all(|(&db, &da)| db == 1 || db == da);
        if !ok {
            return Err(mismatch(op, sa, sb));
        }
        Ok(layout::broadcast_index(sa, sb))
    }

    /// `a + b` with `b` broadcast to `a`'s shape (trailing alignment, size-1 axes).
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = self.broadcast_map("broadcast_add", a, b)?;
        let bd = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&map)
            .map(|(&x, &j)| x + bd[j])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.record(&shape, data, Op::BroadcastAdd(a, b, map), &[a, b]))
    }

    /// `a * b` with `b` broadcast to `a`'s shape (trailing alignment, size-1 axes).
    pub fn broadcast_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = self.broadcast_map("broadcast_mul", a, b)?;
        let bd = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&map)
            .map(|(&x, &j)| x * bd[j])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.record(&shape, data, Op::BroadcastMul(a, b, map), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.record(&shape, data, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x + s).collect();
        let shape = self.shape(a).to_vec();
        self.record(&shape, data, Op::AddScalar(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.abs()).collect();
        let shape = self.shape(a).to_vec();
        self.record(&shape, data, Op::Abs(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        let shape = self.shape(a).to_vec();
        self.record(&shape, data, Op::Sigmoid(a), &[a])
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * phi(x).0).collect();
        let shape = self.shape(a).to_vec();
        self.record(&shape, data, Op::Gelu(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.record(&[1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of(v.numel() as f64);
        self.record(&[1], vec![m], Op::Mean(a), &[a])
    }

    // ---- structured ops ---------------------------------------------------

    /// Cross-correlation of `x[B,Cin,H,W]` with `w[Cout,Cin,k,k]` (k odd).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        if xs[1] != ws[1] {
            return Err(mismatch("conv2d channels", &xs, &ws));
        }
        let k = ws[2];
        if k.is_multiple_of(2) {
            return Err(invalid("conv2d", format!("kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be at least 1"));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(mismatch("conv2d bias", self.shape(b), &[ws[0]]));
            }
        }
        let out_dim = |d: usize| -> Result<usize> {
            let span = d + 2 * pad;
            if span < k || !(span - k).is_multiple_of(stride) {
                return Err(invalid(
                    "conv2d",
                    format!("non-integral output size for input {d}, kernel {k}, stride {stride}, pad {pad}"),
                ));
            }
            Ok((span - k) / stride + 1)
        };
        let geom = conv::ConvGeom {
            n: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            k,
            stride,
            pad,
            ho: out_dim(xs[2])?,
            wo: out_dim(xs[3])?,
        };
        let data = conv::forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(
            &[geom.n, geom.cout, geom.ho, geom.wo],
            data,
            Op::Conv2d { x, w, b, geom },
            &inputs,
        ))
    }

    /// Affine map over the last axis: `x[..., Din] · w[Din, Dout] + b[Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let din = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != din {
            return Err(mismatch("linear", &xs, &ws));
        }
        let dout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(mismatch("linear bias", self.shape(b), &[dout]));
            }
        }
        let m = self.value(x).numel() / din;
        let mut data = vec![T::zero(); m * dout];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in data.chunks_mut(dout) {
                row.copy_from_slice(bd);
            }
        }
        kernels::gemm(
            m,
            din,
            dout,
            self.value(x).data(),
            (din, 1),
            self.value(w).data(),
            (dout, 1),
            &mut data,
            (dout, 1),
            true,
        );
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(&shape, data, Op::Linear { x, w, b }, &inputs))
    }

    /// `[B, C·r², H, W] -> [B, C, rH, rW]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r * r) {
            return Err(invalid(
                "pixel_shuffle",
                format!("shape {s:?} cannot be shuffled with factor {r}"),
            ));
        }
        let c = s[1] / (r * r);
        let data = shuffle::pixel_shuffle(self.value(x).data(), s[0], c, s[2], s[3], r);
        Ok(self.record(&[s[0], c, s[2] * r, s[3] * r], data, Op::PixelShuffle(x, r), &[x]))
    }

    /// Inverse of [`Tape::pixel_shuffle`]: `[B, C, rH, rW] -> [B, C·r², H, W]`.
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || r == 0 || !s[2].is_multiple_of(r) || !s[3].is_multiple_of(r) {
            return Err(invalid(
                "pixel_unshuffle",
                format!("shape {s:?} cannot be unshuffled with factor {r}"),
            ));
        }
        let (h, w) = (s[2] / r, s[3] / r);
        let data = shuffle::pixel_unshuffle(self.value(x).data(), s[0], s[1], h, w, r);
        Ok(self.record(&[s[0], s[1] * r * r, h, w], data, Op::PixelUnshuffle(x, r), &[x]))
    }

    /// Samples `src[B,C,H,W]` at `p + flow(p)` with `flow[B,2,H,W]` = (dx, dy).
    pub fn bilinear_sample(&mut self, src: Var, flow: Var) -> Result<Var> {
        let ss = self.shape(src).to_vec();
        let fs = self.shape(flow).to_vec();
        if ss.len() != 4 || fs != [ss[0], 2, ss[2], ss[3]] {
            return Err(mismatch("bilinear_sample", &ss, &fs));
        }
        let data = bilinear::forward(
            self.value(src).data(),
            self.value(flow).data(),
            ss[0],
            ss[1],
            ss[2],
            ss[3],
        );
        Ok(self.record(&ss, data, Op::Bilinear { src, flow }, &[src, flow]))
    }

    /// Per-channel time mixing on frames-major `x[B,T,C,H,W]` with `w[C,T,T]`.
    pub fn frame_time_matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 5 || ws.len() != 3 || ws[0] != xs[2] || ws[1] != xs[1] || ws[2] != xs[1] {
            return Err(mismatch("frame_time_matmul", &xs, &ws));
        }
        let geom = time::TimeGeom {
            b: xs[0],
            t: xs[1],
            c: xs[2],
            p: xs[3] * xs[4],
        };
        let data = time::forward(self.value(x).data(), self.value(w).data(), &geom);
        Ok(self.record(&xs, data, Op::TimeMix { x, w, geom }, &[x, w]))
    }

    /// `out[b,c,h,w,:] = x[b,c,h,w,:] · w[c,:,:]` for `x[B,C,H,W,T]`.
    pub fn time_matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 5 || ws.len() != 3 || ws[0] != xs[1] || ws[1] != xs[4] || ws[2] != xs[4] {
            return Err(mismatch("time_matmul", &xs, &ws));
        }
        let frames = self.permute(x, &[0, 4, 1, 2, 3])?;
        let mixed = self.frame_time_matmul(frames, w)?;
        self.permute(mixed, &[0, 2, 3, 4, 1])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
            parts.push((v, s[axis]));
        }
        let (outer, inner) = layout::split_at_axis(&first, axis);
        let slices: Vec<(&[T], usize)> = parts.iter().map(|&(v, d)| (self.value(v).data(), d)).collect();
        let data = layout::concat(&slices, outer, inner);
        let mut shape = first;
        shape[axis] = total;
        Ok(self.record(
            &shape,
            data,
            Op::Concat {
                inputs: parts,
                outer,
                inner,
            },
            inputs,
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid("permute", format!("{axes:?} is not a permutation of {s:?}")));
        }
        let data = layout::permute(self.value(x).data(), &s, axes);
        let shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
        Ok(self.record(&shape, data, Op::Permute(x, axes.to_vec()), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() || shape.contains(&0) {
            return Err(mismatch("reshape", self.shape(x), shape));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.record(shape, data, Op::Reshape(x), &[x]))
    }

    /// Repeats each item along axis 0 `times` times consecutively.
    pub fn repeat_interleave(&mut self, x: Var, times: usize) -> Var {
        let s = self.shape(x).to_vec();
        let inner: usize = s[1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(src.len() * times);
        for item in src.chunks(inner) {
            for _ in 0..times {
                data.extend_from_slice(item);
            }
        }
        let mut shape = s;
        shape[0] *= times;
        self.record(&shape, data, Op::Repeat(x, times), &[x])
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, inner) = layout::split_at_axis(&s, axis);
        let data = layout::slice(self.value(x).data(), outer, s[axis], inner, start, len);
        let mut shape = s.clone();
        shape[axis] = len;
        Ok(self.record(
            &shape,
            data,
            Op::Slice {
                x,
                outer,
                dim: s[axis],
                inner,
                start,
                len,
            },
            &[x],
        ))
    }

    /// Separable "valid" filtering of every `[H, W]` plane of `x[N,C,H,W]`.
    pub fn gaussian_filter_valid(&mut self, x: Var, kernel: &[T]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let k = kernel.len();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(invalid(
                "gaussian_filter_valid",
                format!("plane {s:?} smaller than window {k}"),
            ));
        }
        let data = filter::forward(self.value(x).data(), s[0] * s[1], s[2], s[3], kernel);
        Ok(self.record(
            &[s[0], s[1], s[2] + 1 - k, s[3] + 1 - k],
            data,
            Op::GaussianValid {
                x,
                kernel: kernel.to_vec(),
            },
            &[x],
        ))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse-mode sweep from a one-element `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let rs = self.shape(root);
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarRoot(rs.to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[i].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    self.accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    self.accumulate(grads, *b, g.iter().map(|&x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, zip_map(g, val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, zip_map(g, val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bd = val(*b);
                if needs(*a) {
                    self.accumulate(grads, *a, zip_map(g, bd, |x, y| x / y));
                }
                if needs(*b) {
                    let gb = g
                        .iter()
                        .zip(val(*a))
                        .zip(bd)
                        .map(|((&gv, &av), &bv)| -gv * av / (bv * bv))
                        .collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::BroadcastAdd(a, b, map) => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    let mut gb = vec![T::zero(); self.nodes[b.0].value.numel()];
                    for (&gv, &j) in g.iter().zip(map) {
                        gb[j] += gv;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::BroadcastMul(a, b, map) => {
                let bd = val(*b);
                if needs(*a) {
                    let ga = g.iter().zip(map).map(|(&gv, &j)| gv * bd[j]).collect();
                    self.accumulate(grads, *a, ga);
                }
                if needs(*b) {
                    let mut gb = vec![T::zero(); bd.len()];
                    for ((&gv, &j), &av) in g.iter().zip(map).zip(val(*a)) {
                        gb[j] += gv * av;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.iter().map(|&x| x * *s).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Abs(a) => {
                let ga = zip_map(g, val(*a), |gv, x| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(g, out.data(), |gv, y| gv * y * (T::one() - y));
                self.accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = zip_map(g, val(*a), |gv, x| {
                    let (cdf, pdf) = phi(x);
                    gv * (cdf + x * pdf)
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate(grads, *a, vec![g[0] / T::of(n as f64); n]);
            }
            Op::Conv2d { x, w, b, geom } => {
                let r = conv::backward(
                    val(*x),
                    val(*w),
                    g,
                    geom,
                    (needs(*x), needs(*w), b.is_some_and(needs)),
                );
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = r.dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, r.db) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let ws = self.nodes[w.0].value.shape();
                let (din, dout) = (ws[0], ws[1]);
                let m = self.nodes[x.0].value.numel() / din;
                if needs(*x) {
                    let mut dx = vec![T::zero(); m * din];
                    kernels::gemm(m, dout, din, g, (dout, 1), val(*w), (1, dout), &mut dx, (din, 1), false);
                    self.accumulate(grads, *x, dx);
                }
                if needs(*w) {
                    let mut dw = vec![T::zero(); din * dout];
                    kernels::gemm(din, m, dout, val(*x), (1, din), g, (dout, 1), &mut dw, (dout, 1), false);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b.filter(|b| needs(*b)) {
                    let mut db = vec![T::zero(); dout];
                    for row in g.chunks(dout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::PixelShuffle(x, r) => {
                let s = out.shape();
                let dx = shuffle::pixel_unshuffle(g, s[0], s[1], s[2] / r, s[3] / r, *r);
                self.accumulate(grads, *x, dx);
            }
            Op::PixelUnshuffle(x, r) => {
                let s = out.shape();
                let dx = shuffle::pixel_shuffle(g, s[0], s[1] / (r * r), s[2], s[3], *r);
                self.accumulate(grads, *x, dx);
            }
            Op::Bilinear { src, flow } => {
                let s = out.shape();
                let (ds, df) = bilinear::backward(
                    val(*src),
                    val(*flow),
                    g,
                    s[0],
                    s[1],
                    s[2],
                    s[3],
                    needs(*src),
                    needs(*flow),
                );
                if let Some(ds) = ds {
                    self.accumulate(grads, *src, ds);
                }
                if let Some(df) = df {
                    self.accumulate(grads, *flow, df);
                }
            }
            Op::TimeMix { x, w, geom } => {
                let (dx, dw) = time::backward(val(*x), val(*w), g, geom, needs(*x), needs(*w));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::Concat { inputs, outer, inner } => {
                let total: usize = inputs.iter().map(|(_, d)| d).sum();
                let mut start = 0;
                for &(v, d) in inputs {
                    if needs(v) {
                        self.accumulate(grads, v, layout::slice(g, *outer, total, *inner, start, d));
                    }
                    start += d;
                }
            }
            Op::Permute(x, axes) => {
                let inv = layout::inverse_axes(axes);
                self.accumulate(grads, *x, layout::permute(g, out.shape(), &inv));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Repeat(x, times) => {
                let n = self.nodes[x.0].value.numel();
                let inner = n / self.nodes[x.0].value.shape()[0];
                let mut dx = vec![T::zero(); n];
                for (item, chunk) in dx.chunks_mut(inner).zip(g.chunks(inner * times)) {
                    for rep in chunk.chunks(inner) {
                        for (d, &v) in item.iter_mut().zip(rep) {
                            *d += v;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Slice {
                x,
                outer,
                dim,
                inner,
                start,
                len,
            } => {
                self.accumulate(grads, *x, layout::unslice(g, *outer, *dim, *inner, *start, *len));
            }
            Op::GaussianValid { x, kernel } => {
                let s = self.nodes[x.0].value.shape();
                self.accumulate(grads, *x, filter::backward(g, s[0] * s[1], s[2], s[3], kernel));
            }
        }
    }
}
