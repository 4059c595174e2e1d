//! Define-by-run reverse-mode tape.
//!
//! Every op appends a node holding its output value. [`Graph::backward`]
//! walks the nodes in reverse recording order once, accumulating gradients
//! into every node that (transitively) depends on a parameter.

use crate::error::{shape_err, Result, TensorError};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves H and W for odd kernels.
    Same,
    Valid,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, pad: usize },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    SliceBatch { x: Var, start: usize },
    Upsample { x: Var, scale: usize },
    Affine { x: Var, scale: Vec<T> },
    Mix { x: Var, m: Vec<T>, cin: usize },
    Mse(Var, Var),
    MeanSquare(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    ops: Vec<Op<T>>,
    requires_grad: Vec<bool>,
    backward_done: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
            backward_done: false,
        }
    }

    /// Drops every recorded node.
    pub fn reset(&mut self) {
        *self = Graph::new();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.requires_grad[v.0]);
        self.push(value, op, rg)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.values[v.0].shape
    }

    /// Gradient buffer of `v`, `None` if nothing flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.values[v.0].shape.clone();
        match &self.grads[v.0] {
            Some(g) => Tensor { shape, data: g.clone() },
            None => Tensor::zeros(&shape),
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        let [n, c, h, wd] = self.values[x.0].dims4("conv2d input")?;
        let [k, wc, kh, kw] = self.values[w.0].dims4("conv2d weight")?;
        if wc != c {
            return Err(shape_err(
                "conv2d",
                format!("input channels {c} differ from weight input channels {wc}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel must be square and odd, got {kh}×{kw}")));
        }
        if let Some(b) = b {
            if self.values[b.0].shape != [k] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias shape {:?} differs from output channels [{k}]", self.values[b.0].shape),
                ));
            }
        }
        let pad = match padding {
            Padding::Same => kh / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err("conv2d", format!("input {h}×{wd} smaller than kernel {kh}×{kw}")));
        }
        let geo = ConvGeom::new(c, h, wd, kh, pad);
        let (ho, wo) = (geo.ho, geo.wo);
        let mut out = vec![T::zero(); n * k * ho * wo];
        let wv = &self.values[w.0].data;
        let xv = &self.values[x.0].data;
        let mut col = vec![T::zero(); geo.col_len()];
        for bi in 0..n {
            let xn = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
            let on = &mut out[bi * k * ho * wo..(bi + 1) * k * ho * wo];
            let colv: &[T] = if geo.is_pointwise() {
                xn
            } else {
                geo.im2col(xn, &mut col);
                &col
            };
            gemm(false, false, k, geo.rows(), ho * wo, wv, colv, T::zero(), on);
            if let Some(b) = b {
                let bv = &self.values[b.0].data;
                for (kk, plane) in on.chunks_exact_mut(ho * wo).enumerate() {
                    for y in plane {
                        *y += bv[kk];
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let value = Tensor { shape: vec![n, k, ho, wo], data: out };
        Ok(self.derived(value, Op::Conv { x, w, b, pad }, &inputs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.values[x.0].map(|v| if v > T::zero() { v } else { T::zero() });
        self.derived(value, Op::Relu(x), &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.values[a.0].shape != self.values[b.0].shape {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.values[a.0].shape, self.values[b.0].shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x + y).collect();
        let value = Tensor { shape: va.shape.clone(), data };
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x - y).collect();
        let value = Tensor { shape: va.shape.clone(), data };
        Ok(self.derived(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.values[x.0].map(|v| v * s);
        self.derived(value, Op::Scale(x, s), &[x])
    }

    /// Concatenation along the channel axis of `[N,C,H,W]` tensors.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(shape_err("concat_channels", "no inputs"));
        };
        let [n, _, h, w] = self.values[first.0].dims4("concat_channels")?;
        let mut ctot = 0;
        for &x in xs {
            let [xn, xc, xh, xw] = self.values[x.0].dims4("concat_channels")?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(shape_err(
                    "concat_channels",
                    format!("[{xn},_,{xh},{xw}] does not match [{n},_,{h},{w}]"),
                ));
            }
            ctot += xc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * ctot * plane);
        for bi in 0..n {
            for &x in xs {
                let v = &self.values[x.0];
                let xc = v.shape[1];
                data.extend_from_slice(&v.data[bi * xc * plane..(bi + 1) * xc * plane]);
            }
        }
        let value = Tensor { shape: vec![n, ctot, h, w], data };
        Ok(self.derived(value, Op::Concat(xs.to_vec()), xs))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.values[x.0].dims4("slice_channels")?;
        if start + len > c {
            return Err(shape_err("slice_channels", format!("channels {start}..{} of {c}", start + len)));
        }
        let plane = h * w;
        let v = &self.values[x.0].data;
        let mut data = Vec::with_capacity(n * len * plane);
        for bi in 0..n {
            let base = (bi * c + start) * plane;
            data.extend_from_slice(&v[base..base + len * plane]);
        }
        let value = Tensor { shape: vec![n, len, h, w], data };
        Ok(self.derived(value, Op::SliceChannels { x, start }, &[x]))
    }

    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = &self.values[x.0];
        let Some(&n) = t.shape.first() else {
            return Err(shape_err("slice_batch", "scalar input"));
        };
        if start + len > n {
            return Err(shape_err("slice_batch", format!("items {start}..{} of {n}", start + len)));
        }
        let item = t.len() / n;
        let mut shape = t.shape.clone();
        shape[0] = len;
        let data = t.data[start * item..(start + len) * item].to_vec();
        Ok(self.derived(Tensor { shape, data }, Op::SliceBatch { x, start }, &[x]))
    }

    /// Bilinear upsampling by an integer factor with half-pixel centers
    /// (input coordinate `(i + 0.5)/scale − 0.5`) and clamped borders.
    pub fn upsample_bilinear(&mut self, x: Var, scale: usize) -> Result<Var> {
        if scale < 2 {
            return Err(shape_err("upsample_bilinear", format!("scale must be ≥ 2, got {scale}")));
        }
        let [n, c, h, w] = self.values[x.0].dims4("upsample_bilinear")?;
        let (ho, wo) = (h * scale, w * scale);
        let ty = axis_taps::<T>(h, scale);
        let tx = axis_taps::<T>(w, scale);
        let src = &self.values[x.0].data;
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (p, op) in out.chunks_exact_mut(ho * wo).enumerate() {
            let ip = &src[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let (r0, r1) = (&ip[y0 * w..(y0 + 1) * w], &ip[y1 * w..(y1 + 1) * w]);
                let orow = &mut op[oy * wo..(oy + 1) * wo];
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    orow[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                }
            }
        }
        let value = Tensor { shape: vec![n, c, ho, wo], data: out };
        Ok(self.derived(value, Op::Upsample { x, scale }, &[x]))
    }

    /// Per-channel `y = x·scale[c] + offset[c]`.
    pub fn affine_channels(&mut self, x: Var, scale: &[T], offset: &[T]) -> Result<Var> {
        let [_, c, h, w] = self.values[x.0].dims4("affine_channels")?;
        if scale.len() != c || offset.len() != c {
            return Err(shape_err(
                "affine_channels",
                format!("{c} channels, {} scales, {} offsets", scale.len(), offset.len()),
            ));
        }
        let plane = h * w;
        let mut value = self.values[x.0].clone();
        for (p, chunk) in value.data.chunks_exact_mut(plane).enumerate() {
            let ci = p % c;
            for y in chunk {
                *y = *y * scale[ci] + offset[ci];
            }
        }
        let op = Op::Affine { x, scale: scale.to_vec() };
        Ok(self.derived(value, op, &[x]))
    }

    /// Per-pixel linear channel map, `y[o] = Σ_i m[o·cin + i]·x[i]`.
    pub fn mix_channels(&mut self, x: Var, m: &[T], cout: usize) -> Result<Var> {
        let [n, cin, h, w] = self.values[x.0].dims4("mix_channels")?;
        if m.len() != cout * cin {
            return Err(shape_err("mix_channels", format!("matrix has {} entries, need {cout}×{cin}", m.len())));
        }
        let plane = h * w;
        let src = &self.values[x.0].data;
        let mut out = vec![T::zero(); n * cout * plane];
        for bi in 0..n {
            for o in 0..cout {
                let dst = &mut out[(bi * cout + o) * plane..(bi * cout + o + 1) * plane];
                for i in 0..cin {
                    let mi = m[o * cin + i];
                    let s = &src[(bi * cin + i) * plane..(bi * cin + i + 1) * plane];
                    for (d, &v) in dst.iter_mut().zip(s) {
                        *d += mi * v;
                    }
                }
            }
        }
        let value = Tensor { shape: vec![n, cout, h, w], data: out };
        Ok(self.derived(value, Op::Mix { x, m: m.to_vec(), cin }, &[x]))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (va, vb) = (&self.values[a.0].data, &self.values[b.0].data);
        let s = compensated_sum(va.iter().zip(vb).map(|(&x, &y)| (x - y) * (x - y)));
        let value = Tensor::scalar(s / T::from_f64(va.len().max(1) as f64));
        Ok(self.derived(value, Op::Mse(a, b), &[a, b]))
    }

    pub fn mean_square(&mut self, x: Var) -> Var {
        let v = &self.values[x.0].data;
        let s = compensated_sum(v.iter().map(|&y| y * y));
        let value = Tensor::scalar(s / T::from_f64(v.len().max(1) as f64));
        self.derived(value, Op::MeanSquare(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = compensated_sum(self.values[x.0].data.iter().copied());
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.values[x.0].data;
        let s = compensated_sum(v.iter().copied());
        let value = Tensor::scalar(s / T::from_f64(v.len().max(1) as f64));
        self.derived(value, Op::Mean(x), &[x])
    }

    /// Populates gradients of everything `loss` depends on. The tape can be
    /// differentiated once; call [`Graph::reset`] and re-record to go again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.values[loss.0].len() != 1 {
            return Err(TensorError::NotScalar(self.values[loss.0].shape.clone()));
        }
        self.backward_done = true;
        if !self.requires_grad[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.requires_grad[id] {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.ops[id], Op::Leaf);
            self.backprop(id, &op, &g);
            self.ops[id] = op;
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn backprop(&mut self, id: usize, op: &Op<T>, g: &[T]) {
        let values = &self.values;
        let grads = &mut self.grads;
        let req = &self.requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                grad_buf(grads, req, values, $v)
            };
        }
        match op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let y = &values[id].data;
                if let Some(gx) = acc!(*x) {
                    for ((d, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        if yi > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                }
                if let Some(gb) = acc!(*b) {
                    gb.iter_mut().zip(g).for_each(|(d, &gi)| *d += sign * gi);
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().zip(g).for_each(|(d, &gi)| *d += *s * gi);
                }
            }
            Op::Concat(xs) => {
                let [n, ctot, h, w] = [values[id].shape[0], values[id].shape[1], values[id].shape[2], values[id].shape[3]];
                let plane = h * w;
                let mut c0 = 0;
                for x in xs {
                    let xc = values[x.0].shape[1];
                    if let Some(gx) = acc!(*x) {
                        for bi in 0..n {
                            let src = &g[(bi * ctot + c0) * plane..(bi * ctot + c0 + xc) * plane];
                            let dst = &mut gx[bi * xc * plane..(bi + 1) * xc * plane];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    }
                    c0 += xc;
                }
            }
            Op::SliceChannels { x, start } => {
                let s = &values[x.0].shape;
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let len = values[id].shape[1];
                if let Some(gx) = acc!(*x) {
                    for bi in 0..n {
                        let dst = &mut gx[(bi * c + start) * plane..(bi * c + start + len) * plane];
                        let src = &g[bi * len * plane..(bi + 1) * len * plane];
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::SliceBatch { x, start } => {
                let item = values[x.0].len() / values[x.0].shape[0];
                if let Some(gx) = acc!(*x) {
                    let dst = &mut gx[start * item..start * item + g.len()];
                    dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Upsample { x, scale } => {
                let s = &values[x.0].shape;
                let (h, w) = (s[2], s[3]);
                let (ho, wo) = (h * scale, w * scale);
                let ty = axis_taps::<T>(h, *scale);
                let tx = axis_taps::<T>(w, *scale);
                if let Some(gx) = acc!(*x) {
                    for (p, gp) in g.chunks_exact(ho * wo).enumerate() {
                        let ip = &mut gx[p * h * w..(p + 1) * h * w];
                        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                                let gv = gp[oy * wo + ox];
                                ip[y0 * w + x0] += wy0 * wx0 * gv;
                                ip[y0 * w + x1] += wy0 * wx1 * gv;
                                ip[y1 * w + x0] += wy1 * wx0 * gv;
                                ip[y1 * w + x1] += wy1 * wx1 * gv;
                            }
                        }
                    }
                }
            }
            Op::Affine { x, scale } => {
                let s = &values[x.0].shape;
                let (c, plane) = (s[1], s[2] * s[3]);
                if let Some(gx) = acc!(*x) {
                    for (p, (dst, src)) in gx.chunks_exact_mut(plane).zip(g.chunks_exact(plane)).enumerate() {
                        let sc = scale[p % c];
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d += sc * v);
                    }
                }
            }
            Op::Mix { x, m, cin } => {
                let s = &values[x.0].shape;
                let (n, plane) = (s[0], s[2] * s[3]);
                let cout = values[id].shape[1];
                if let Some(gx) = acc!(*x) {
                    for bi in 0..n {
                        for o in 0..cout {
                            let src = &g[(bi * cout + o) * plane..(bi * cout + o + 1) * plane];
                            for i in 0..*cin {
                                let mi = m[o * cin + i];
                                let dst = &mut gx[(bi * cin + i) * plane..(bi * cin + i + 1) * plane];
                                dst.iter_mut().zip(src).for_each(|(d, &v)| *d += mi * v);
                            }
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (&values[a.0].data, &values[b.0].data);
                let k = T::from_f64(2.0) * g[0] / T::from_f64(va.len().max(1) as f64);
                if let Some(ga) = acc!(*a) {
                    for ((d, &x), &y) in ga.iter_mut().zip(va).zip(vb) {
                        *d += k * (x - y);
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for ((d, &x), &y) in gb.iter_mut().zip(va).zip(vb) {
                        *d -= k * (x - y);
                    }
                }
            }
            Op::MeanSquare(x) => {
                let vx = &values[x.0].data;
                let k = T::from_f64(2.0) * g[0] / T::from_f64(vx.len().max(1) as f64);
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().zip(vx).for_each(|(d, &v)| *d += k * v);
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                let n = values[x.0].len().max(1);
                let k = if matches!(op, Op::Mean(_)) { g[0] / T::from_f64(n as f64) } else { g[0] };
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().for_each(|d| *d += k);
                }
            }
            Op::Conv { x, w, b, pad } => {
                let [n, c, h, wd] = [values[x.0].shape[0], values[x.0].shape[1], values[x.0].shape[2], values[x.0].shape[3]];
                let k = values[w.0].shape[0];
                let kh = values[w.0].shape[2];
                let geo = ConvGeom::new(c, h, wd, kh, *pad);
                let hw = geo.ho * geo.wo;
                if let Some(b) = b {
                    if let Some(gb) = acc!(*b) {
                        for bi in 0..n {
                            for kk in 0..k {
                                let s: T = g[(bi * k + kk) * hw..(bi * k + kk + 1) * hw].iter().copied().sum();
                                gb[kk] += s;
                            }
                        }
                    }
                }
                let xv = &values[x.0].data;
                let mut col = vec![T::zero(); geo.col_len()];
                if req[w.0] {
                    let mut gw = grads[w.0].take().unwrap_or_else(|| vec![T::zero(); values[w.0].len()]);
                    for bi in 0..n {
                        let xn = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
                        let colv: &[T] = if geo.is_pointwise() {
                            xn
                        } else {
                            geo.im2col(xn, &mut col);
                            &col
                        };
                        let gn = &g[bi * k * hw..(bi + 1) * k * hw];
                        gemm(false, true, k, hw, geo.rows(), gn, colv, T::one(), &mut gw);
                    }
                    grads[w.0] = Some(gw);
                }
                if req[x.0] {
                    let wv = &values[w.0].data;
                    let mut gx = grads[x.0].take().unwrap_or_else(|| vec![T::zero(); values[x.0].len()]);
                    for bi in 0..n {
                        let gn = &g[bi * k * hw..(bi + 1) * k * hw];
                        let gxn = &mut gx[bi * c * h * wd..(bi + 1) * c * h * wd];
                        if geo.is_pointwise() {
                            gemm(true, false, geo.rows(), k, hw, wv, gn, T::one(), gxn);
                        } else {
                            gemm(true, false, geo.rows(), k, hw, wv, gn, T::zero(), &mut col);
                            geo.col2im(&col, gxn);
                        }
                    }
                    grads[x.0] = Some(gx);
                }
            }
        }
    }
}

fn grad_buf<'a, T: Scalar>(
    grads: &'a mut [Option<Vec<T>>],
    req: &[bool],
    values: &[Tensor<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !req[v.0] {
        return None;
    }
    let n = values[v.0].len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

/// `(i0, i1, w0, w1)` per output index along one axis.
/// Neumaier summation. Reductions feed finite-difference checks, where the
/// rounding error of a naive sum over many elements swamps small gradients.
pub fn compensated_sum<T: Scalar>(xs: impl Iterator<Item = T>) -> T {
    let (mut s, mut c) = (T::zero(), T::zero());
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

fn axis_taps<T: Scalar>(n: usize, scale: usize) -> Vec<(usize, usize, T, T)> {
    (0..n * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let f = if i0 == n - 1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, T::from_f64(1.0 - f), T::from_f64(f))
        })
        .collect()
}

/// Convolution geometry for one batch item.
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, k: usize, pad: usize) -> Self {
        ConvGeom {
            c,
            h,
            w,
            k,
            pad,
            ho: h + 2 * pad + 1 - k,
            wo: w + 2 * pad + 1 - k,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_len(&self) -> usize {
        if self.is_pointwise() {
            0
        } else {
            self.rows() * self.ho * self.wo
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let hw = self.ho * self.wo;
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = oy as isize + ki as isize - self.pad as isize;
                        let drow = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let srow = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = ox as isize + kj as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize { T::zero() } else { srow[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], x: &mut [T]) {
        let hw = self.ho * self.wo;
        for ci in 0..self.c {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &col[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = oy as isize + ki as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let prow = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = ox as isize + kj as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                prow[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
