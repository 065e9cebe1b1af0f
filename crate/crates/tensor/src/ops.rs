//! Differentiable operations. Every op computes its forward value eagerly and
//! records itself on the graph when an input requires a gradient.

use crate::autograd::Op;
use crate::conv::{self, ConvGeom};
use crate::elem::{map_storage, zip_storage, DType, Elem, Storage};
use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::shape::{
    broadcast_shapes, broadcast_strides, broadcastable_to, contiguous_strides, for_each2, numel,
    split_trailing,
};
use crate::tensor::Tensor;

fn dtype_check(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dtype() != b.dtype() {
        return Err(TensorError::DTypeMismatch {
            op,
            left: a.dtype(),
            right: b.dtype(),
        });
    }
    Ok(())
}

fn binary_kernel<T: Elem>(
    sa: &[usize],
    sb: &[usize],
    out: &[usize],
    da: &[T],
    db: &[T],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if sa == sb {
        return da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect();
    }
    if db.len() == 1 && out == sa {
        let y = db[0];
        return da.iter().map(|&x| f(x, y)).collect();
    }
    if da.len() == 1 && out == sb {
        let x = da[0];
        return db.iter().map(|&y| f(x, y)).collect();
    }
    if out == sa {
        if let Some((outer, small, inner)) = split_trailing(sb, sa).filter(|s| s.2 >= 4) {
            let mut data = Vec::with_capacity(da.len());
            for_each2(
                &outer,
                &contiguous_strides(&outer),
                &broadcast_strides(&small, &outer),
                |o, _, ib| {
                    let y = db[ib];
                    data.extend(da[o * inner..(o + 1) * inner].iter().map(|&x| f(x, y)));
                },
            );
            return data;
        }
    }
    if out == sb {
        if let Some((outer, small, inner)) = split_trailing(sa, sb).filter(|s| s.2 >= 4) {
            let mut data = Vec::with_capacity(db.len());
            for_each2(
                &outer,
                &contiguous_strides(&outer),
                &broadcast_strides(&small, &outer),
                |o, _, ia| {
                    let x = da[ia];
                    data.extend(db[o * inner..(o + 1) * inner].iter().map(|&y| f(x, y)));
                },
            );
            return data;
        }
    }
    let mut data = vec![T::ZERO; numel(out)];
    let st_a = broadcast_strides(sa, out);
    let st_b = broadcast_strides(sb, out);
    for_each2(out, &st_a, &st_b, |o, ia, ib| data[o] = f(da[ia], db[ib]));
    data
}

fn binary(op: Op, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let name = op.name();
    dtype_check(name, a, b)?;
    let (sa, sb) = (a.shape(), b.shape());
    let out = if sa == sb {
        sa.to_vec()
    } else {
        broadcast_shapes(name, sa, sb)?
    };
    let data = match op {
        Op::Add => zip_storage!(a.storage(), b.storage(), |x, y| binary_kernel(
            sa,
            sb,
            &out,
            x,
            y,
            |p, q| p + q
        )),
        Op::Sub => zip_storage!(a.storage(), b.storage(), |x, y| binary_kernel(
            sa,
            sb,
            &out,
            x,
            y,
            |p, q| p - q
        )),
        Op::Mul => zip_storage!(a.storage(), b.storage(), |x, y| binary_kernel(
            sa,
            sb,
            &out,
            x,
            y,
            |p, q| p * q
        )),
        Op::Div => zip_storage!(a.storage(), b.storage(), |x, y| binary_kernel(
            sa,
            sb,
            &out,
            x,
            y,
            |p, q| p / q
        )),
        _ => unreachable!("{name} is not a binary op"),
    }
    .expect("dtypes checked above");
    Ok(Tensor::from_op(op, vec![a.clone(), b.clone()], out, data))
}

#[derive(Clone, Copy)]
enum Unary {
    Scale(f64),
    Shift(f64),
    Square,
    Powf(f64),
    Exp,
    Ln,
    Tanh,
    Leaky(f64),
    Abs,
}

fn unary_kernel<T: Elem>(v: &[T], u: Unary) -> Vec<T> {
    match u {
        Unary::Scale(c) => {
            let c = T::from_f64(c);
            v.iter().map(|&x| x * c).collect()
        }
        Unary::Shift(c) => {
            let c = T::from_f64(c);
            v.iter().map(|&x| x + c).collect()
        }
        Unary::Square => v.iter().map(|&x| x * x).collect(),
        Unary::Powf(p) => {
            let p = T::from_f64(p);
            v.iter().map(|&x| x.powf(p)).collect()
        }
        Unary::Exp => v.iter().map(|&x| x.exp()).collect(),
        Unary::Ln => v.iter().map(|&x| x.ln()).collect(),
        Unary::Tanh => v.iter().map(|&x| x.tanh()).collect(),
        Unary::Leaky(a) => {
            let a = T::from_f64(a);
            v.iter().map(|&x| x.max(T::ZERO) + a * x.min(T::ZERO)).collect()
        }
        Unary::Abs => v.iter().map(|&x| x.abs()).collect(),
    }
}

fn unary(op: Op, a: &Tensor, u: Unary) -> Tensor {
    let data = map_storage!(a.storage(), |v| unary_kernel(v, u));
    Tensor::from_op(op, vec![a.clone()], a.shape().to_vec(), data)
}

/// Constant computed elementwise from `x` (used for derivative masks).
#[allow(clippy::unnecessary_cast)]
pub(crate) fn pointwise_const(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = map_storage!(x.storage(), |v| v
        .iter()
        .map(|&e| Elem::from_f64(f(e as f64)))
        .collect());
    Tensor::from_storage(data, x.shape())
}

fn sum_to_kernel<T: Elem>(src: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    let mut out = vec![T::ZERO; numel(to)];
    if let Some((outer, small, inner)) = split_trailing(to, from).filter(|s| s.2 >= 4) {
        for_each2(
            &outer,
            &contiguous_strides(&outer),
            &broadcast_strides(&small, &outer),
            |o, _, t| {
                let mut acc = T::ZERO;
                for &v in &src[o * inner..(o + 1) * inner] {
                    acc += v;
                }
                out[t] += acc;
            },
        );
        return out;
    }
    let st_out = broadcast_strides(to, from);
    let st_src = contiguous_strides(from);
    for_each2(from, &st_src, &st_out, |_, i, o| out[o] += src[i]);
    out
}

fn broadcast_kernel<T: Elem>(src: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    let mut out = vec![T::ZERO; numel(to)];
    if let Some((outer, small, inner)) = split_trailing(from, to).filter(|s| s.2 >= 4) {
        for_each2(
            &outer,
            &contiguous_strides(&outer),
            &broadcast_strides(&small, &outer),
            |o, _, i| {
                out[o * inner..(o + 1) * inner].fill(src[i]);
            },
        );
        return out;
    }
    let st_src = broadcast_strides(from, to);
    let st_out = contiguous_strides(to);
    for_each2(to, &st_out, &st_src, |o, _, i| out[o] = src[i]);
    out
}

fn narrow_kernel<T: Elem>(
    src: &[T],
    outer: usize,
    inner: usize,
    full: usize,
    start: usize,
    len: usize,
) -> Vec<T> {
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        data.extend_from_slice(&src[base..base + len * inner]);
    }
    data
}

fn embed_kernel<T: Elem>(
    src: &[T],
    outer: usize,
    inner: usize,
    full: usize,
    start: usize,
    len: usize,
) -> Vec<T> {
    let mut data = vec![T::ZERO; outer * full * inner];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        data[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
    }
    data
}

fn cat_kernel<T: Elem>(parts: &[&Tensor], outer: usize, chunks: &[usize]) -> Storage {
    let slices: Vec<&[T]> = parts
        .iter()
        .map(|p| T::slice(p.storage()).expect("dtypes checked"))
        .collect();
    let mut data = Vec::with_capacity(outer * chunks.iter().sum::<usize>());
    for o in 0..outer {
        for (s, &chunk) in slices.iter().zip(chunks) {
            data.extend_from_slice(&s[o * chunk..(o + 1) * chunk]);
        }
    }
    T::wrap(data)
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(shape_err(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Nonlinearities used by the networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f32),
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::LeakyRelu(alpha) => x.leaky_relu(alpha),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(Op::Add, self, rhs)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(Op::Sub, self, rhs)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(Op::Mul, self, rhs)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(Op::Div, self, rhs)
    }

    pub fn neg(&self) -> Tensor {
        unary(Op::Scale(-1.0), self, Unary::Scale(-1.0))
    }

    pub fn scale(&self, c: f32) -> Tensor {
        unary(Op::Scale(c), self, Unary::Scale(c as f64))
    }

    pub fn shift(&self, c: f32) -> Tensor {
        unary(Op::Shift, self, Unary::Shift(c as f64))
    }

    pub fn powf(&self, p: f32) -> Tensor {
        if p == 2.0 {
            return unary(Op::Powf(p), self, Unary::Square);
        }
        unary(Op::Powf(p), self, Unary::Powf(p as f64))
    }

    pub fn square(&self) -> Tensor {
        self.powf(2.0)
    }

    pub fn sqrt(&self) -> Tensor {
        self.powf(0.5)
    }

    pub fn exp(&self) -> Tensor {
        unary(Op::Exp, self, Unary::Exp)
    }

    pub fn ln(&self) -> Tensor {
        unary(Op::Ln, self, Unary::Ln)
    }

    pub fn tanh(&self) -> Tensor {
        unary(Op::Tanh, self, Unary::Tanh)
    }

    /// `x` for positive inputs, `alpha * x` otherwise (slope `alpha` at 0).
    pub fn leaky_relu(&self, alpha: f32) -> Tensor {
        unary(Op::LeakyRelu(alpha), self, Unary::Leaky(alpha as f64))
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn abs(&self) -> Tensor {
        unary(Op::Abs, self, Unary::Abs)
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        if !broadcastable_to(shape, self.shape()) {
            return Err(shape_err(
                "sum_to",
                format!("{:?} does not broadcast to {:?}", shape, self.shape()),
            ));
        }
        let out = map_storage!(self.storage(), |v| sum_to_kernel(v, self.shape(), shape));
        Ok(Tensor::from_op(
            Op::SumTo,
            vec![self.clone()],
            shape.to_vec(),
            out,
        ))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        if !broadcastable_to(self.shape(), shape) {
            return Err(shape_err(
                "broadcast_to",
                format!("{:?} does not broadcast to {:?}", self.shape(), shape),
            ));
        }
        let out = map_storage!(self.storage(), |v| broadcast_kernel(v, self.shape(), shape));
        Ok(Tensor::from_op(
            Op::BroadcastTo,
            vec![self.clone()],
            shape.to_vec(),
            out,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::BadElementCount {
                op: "reshape",
                got: self.numel(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            Op::Reshape,
            vec![self.clone()],
            shape.to_vec(),
            self.storage().clone(),
        ))
    }

    pub fn sum_all(&self) -> Tensor {
        self.sum_to(&[]).expect("everything broadcasts from a scalar")
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(TensorError::Empty { op: "mean" });
        }
        Ok(self.sum_all().scale(1.0 / self.numel() as f32))
    }

    /// Mean over the given axes, keeping them as size-1 dimensions.
    pub fn mean_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let mut shape = self.shape().to_vec();
        let mut count = 1;
        for &a in axes {
            if a >= shape.len() {
                return Err(arg_err("mean_keepdim", format!("axis {a} out of range")));
            }
            count *= shape[a];
            shape[a] = 1;
        }
        if count == 0 {
            return Err(TensorError::Empty { op: "mean_keepdim" });
        }
        Ok(self.sum_to(&shape)?.scale(1.0 / count as f32))
    }

    /// Slice `len` entries starting at `start` along `dim`.
    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if dim >= shape.len() || start + len > shape[dim] {
            return Err(arg_err(
                "narrow",
                format!("range {start}..{} on dim {dim} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..dim].iter().product();
        let inner: usize = shape[dim + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[dim] = len;
        let full = shape[dim];
        let data = map_storage!(self.storage(), |v| narrow_kernel(
            v, outer, inner, full, start, len
        ));
        Ok(Tensor::from_op(
            Op::Narrow { dim, start },
            vec![self.clone()],
            out_shape,
            data,
        ))
    }

    /// Zero-padded placement of `self` into a tensor whose `dim` has length
    /// `full`, at offset `start` (the adjoint of [`Tensor::narrow`]).
    pub(crate) fn embed(&self, dim: usize, start: usize, full: usize) -> Tensor {
        let shape = self.shape();
        let len = shape[dim];
        let outer: usize = shape[..dim].iter().product();
        let inner: usize = shape[dim + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[dim] = full;
        let data = map_storage!(self.storage(), |v| embed_kernel(
            v, outer, inner, full, start, len
        ));
        Tensor::from_op(Op::Embed { dim, start }, vec![self.clone()], out_shape, data)
    }

    /// Concatenation along `dim`; all other extents must agree.
    pub fn cat(parts: &[&Tensor], dim: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| arg_err("cat", "no tensors given"))?;
        let rank = first.rank();
        if dim >= rank {
            return Err(arg_err("cat", format!("dim {dim} out of range for rank {rank}")));
        }
        for p in parts {
            dtype_check("cat", first, p)?;
            let ok = p.rank() == rank && (0..rank).all(|i| i == dim || p.shape()[i] == first.shape()[i]);
            if !ok {
                return Err(shape_err(
                    "cat",
                    format!("{:?} vs {:?} along dim {dim}", first.shape(), p.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..dim].iter().product();
        let inner: usize = first.shape()[dim + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape()[dim]).sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[dim] = total;
        let chunks: Vec<usize> = parts.iter().map(|p| p.shape()[dim] * inner).collect();
        let data = match first.dtype() {
            DType::F32 => cat_kernel::<f32>(parts, outer, &chunks),
            DType::F64 => cat_kernel::<f64>(parts, outer, &chunks),
        };
        let sizes = parts.iter().map(|p| p.shape()[dim]).collect();
        Ok(Tensor::from_op(
            Op::Cat { dim, sizes },
            parts.iter().map(|&p| p.clone()).collect(),
            out_shape,
            data,
        ))
    }

    /// Channel concatenation of two NCHW tensors.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        expect_rank("concat_channels", self, 4)?;
        expect_rank("concat_channels", other, 4)?;
        let (a, b) = (self.shape(), other.shape());
        if a[0] != b[0] || a[2] != b[2] || a[3] != b[3] {
            return Err(shape_err(
                "concat_channels",
                format!("batch/spatial extents differ: {a:?} vs {b:?}"),
            ));
        }
        Tensor::cat(&[self, other], 1)
    }

    /// 2-D cross-correlation with zero padding. `weight` is `[out, in, k, k]`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let g = conv_geom_forward(self, weight, stride, padding)?;
        dtype_check("conv2d", self, weight)?;
        let data = zip_storage!(self.storage(), weight.storage(), |x, w| conv::conv2d(&g, x, w))
            .expect("dtypes checked above");
        let out = Tensor::from_op(
            Op::Conv2d { stride, padding },
            vec![self.clone(), weight.clone()],
            vec![g.n, g.o, g.ho, g.wo],
            data,
        );
        add_channel_bias(out, bias)
    }

    /// Transposed convolution: the adjoint of [`Tensor::conv2d`] with the same
    /// geometry. `weight` is `[in, out, k, k]`; the output extent is
    /// `(h - 1) * stride - 2 * padding + k`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        expect_rank("conv_transpose2d", self, 4)?;
        expect_rank("conv_transpose2d", weight, 4)?;
        let (h, w) = (self.dim(2), self.dim(3));
        let k = weight.dim(2);
        if stride == 0 || (h.max(1) - 1) * stride + k < 2 * padding + 1 {
            return Err(arg_err(
                "conv_transpose2d",
                format!("degenerate geometry: h {h}, k {k}, stride {stride}, padding {padding}"),
            ));
        }
        let out_h = (h - 1) * stride + k - 2 * padding;
        let out_w = (w - 1) * stride + k - 2 * padding;
        let out = self.conv_transpose2d_to(weight, stride, padding, [out_h, out_w])?;
        add_channel_bias(out, bias)
    }

    pub(crate) fn conv_transpose2d_to(
        &self,
        weight: &Tensor,
        stride: usize,
        padding: usize,
        out_hw: [usize; 2],
    ) -> Result<Tensor> {
        let g = conv_geom_transpose(self, weight, stride, padding, out_hw)?;
        dtype_check("conv_transpose2d", self, weight)?;
        let data = zip_storage!(self.storage(), weight.storage(), |z, w| conv::conv_transpose2d(
            &g, z, w
        ))
        .expect("dtypes checked above");
        Ok(Tensor::from_op(
            Op::ConvTranspose2d { stride, padding },
            vec![self.clone(), weight.clone()],
            vec![g.n, g.c, g.h, g.w],
            data,
        ))
    }

    /// Filter-shaped contraction of an image `self` with a response `gy`.
    pub(crate) fn conv_weight_grad(
        &self,
        gy: &Tensor,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (xs, ys) = (self.shape(), gy.shape());
        let g = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ys[1],
            k: kernel,
            stride,
            pad: padding,
            ho: ys[2],
            wo: ys[3],
        };
        dtype_check("conv_weight_grad", self, gy)?;
        let data = zip_storage!(self.storage(), gy.storage(), |x, y| conv::conv_weight_grad(
            &g, x, y
        ))
        .expect("dtypes checked above");
        Ok(Tensor::from_op(
            Op::ConvWeightGrad { stride, padding },
            vec![self.clone(), gy.clone()],
            vec![g.o, g.c, kernel, kernel],
            data,
        ))
    }

    /// Per-(sample, channel) normalization over the spatial plane followed by
    /// a learned per-channel affine map.
    pub fn instance_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
        expect_rank("instance_norm", self, 4)?;
        let c = self.dim(1);
        if gamma.numel() != c || beta.numel() != c {
            return Err(shape_err(
                "instance_norm",
                format!(
                    "{c} channels but gamma {:?} / beta {:?}",
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let mean = self.mean_keepdim(&[2, 3])?;
        let centered = self.sub(&mean)?;
        let var = centered.square().mean_keepdim(&[2, 3])?;
        let inv_std = var.shift(eps).powf(-0.5);
        let normed = centered.mul(&inv_std)?;
        let gamma = gamma.reshape(&[1, c, 1, 1])?;
        let beta = beta.reshape(&[1, c, 1, 1])?;
        normed.mul(&gamma)?.add(&beta)
    }
}

fn add_channel_bias(out: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        None => Ok(out),
        Some(b) => {
            let o = out.dim(1);
            if b.numel() != o {
                return Err(shape_err(
                    "conv bias",
                    format!("{o} output channels but bias {:?}", b.shape()),
                ));
            }
            out.add(&b.reshape(&[1, o, 1, 1])?)
        }
    }
}

fn conv_geom_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d", w, 4)?;
    let (xs, ws) = (x.shape(), w.shape());
    if ws[1] != xs[1] {
        return Err(shape_err(
            "conv2d",
            format!("input has {} channels but weight {ws:?} expects {}", xs[1], ws[1]),
        ));
    }
    if ws[2] != ws[3] {
        return Err(shape_err("conv2d", format!("non-square kernel {ws:?}")));
    }
    let k = ws[2];
    let geom_err = || {
        arg_err(
            "conv2d",
            format!("input {xs:?} too small for kernel {k} with padding {pad}, stride {stride}"),
        )
    };
    let ho = conv::out_extent(xs[2], k, stride, pad).ok_or_else(geom_err)?;
    let wo = conv::out_extent(xs[3], k, stride, pad).ok_or_else(geom_err)?;
    Ok(ConvGeom {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        o: ws[0],
        k,
        stride,
        pad,
        ho,
        wo,
    })
}

fn conv_geom_transpose(
    z: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    out_hw: [usize; 2],
) -> Result<ConvGeom> {
    expect_rank("conv_transpose2d", z, 4)?;
    expect_rank("conv_transpose2d", w, 4)?;
    let (zs, ws) = (z.shape(), w.shape());
    if ws[0] != zs[1] {
        return Err(shape_err(
            "conv_transpose2d",
            format!("input has {} channels but weight {ws:?} expects {}", zs[1], ws[0]),
        ));
    }
    let k = ws[2];
    let ho = conv::out_extent(out_hw[0], k, stride, pad);
    let wo = conv::out_extent(out_hw[1], k, stride, pad);
    if ho != Some(zs[2]) || wo != Some(zs[3]) {
        return Err(shape_err(
            "conv_transpose2d",
            format!("output {out_hw:?} is inconsistent with input {zs:?} for k {k} s {stride} p {pad}"),
        ));
    }
    Ok(ConvGeom {
        n: zs[0],
        c: ws[1],
        h: out_hw[0],
        w: out_hw[1],
        o: ws[0],
        k,
        stride,
        pad,
        ho: zs[2],
        wo: zs[3],
    })
}
