//! Dense NCHW tensors and the spatial kernels the network is built from.
//!
//! Convolutions are lowered to im2col + GEMM (via `matrixmultiply`), one
//! image at a time so the column buffer stays small.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: &'static str;

    /// `c = alpha * a * b + beta * c` for row/column strided matrices.
    ///
    /// # Safety
    /// The strides and dimensions must address memory inside the slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "F32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "F64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Matrix operand: slice plus (row stride, column stride).
#[derive(Clone, Copy)]
struct Mat<'a, S> {
    data: &'a [S],
    rs: usize,
    cs: usize,
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Safe wrapper: `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, `c` row-major.
fn gemm<S: Scalar>(m: usize, k: usize, n: usize, alpha: S, a: Mat<'_, S>, b: Mat<'_, S>, beta: S, c: &mut [S]) {
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "gemm: rhs out of bounds");
    assert!(m * n <= c.len(), "gemm: output out of bounds");
    // SAFETY: bounds asserted above; the three slices do not alias (c is &mut).
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element type conversion (e.g. f32 checkpoint weights into an f64 network).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sub-tensor `index` along axis 0.
    pub fn slice0(&self, index: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::Shape(format!("stack: {:?} vs {:?}", p.shape, first.shape)));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

/// Spatial geometry of a same-padded, stride-1 convolution.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

fn im2col<S: Scalar>(g: ConvGeom, img: &[S], col: &mut [S]) {
    let pad = g.k / 2;
    let (h, w) = (g.h as isize, g.w as isize);
    let mut row = 0;
    for ci in 0..g.cin {
        let chan = &img[ci * g.plane()..(ci + 1) * g.plane()];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * g.plane()..(row + 1) * g.plane()];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).clamp(0, w) as usize;
                let x1 = (w - dx).clamp(0, w) as usize;
                for y in 0..h {
                    let out = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    let sy = y + dy;
                    if sy < 0 || sy >= h || x0 >= x1 {
                        out.fill(S::zero());
                        continue;
                    }
                    out[..x0].fill(S::zero());
                    out[x1..].fill(S::zero());
                    let src = (sy * w + dx + x0 as isize) as usize;
                    out[x0..x1].copy_from_slice(&chan[src..src + (x1 - x0)]);
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<S: Scalar>(g: ConvGeom, col: &[S], img: &mut [S]) {
    let pad = g.k / 2;
    let (h, w) = (g.h as isize, g.w as isize);
    let mut row = 0;
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * g.plane()..(row + 1) * g.plane()];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).clamp(0, w) as usize;
                let x1 = (w - dx).clamp(0, w) as usize;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h || x0 >= x1 {
                        continue;
                    }
                    let base = ci * g.plane() + (sy * w + dx + x0 as isize) as usize;
                    let line = &src[(y * w) as usize + x0..(y * w) as usize + x1];
                    for (d, &v) in img[base..base + (x1 - x0)].iter_mut().zip(line) {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv_geom<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Result<(usize, ConvGeom)> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects NCHW input and OIHW kernel, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let k = w.dim(2);
    if w.dim(3) != k || k.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "conv2d kernel must be odd square, got {:?}",
            w.shape()
        )));
    }
    if x.dim(1) != w.dim(1) {
        return Err(Error::Shape(format!(
            "conv2d input has {} channels, kernel expects {}",
            x.dim(1),
            w.dim(1)
        )));
    }
    Ok((
        x.dim(0),
        ConvGeom {
            cin: x.dim(1),
            cout: w.dim(0),
            k,
            h: x.dim(2),
            w: x.dim(3),
        },
    ))
}

/// Same-padded stride-1 convolution, `x: [N, Cin, H, W]`, `w: [Cout, Cin, k, k]`.
pub fn conv2d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    let (n, g) = conv_geom(x, w)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(Error::Shape(format!(
                "conv2d bias has {} values for {} outputs",
                b.numel(),
                g.cout
            )));
        }
    }
    let mut out = Tensor::zeros(&[n, g.cout, g.h, g.w]);
    let mut col = vec![S::zero(); g.rows() * g.plane()];
    let in_stride = g.cin * g.plane();
    let out_stride = g.cout * g.plane();
    for i in 0..n {
        let dst = &mut out.data[i * out_stride..(i + 1) * out_stride];
        if let Some(b) = bias {
            for (co, plane) in dst.chunks_mut(g.plane()).enumerate() {
                plane.fill(b.data[co]);
            }
        }
        let beta = if bias.is_some() { S::one() } else { S::zero() };
        let img = &x.data[i * in_stride..(i + 1) * in_stride];
        let (src, rs) = if g.k == 1 {
            (img, g.plane())
        } else {
            im2col(g, img, &mut col);
            (&col[..], g.plane())
        };
        gemm(
            g.cout,
            g.rows(),
            g.plane(),
            S::one(),
            Mat {
                data: &w.data,
                rs: g.rows(),
                cs: 1,
            },
            Mat { data: src, rs, cs: 1 },
            beta,
            dst,
        );
    }
    Ok(out)
}

pub struct ConvGrads<S> {
    pub dx: Option<Tensor<S>>,
    pub dw: Tensor<S>,
    pub db: Tensor<S>,
}

/// Gradients of [`conv2d`] given the upstream gradient `dy`.
pub fn conv2d_backward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, dy: &Tensor<S>, need_dx: bool) -> Result<ConvGrads<S>> {
    let (n, g) = conv_geom(x, w)?;
    if dy.shape() != [n, g.cout, g.h, g.w] {
        return Err(Error::Shape(format!("conv2d_backward: dy {:?}", dy.shape())));
    }
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = vec![S::zero(); g.rows() * g.plane()];
    let mut dcol = vec![S::zero(); g.rows() * g.plane()];
    let in_stride = g.cin * g.plane();
    let out_stride = g.cout * g.plane();
    for i in 0..n {
        let gy = &dy.data[i * out_stride..(i + 1) * out_stride];
        for (co, plane) in gy.chunks(g.plane()).enumerate() {
            db.data[co] += plane.iter().copied().sum::<S>();
        }
        let img = &x.data[i * in_stride..(i + 1) * in_stride];
        let src: &[S] = if g.k == 1 {
            img
        } else {
            im2col(g, img, &mut col);
            &col
        };
        // dW[co, r] += sum_p dy[co, p] * col[r, p]
        gemm(
            g.cout,
            g.plane(),
            g.rows(),
            S::one(),
            Mat {
                data: gy,
                rs: g.plane(),
                cs: 1,
            },
            Mat {
                data: src,
                rs: 1,
                cs: g.plane(),
            },
            S::one(),
            &mut dw.data,
        );
        if let Some(dx) = dx.as_mut() {
            let dimg = &mut dx.data[i * in_stride..(i + 1) * in_stride];
            let target: &mut [S] = if g.k == 1 { dimg } else { &mut dcol };
            // dcol[r, p] = sum_co W[co, r] * dy[co, p]
            gemm(
                g.rows(),
                g.cout,
                g.plane(),
                S::one(),
                Mat {
                    data: &w.data,
                    rs: 1,
                    cs: g.rows(),
                },
                Mat {
                    data: gy,
                    rs: g.plane(),
                    cs: 1,
                },
                S::zero(),
                target,
            );
            if g.k != 1 {
                col2im_add(g, &dcol, &mut dx.data[i * in_stride..(i + 1) * in_stride]);
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the selected maximum.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    if x.rank() != 4 || !x.dim(2).is_multiple_of(2) || !x.dim(3).is_multiple_of(2) {
        return Err(Error::Shape(format!("max_pool2 needs even NCHW, got {:?}", x.shape())));
    }
    let (nc, h, w) = (x.dim(0) * x.dim(1), x.dim(2), x.dim(3));
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(nc * oh * ow);
    let mut arg = Vec::with_capacity(nc * oh * ow);
    for p in 0..nc {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * xx,
                    base + 2 * y * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if x.data[c] > x.data[best] {
                        best = c;
                    }
                }
                out.push(x.data[best]);
                arg.push(best);
            }
        }
    }
    let t = Tensor::new(&[x.dim(0), x.dim(1), oh, ow], out)?;
    Ok((t, arg))
}

pub fn max_pool2_backward<S: Scalar>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx.data[i] += g;
    }
    dx
}

/// Nearest-neighbour 2x upsampling of an NCHW tensor.
pub fn upsample2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (nc, h, w) = (x.dim(0) * x.dim(1), x.dim(2), x.dim(3));
    let mut out = Vec::with_capacity(nc * h * w * 4);
    for p in 0..nc {
        let plane = &x.data[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            let row = &plane[(y / 2) * w..(y / 2 + 1) * w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Tensor {
        shape: vec![x.dim(0), x.dim(1), 2 * h, 2 * w],
        data: out,
    }
}

pub fn upsample2_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let (n, c, h2, w2) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        for y in 0..h2 {
            for x in 0..w2 {
                dx.data[p * h * w + (y / 2) * w + x / 2] += dy.data[p * h2 * w2 + y * w2 + x];
            }
        }
    }
    dx
}

/// Concatenate along `axis`; all other dimensions must agree.
pub fn concat<S: Scalar>(parts: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let rank = first.rank();
    let mut shape = first.shape.clone();
    shape[axis] = 0;
    for p in parts {
        let same = p.rank() == rank && (0..rank).all(|d| d == axis || p.shape[d] == first.shape[d]);
        if !same {
            return Err(Error::Shape(format!(
                "concat axis {axis}: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
        shape[axis] += p.shape[axis];
    }
    let outer: usize = first.shape[..axis].iter().product();
    let inner: usize = first.shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(&shape, data)
}

/// Inverse of [`concat`]: split `x` along `axis` into pieces of the given sizes.
pub fn split<S: Scalar>(x: &Tensor<S>, axis: usize, sizes: &[usize]) -> Vec<Tensor<S>> {
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();
    let total = x.shape[axis];
    let mut offset = 0;
    sizes
        .iter()
        .map(|&len| {
            let mut shape = x.shape.clone();
            shape[axis] = len;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let start = (o * total + offset) * inner;
                data.extend_from_slice(&x.data[start..start + len * inner]);
            }
            offset += len;
            Tensor { shape, data }
        })
        .collect()
}
