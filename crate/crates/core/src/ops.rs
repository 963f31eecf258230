//! Forward and backward kernels for the layer zoo.
//!
//! [`conv2d_direct`] is the semantic reference for every convolution; the
//! grouped-by-1 path used by [`conv2d`] lowers to im2col + GEMM and must agree
//! with it to within float reassociation error.

use crate::error::{Error, Result};
use crate::layer::{LayerDesc, LayerKind, LEAKY_SLOPE};
use crate::tensor::Tensor4;

/// `c[m×n] = a[m×k] · b[k×n] + beta·c`, row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows.saturating_sub(1) as isize * rs + cols.saturating_sub(1) as isize * cs) as usize + 1
    };
    if k > 0 {
        assert!(a.len() >= span(m, k, rsa, csa));
        assert!(b.len() >= span(k, n, rsb, csb));
    }
    // SAFETY: the asserts above bound every index reachable from the given
    // dimensions and strides; the output is a disjoint &mut slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn weight_of<'a>(layer: &'a LayerDesc) -> Result<&'a Tensor4> {
    layer
        .weight
        .as_ref()
        .ok_or_else(|| Error::shape(format!("{} layer", layer.kind.name()), "missing weight"))
}

/// Runs one layer forward.
pub fn layer_forward(x: &Tensor4, layer: &LayerDesc) -> Result<Tensor4> {
    match layer.kind {
        LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::PointwiseConv2d => {
            conv2d(x, layer)
        }
        LayerKind::LeakyRelu => {
            layer.output_shape(x.shape())?;
            Ok(leaky_relu(x, LEAKY_SLOPE))
        }
        LayerKind::GlobalAvgPool => {
            layer.output_shape(x.shape())?;
            Ok(global_avg_pool(x))
        }
        LayerKind::Linear => linear(x, layer),
    }
}

/// Elementwise `max(x, slope·x)` for `slope ∈ (0, 1)`.
pub fn leaky_relu(x: &Tensor4, slope: f64) -> Tensor4 {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn global_avg_pool(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor4::zeros([n, c, 1, 1]);
    for (dst, plane) in out.data_mut().iter_mut().zip(x.data().chunks(hw.max(1))) {
        *dst = plane.iter().sum::<f64>() / hw as f64;
    }
    out
}

pub fn linear(x: &Tensor4, layer: &LayerDesc) -> Result<Tensor4> {
    let out_shape = layer.output_shape(x.shape())?;
    let weight = weight_of(layer)?;
    let (n, fin, fout) = (x.n(), layer.in_channels, layer.out_channels);
    let mut out = Tensor4::zeros(out_shape);
    if let Some(bias) = &layer.bias {
        for row in out.data_mut().chunks_mut(fout) {
            row.copy_from_slice(bias);
        }
    }
    // y[n×out] = x[n×in] · Wᵀ[in×out]
    gemm(
        n,
        fin,
        fout,
        x.data(),
        (fin as isize, 1),
        weight.data(),
        (1, fin as isize),
        out.data_mut(),
        1.0,
    );
    Ok(out)
}

/// Convolution with the layer's kernel, stride, padding and grouping.
pub fn conv2d(x: &Tensor4, layer: &LayerDesc) -> Result<Tensor4> {
    let out_shape = layer.output_shape(x.shape())?;
    let weight = weight_of(layer)?;
    if layer.groups() != 1 {
        return Ok(conv2d_direct(
            x,
            weight,
            layer.bias.as_deref(),
            layer.stride,
            layer.padding,
            layer.groups(),
        ));
    }
    let geom = Geometry::new(x.shape(), layer, out_shape);
    let mut out = Tensor4::zeros(out_shape);
    let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
    let out_len = out.sample_len();
    for i in 0..x.n() {
        let src = geom.cols_for(x.sample(i), &mut cols);
        let dst = &mut out.data_mut()[i * out_len..(i + 1) * out_len];
        if let Some(bias) = &layer.bias {
            for (plane, &b) in dst.chunks_mut(geom.col_cols()).zip(bias) {
                plane.fill(b);
            }
        }
        gemm(
            geom.c_out,
            geom.col_rows(),
            geom.col_cols(),
            weight.data(),
            (geom.col_rows() as isize, 1),
            src,
            (geom.col_cols() as isize, 1),
            dst,
            1.0,
        );
    }
    Ok(out)
}

/// Straightforward nested-loop grouped convolution.
pub fn conv2d_direct(
    x: &Tensor4,
    weight: &Tensor4,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor4 {
    let [n, c_in, h, w] = x.shape();
    let [c_out, cpg_in, kh, kw] = weight.shape();
    let cpg_out = c_out / groups;
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (w + 2 * padding - kw) / stride + 1;
    debug_assert_eq!(cpg_in * groups, c_in);
    let mut out = Tensor4::zeros([n, c_out, ho, wo]);
    let data = out.data_mut();
    let mut idx = 0;
    for b in 0..n {
        for co in 0..c_out {
            let g = co / cpg_out;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bs| bs[co]);
                    for ci in 0..cpg_in {
                        let cx = g * cpg_in + ci;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x.at(b, cx, iy as usize, ix as usize)
                                    * weight.at(co, ci, ky, kx);
                            }
                        }
                    }
                    data[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    out
}

/// im2col geometry for an ungrouped convolution.
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(input: [usize; 4], layer: &LayerDesc, out: [usize; 4]) -> Self {
        Self {
            c_in: input[1],
            h: input[2],
            w: input[3],
            c_out: out[1],
            k: layer.kernel,
            stride: layer.stride,
            pad: layer.padding,
            ho: out[2],
            wo: out[3],
        }
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_identity(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Returns the column matrix for one sample, borrowing the input directly
    /// when the lowering is the identity.
    fn cols_for<'a>(&self, sample: &'a [f64], buf: &'a mut [f64]) -> &'a [f64] {
        if self.is_identity() {
            return sample;
        }
        let (k, p) = (self.k, self.col_cols());
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut buf[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &sample[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
        buf
    }

    /// Scatter-adds a column-gradient matrix back onto an input gradient.
    fn col2im(&self, cols: &[f64], grad: &mut [f64]) {
        let (k, p) = (self.k, self.col_cols());
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (ci * self.h + iy as usize) * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                grad[base + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of one parametric layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weight: Tensor4,
    pub bias: Option<Vec<f64>>,
}

/// Backward pass of one layer given its forward input and the gradient at its
/// output. Parameter gradients are returned only when `want_params` is set.
pub fn layer_backward(
    x: &Tensor4,
    layer: &LayerDesc,
    grad_out: &Tensor4,
    want_params: bool,
) -> Result<(Tensor4, Option<ParamGrad>)> {
    let expected = layer.output_shape(x.shape())?;
    if grad_out.shape() != expected {
        return Err(Error::shape(
            format!("{} backward", layer.kind.name()),
            format!("gradient shape {:?}, expected {:?}", grad_out.shape(), expected),
        ));
    }
    match layer.kind {
        LayerKind::LeakyRelu => Ok((
            x.zip_map(grad_out, |v, g| if v >= 0.0 { g } else { LEAKY_SLOPE * g })?,
            None,
        )),
        LayerKind::GlobalAvgPool => {
            let [_, _, h, w] = x.shape();
            let hw = h * w;
            let mut gx = Tensor4::zeros(x.shape());
            for (plane, &g) in gx.data_mut().chunks_mut(hw).zip(grad_out.data()) {
                plane.fill(g / hw as f64);
            }
            Ok((gx, None))
        }
        LayerKind::Linear => linear_backward(x, layer, grad_out, want_params),
        _ if layer.groups() != 1 => depthwise_backward(x, layer, grad_out, want_params),
        _ => conv_backward(x, layer, grad_out, want_params),
    }
}

fn bias_grad(layer: &LayerDesc, grad_out: &Tensor4) -> Option<Vec<f64>> {
    layer.bias.as_ref()?;
    let [n, c, h, w] = grad_out.shape();
    let hw = h * w;
    let mut gb = vec![0.0; c];
    for b in 0..n {
        for (co, g) in gb.iter_mut().enumerate() {
            let start = (b * c + co) * hw;
            *g += grad_out.data()[start..start + hw].iter().sum::<f64>();
        }
    }
    Some(gb)
}

fn linear_backward(
    x: &Tensor4,
    layer: &LayerDesc,
    grad_out: &Tensor4,
    want_params: bool,
) -> Result<(Tensor4, Option<ParamGrad>)> {
    let weight = weight_of(layer)?;
    let (n, fin, fout) = (x.n(), layer.in_channels, layer.out_channels);
    let mut gx = Tensor4::zeros(x.shape());
    // dx[n×in] = dy[n×out] · W[out×in]
    gemm(
        n,
        fout,
        fin,
        grad_out.data(),
        (fout as isize, 1),
        weight.data(),
        (fin as isize, 1),
        gx.data_mut(),
        0.0,
    );
    let params = want_params.then(|| {
        let mut gw = Tensor4::zeros(weight.shape());
        // dW[out×in] = dyᵀ[out×n] · x[n×in]
        gemm(
            fout,
            n,
            fin,
            grad_out.data(),
            (1, fout as isize),
            x.data(),
            (fin as isize, 1),
            gw.data_mut(),
            0.0,
        );
        ParamGrad {
            weight: gw,
            bias: bias_grad(layer, grad_out),
        }
    });
    Ok((gx, params))
}

fn conv_backward(
    x: &Tensor4,
    layer: &LayerDesc,
    grad_out: &Tensor4,
    want_params: bool,
) -> Result<(Tensor4, Option<ParamGrad>)> {
    let weight = weight_of(layer)?;
    let geom = Geometry::new(x.shape(), layer, grad_out.shape());
    let (kk, p) = (geom.col_rows(), geom.col_cols());
    let mut gx = Tensor4::zeros(x.shape());
    let mut gw = want_params.then(|| Tensor4::zeros(weight.shape()));
    let mut cols = vec![0.0; kk * p];
    let mut gcols = vec![0.0; kk * p];
    let in_len = x.sample_len();
    let out_len = grad_out.sample_len();
    for i in 0..x.n() {
        let dy = &grad_out.data()[i * out_len..(i + 1) * out_len];
        if let Some(gw) = gw.as_mut() {
            let src = geom.cols_for(x.sample(i), &mut cols);
            // dW[out×kk] += dy[out×p] · colsᵀ[p×kk]
            gemm(
                geom.c_out,
                p,
                kk,
                dy,
                (p as isize, 1),
                src,
                (1, p as isize),
                gw.data_mut(),
                1.0,
            );
        }
        let gxi = &mut gx.data_mut()[i * in_len..(i + 1) * in_len];
        if geom.is_identity() {
            // dx[kk×p] = Wᵀ[kk×out] · dy[out×p]
            gemm(
                kk,
                geom.c_out,
                p,
                weight.data(),
                (1, kk as isize),
                dy,
                (p as isize, 1),
                gxi,
                0.0,
            );
        } else {
            gemm(
                kk,
                geom.c_out,
                p,
                weight.data(),
                (1, kk as isize),
                dy,
                (p as isize, 1),
                &mut gcols,
                0.0,
            );
            geom.col2im(&gcols, gxi);
        }
    }
    let params = gw.map(|weight| ParamGrad {
        weight,
        bias: bias_grad(layer, grad_out),
    });
    Ok((gx, params))
}

fn depthwise_backward(
    x: &Tensor4,
    layer: &LayerDesc,
    grad_out: &Tensor4,
    want_params: bool,
) -> Result<(Tensor4, Option<ParamGrad>)> {
    let weight = weight_of(layer)?;
    let [n, c, h, w] = x.shape();
    let [_, _, ho, wo] = grad_out.shape();
    let (k, s, pad) = (layer.kernel, layer.stride, layer.padding as isize);
    let mut gx = Tensor4::zeros(x.shape());
    let mut gw = Tensor4::zeros(weight.shape());
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad_out.at(b, ch, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = x.index(b, ch, iy as usize, ix as usize);
                            let wi = gw.index(ch, 0, ky, kx);
                            gx.data_mut()[xi] += g * weight.data()[wi];
                            gw.data_mut()[wi] += g * x.data()[xi];
                        }
                    }
                }
            }
        }
    }
    let params = want_params.then(|| ParamGrad {
        weight: gw,
        bias: bias_grad(layer, grad_out),
    });
    Ok((gx, params))
}
