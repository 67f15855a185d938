//! 2-D convolution (cross-correlation), grouped and depthwise variants, and
//! transposed convolution.
//!
//! Plain and grouped convolutions lower to im2col + GEMM; depthwise 3x3 gets
//! a direct loop. Transposed convolution is implemented as the linear adjoint
//! of convolution, which its gradient tests pin down via the inner-product
//! identity.

use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec { stride, padding, groups }
    }

    pub fn plain(stride: usize, padding: usize) -> Self {
        ConvSpec::new(stride, padding, 1)
    }
}

/// Output extent of one spatial axis, or an error when the kernel does not
/// fit the padded input.
fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return Err(Error::Validation(format!(
            "kernel {kernel} (stride {stride}) does not fit padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Scatter input patches into a `[C*kh*kw, OH*OW]` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src_row = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[dst_row + ix as usize] += col[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}

struct ConvDims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_conv<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, spec: ConvSpec) -> Result<ConvDims> {
    if x.rank() != 4 || k.rank() != 4 {
        return Err(Error::dim("conv2d", x.shape(), k.shape()));
    }
    let (b, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, kc, kh, kw) = (k.dim(0), k.dim(1), k.dim(2), k.dim(3));
    let g = spec.groups;
    if g == 0 || cin % g != 0 || cout % g != 0 || kc != cin / g {
        return Err(Error::dim("conv2d channels/groups", x.shape(), k.shape()));
    }
    let oh = out_extent(h, kh, spec.stride, spec.padding)?;
    let ow = out_extent(w, kw, spec.stride, spec.padding)?;
    Ok(ConvDims { b, cin, h, w, cout, kh, kw, oh, ow })
}

/// Forward convolution, shared by the tape op and the standalone kernels.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, spec: ConvSpec) -> Result<Tensor<T>> {
    let d = check_conv(x, kernel, spec)?;
    let g = spec.groups;
    if g == d.cin && d.cout == d.cin && d.cin > 1 {
        return depthwise_forward(x, kernel, spec, &d);
    }
    let (cg, og) = (d.cin / g, d.cout / g);
    let kdim = cg * d.kh * d.kw;
    let ohw = d.oh * d.ow;
    let mut out = vec![T::ZERO; d.b * d.cout * ohw];
    let mut col = vec![T::ZERO; kdim * ohw];
    for bi in 0..d.b {
        for gi in 0..g {
            let xs = &x.data()[(bi * d.cin + gi * cg) * d.h * d.w..(bi * d.cin + (gi + 1) * cg) * d.h * d.w];
            im2col(xs, cg, d.h, d.w, d.kh, d.kw, spec.stride, spec.padding, d.oh, d.ow, &mut col);
            let wk = &kernel.data()[gi * og * kdim..(gi + 1) * og * kdim];
            let dst = &mut out[(bi * d.cout + gi * og) * ohw..(bi * d.cout + (gi + 1) * og) * ohw];
            gemm_nn(og, kdim, ohw, T::ONE, wk, &col, T::ZERO, dst);
        }
    }
    Tensor::new([d.b, d.cout, d.oh, d.ow], out)
}

fn depthwise_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    spec: ConvSpec,
    d: &ConvDims,
) -> Result<Tensor<T>> {
    let mut out = vec![T::ZERO; d.b * d.cout * d.oh * d.ow];
    let (kh, kw) = (d.kh, d.kw);
    for bc in 0..d.b * d.cin {
        let ci = bc % d.cin;
        let xs = &x.data()[bc * d.h * d.w..(bc + 1) * d.h * d.w];
        let ks = &kernel.data()[ci * kh * kw..(ci + 1) * kh * kw];
        let dst = &mut out[bc * d.oh * d.ow..(bc + 1) * d.oh * d.ow];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut acc = T::ZERO;
                for ki in 0..kh {
                    let iy = (oy * spec.stride + ki) as isize - spec.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kj in 0..kw {
                        let ix = (ox * spec.stride + kj) as isize - spec.padding as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        acc = xs[iy as usize * d.w + ix as usize].mul_add(ks[ki * kw + kj], acc);
                    }
                }
                dst[oy * d.ow + ox] = acc;
            }
        }
    }
    Tensor::new([d.b, d.cout, d.oh, d.ow], out)
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    spec: ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = check_conv(x, kernel, spec)?;
    let g = spec.groups;
    let (cg, og) = (d.cin / g, d.cout / g);
    let kdim = cg * d.kh * d.kw;
    let ohw = d.oh * d.ow;
    let mut dx = vec![T::ZERO; x.numel()];
    let mut dk = vec![T::ZERO; kernel.numel()];
    let mut col = vec![T::ZERO; kdim * ohw];
    let mut dcol = vec![T::ZERO; kdim * ohw];
    for bi in 0..d.b {
        for gi in 0..g {
            let xs = &x.data()[(bi * d.cin + gi * cg) * d.h * d.w..(bi * d.cin + (gi + 1) * cg) * d.h * d.w];
            im2col(xs, cg, d.h, d.w, d.kh, d.kw, spec.stride, spec.padding, d.oh, d.ow, &mut col);
            let gy = &grad_out.data()[(bi * d.cout + gi * og) * ohw..(bi * d.cout + (gi + 1) * og) * ohw];
            // dW += gy · colᵀ
            let dw = &mut dk[gi * og * kdim..(gi + 1) * og * kdim];
            gemm_nt(og, ohw, kdim, T::ONE, gy, &col, T::ONE, dw);
            // dcol = Wᵀ · gy, scattered back into dx
            let wk = &kernel.data()[gi * og * kdim..(gi + 1) * og * kdim];
            gemm_tn(kdim, og, ohw, T::ONE, wk, gy, T::ZERO, &mut dcol);
            let dxs = &mut dx[(bi * d.cin + gi * cg) * d.h * d.w..(bi * d.cin + (gi + 1) * cg) * d.h * d.w];
            col2im_add(&dcol, cg, d.h, d.w, d.kh, d.kw, spec.stride, spec.padding, d.oh, d.ow, dxs);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
    ))
}

struct ConvTDims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_convt<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvTDims> {
    if x.rank() != 4 || k.rank() != 4 || k.dim(0) != x.dim(1) {
        return Err(Error::dim("conv_transpose2d", x.shape(), k.shape()));
    }
    let (b, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, kh, kw) = (k.dim(1), k.dim(2), k.dim(3));
    if stride == 0 {
        return Err(Error::Validation("conv_transpose2d stride must be positive".into()));
    }
    let oh_full = (h - 1) * stride + kh;
    let ow_full = (w - 1) * stride + kw;
    if oh_full < 2 * pad + 1 || ow_full < 2 * pad + 1 {
        return Err(Error::Validation(format!(
            "conv_transpose2d padding {pad} exceeds output extent {oh_full}x{ow_full}"
        )));
    }
    Ok(ConvTDims {
        b,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh: oh_full - 2 * pad,
        ow: ow_full - 2 * pad,
    })
}

/// Transposed convolution: the adjoint of `conv2d` with the same geometry.
/// Kernel layout is `[Cin, Cout, kh, kw]`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = check_convt(x, kernel, stride, pad)?;
    let kdim = d.cout * d.kh * d.kw;
    let hw = d.h * d.w;
    let mut out = vec![T::ZERO; d.b * d.cout * d.oh * d.ow];
    let mut col = vec![T::ZERO; kdim * hw];
    for bi in 0..d.b {
        let xs = &x.data()[bi * d.cin * hw..(bi + 1) * d.cin * hw];
        // col = Wᵀ(row-major [cin, kdim]) · x  -> [kdim, hw]
        gemm_tn(kdim, d.cin, hw, T::ONE, kernel.data(), xs, T::ZERO, &mut col);
        let dst = &mut out[bi * d.cout * d.oh * d.ow..(bi + 1) * d.cout * d.oh * d.ow];
        col2im_add(&col, d.cout, d.oh, d.ow, d.kh, d.kw, stride, pad, d.h, d.w, dst);
    }
    Tensor::new([d.b, d.cout, d.oh, d.ow], out)
}

/// Gradients of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = check_convt(x, kernel, stride, pad)?;
    let kdim = d.cout * d.kh * d.kw;
    let hw = d.h * d.w;
    let mut dx = vec![T::ZERO; x.numel()];
    let mut dk = vec![T::ZERO; kernel.numel()];
    let mut col = vec![T::ZERO; kdim * hw];
    for bi in 0..d.b {
        let gy = &grad_out.data()[bi * d.cout * d.oh * d.ow..(bi + 1) * d.cout * d.oh * d.ow];
        im2col(gy, d.cout, d.oh, d.ow, d.kh, d.kw, stride, pad, d.h, d.w, &mut col);
        // dx = W [cin, kdim] · col
        let dxs = &mut dx[bi * d.cin * hw..(bi + 1) * d.cin * hw];
        gemm_nn(d.cin, kdim, hw, T::ONE, kernel.data(), &col, T::ZERO, dxs);
        // dW += x · colᵀ
        let xs = &x.data()[bi * d.cin * hw..(bi + 1) * d.cin * hw];
        gemm_nt(d.cin, hw, kdim, T::ONE, xs, &col, T::ONE, &mut dk);
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
    ))
}

impl<T: Scalar> Tape<T> {
    /// Grouped 2-D convolution with optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let mut out = conv2d_forward(self.value(x), self.value(kernel), spec)?;
        let (b, cout) = (out.dim(0), out.dim(1));
        let ohw = out.dim(2) * out.dim(3);
        if let Some(bv) = bias {
            let bd = self.value(bv);
            if bd.numel() != cout {
                return Err(Error::dim("conv2d bias", bd.shape(), &[cout]));
            }
            let bdat = bd.data().to_vec();
            for bi in 0..b {
                for ci in 0..cout {
                    for v in &mut out.data_mut()[(bi * cout + ci) * ohw..(bi * cout + ci + 1) * ohw] {
                        *v += bdat[ci];
                    }
                }
            }
        }
        let mut parents = vec![x.index(), kernel.index()];
        if let Some(bv) = bias {
            parents.push(bv.index());
        }
        Ok(self.push(
            "conv2d",
            parents,
            out,
            Box::new(move |values, g, sink| {
                let (dx, dk) =
                    conv2d_backward(&values[x.index()], &values[kernel.index()], spec, g).unwrap();
                sink.add(x.index(), dx);
                sink.add(kernel.index(), dk);
                if let Some(bv) = bias {
                    let gd = g.data();
                    let mut db = vec![T::ZERO; cout];
                    for bi in 0..b {
                        for ci in 0..cout {
                            db[ci] += gd[(bi * cout + ci) * ohw..(bi * cout + ci + 1) * ohw]
                                .iter()
                                .copied()
                                .sum();
                        }
                    }
                    sink.add(bv.index(), Tensor::new([cout], db).unwrap());
                }
            }),
        ))
    }

    /// Transposed 2-D convolution (kernel `[Cin, Cout, kh, kw]`).
    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv_transpose2d_forward(self.value(x), self.value(kernel), stride, pad)?;
        Ok(self.push_binary("conv_transpose2d", x, kernel, out, move |values, g, sink| {
            let (dx, dk) = conv_transpose2d_backward(
                &values[x.index()],
                &values[kernel.index()],
                stride,
                pad,
                g,
            )
            .unwrap();
            sink.add(x.index(), dx);
            sink.add(kernel.index(), dk);
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Direct six-loop convolution, the oracle for the GEMM path.
    fn conv_oracle(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Tensor<f64> {
        let (b, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, cg, kh, kw) = (k.dim(0), k.dim(1), k.dim(2), k.dim(3));
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let og = cout / groups;
        let mut out = Tensor::zeros([b, cout, oh, ow]);
        for bi in 0..b {
            for co in 0..cout {
                let gi = co / og;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cg {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((bi * cin + gi * cg + ci) * h + iy as usize) * w
                                        + ix as usize;
                                    let kiidx = ((co * cg + ci) * kh + ki) * kw + kj;
                                    acc += x.data()[xi] * k.data()[kiidx];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = SplitMix64::new(1);
        let x = Tensor::<f64>::randn([1, 1, 5, 5], 0.0, 1.0, &mut rng);
        let k = Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &k, ConvSpec::plain(1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn box_filter_on_constant() {
        let c = 0.7;
        let x = Tensor::<f64>::full([1, 1, 6, 6], c);
        let k = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, ConvSpec::plain(1, 1)).unwrap();
        // Interior of the padded box filter sums nine copies of c.
        assert!((y.data()[1 * 6 + 1] - 9.0 * c).abs() < 1e-12);
        assert!((y.data()[0] - 4.0 * c).abs() < 1e-12); // corner sees 4 cells
    }

    #[test]
    fn gemm_path_matches_loop_oracle() {
        let mut rng = SplitMix64::new(7);
        let x = Tensor::<f64>::randn([1, 2, 5, 5], 0.0, 1.0, &mut rng);
        let k = Tensor::<f64>::randn([3, 2, 3, 3], 0.0, 1.0, &mut rng);
        let y = conv2d_forward(&x, &k, ConvSpec::plain(1, 1)).unwrap();
        let o = conv_oracle(&x, &k, 1, 1, 1);
        assert!(y.max_abs_diff(&o) < 1e-10, "diff {}", y.max_abs_diff(&o));
    }

    #[test]
    fn strided_and_grouped_match_oracle() {
        let mut rng = SplitMix64::new(11);
        for &(groups, cin, cout) in &[(1usize, 4usize, 6usize), (2, 4, 6), (4, 4, 4)] {
            let x = Tensor::<f64>::randn([2, cin, 7, 9], 0.0, 1.0, &mut rng);
            let k = Tensor::<f64>::randn([cout, cin / groups, 3, 3], 0.0, 1.0, &mut rng);
            let spec = ConvSpec::new(2, 1, groups);
            let y = conv2d_forward(&x, &k, spec).unwrap();
            let o = conv_oracle(&x, &k, 2, 1, groups);
            assert!(y.max_abs_diff(&o) < 1e-10, "groups={groups}");
        }
    }

    #[test]
    fn kernel_larger_than_padded_input_errors() {
        let x = Tensor::<f64>::zeros([1, 1, 3, 3]);
        let k = Tensor::<f64>::zeros([1, 1, 5, 5]);
        assert!(conv2d_forward(&x, &k, ConvSpec::plain(1, 0)).is_err());
    }

    #[test]
    fn transpose_unit_kernel_identity() {
        let mut rng = SplitMix64::new(3);
        let x = Tensor::<f64>::randn([1, 2, 4, 4], 0.0, 1.0, &mut rng);
        let mut k = Tensor::<f64>::zeros([2, 2, 1, 1]);
        k.data_mut()[0] = 1.0; // channel 0 -> 0
        k.data_mut()[3] = 1.0; // channel 1 -> 1
        let y = conv_transpose2d_forward(&x, &k, 1, 0).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn transpose_stride2_tiles_blocks() {
        // 2x2 unit kernel, stride 2: each input value becomes a 2x2 block.
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full([1, 1, 2, 2], 1.0);
        let y = conv_transpose2d_forward(&x, &k, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let expect = [
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expect);
    }

    /// ⟨conv(x), y⟩ must equal ⟨x, convT(y)⟩: conv_transpose is the adjoint.
    #[test]
    fn adjoint_identity() {
        let mut rng = SplitMix64::new(21);
        for _ in 0..5 {
            let x = Tensor::<f64>::randn([1, 3, 8, 8], 0.0, 1.0, &mut rng);
            let k = Tensor::<f64>::randn([4, 3, 3, 3], 0.0, 1.0, &mut rng);
            let spec = ConvSpec::plain(2, 1);
            let cx = conv2d_forward(&x, &k, spec).unwrap();
            let y = Tensor::<f64>::randn(cx.shape().to_vec(), 0.0, 1.0, &mut rng);
            // conv kernel [cout, cin, kh, kw] doubles as the transposed kernel
            // [cin_t = cout, cout_t = cin, kh, kw] with identical layout.
            let cty = conv_transpose2d_forward(&y, &k, 2, 1).unwrap();
            assert_eq!(cty.shape(), x.shape());
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(cty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-8, "adjoint mismatch {lhs} vs {rhs}");
        }
    }

    #[test]
    fn depthwise_matches_grouped_oracle() {
        let mut rng = SplitMix64::new(31);
        let x = Tensor::<f64>::randn([2, 5, 6, 6], 0.0, 1.0, &mut rng);
        let k = Tensor::<f64>::randn([5, 1, 3, 3], 0.0, 1.0, &mut rng);
        let y = conv2d_forward(&x, &k, ConvSpec::new(1, 1, 5)).unwrap();
        let o = conv_oracle(&x, &k, 1, 1, 5);
        assert!(y.max_abs_diff(&o) < 1e-10);
    }
}
