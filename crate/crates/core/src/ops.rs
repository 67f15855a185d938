//! Differentiable tensor operations recorded on the tape.
//!
//! Each op computes its forward value eagerly and pushes a backward closure.
//! Backward rules read parent values from the tape by index; anything else
//! they need (normalization statistics, output index) is captured.

use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push_binary("add", a, b, out, move |_, g, sink| {
            sink.add(a.index(), g.clone());
            sink.add(b.index(), g.clone());
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push_binary("sub", a, b, out, move |_, g, sink| {
            sink.add(a.index(), g.clone());
            sink.add(b.index(), g.map(|v| -v));
        }))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push_binary("mul", a, b, out, move |values, g, sink| {
            sink.add(a.index(), g.zip_map(&values[b.index()], |gv, bv| gv * bv).unwrap());
            sink.add(b.index(), g.zip_map(&values[a.index()], |gv, av| gv * av).unwrap());
        }))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push_unary("scale", a, out, move |_, g, sink| {
            sink.add(a.index(), g.map(|v| v * c));
        })
    }

    /// `x[n×d] + bias[d]` broadcast over rows.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.rank() != 2 || bv.numel() != xv.dim(1) {
            return Err(Error::dim("add_bias_row", xv.shape(), bv.shape()));
        }
        let (n, d) = (xv.dim(0), xv.dim(1));
        let mut data = xv.data().to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += bv.data()[j];
            }
        }
        let out = Tensor::new([n, d], data)?;
        Ok(self.push_binary("add_bias_row", x, bias, out, move |_, g, sink| {
            sink.add(x.index(), g.clone());
            let gd = g.data();
            let mut db = vec![T::ZERO; d];
            for i in 0..n {
                for j in 0..d {
                    db[j] += gd[i * d + j];
                }
            }
            sink.add(bias.index(), Tensor::new([d], db).unwrap());
        }))
    }

    /// Metadata-only reshape; backward restores the original shape.
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let old_shape = self.value(a).shape().to_vec();
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push_unary("reshape", a, out, move |_, g, sink| {
            sink.add(a.index(), g.clone().reshape(old_shape).unwrap());
        }))
    }

    /// Matrix product of 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0) {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.dim(0), av.dim(1), bv.dim(1));
        let mut data = vec![T::ZERO; m * n];
        gemm_nn(m, k, n, T::ONE, av.data(), bv.data(), T::ZERO, &mut data);
        let out = Tensor::new([m, n], data)?;
        Ok(self.push_binary("matmul", a, b, out, move |values, g, sink| {
            let av = &values[a.index()];
            let bv = &values[b.index()];
            let mut da = vec![T::ZERO; m * k];
            gemm_nt(m, n, k, T::ONE, g.data(), bv.data(), T::ZERO, &mut da);
            sink.add(a.index(), Tensor::new([m, k], da).unwrap());
            let mut db = vec![T::ZERO; k * n];
            gemm_tn(k, m, n, T::ONE, av.data(), g.data(), T::ZERO, &mut db);
            sink.add(b.index(), Tensor::new([k, n], db).unwrap());
        }))
    }

    /// Row-wise softmax of a 2-D tensor, max-subtracted for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::dim("softmax_rows", xv.shape(), &[]));
        }
        let (m, n) = (xv.dim(0), xv.dim(1));
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::new([m, n], data)?;
        let out_idx = self.len();
        Ok(self.push_unary("softmax_rows", x, out, move |values, g, sink| {
            let p = values[out_idx].data();
            let gd = g.data();
            let mut dx = vec![T::ZERO; m * n];
            for i in 0..m {
                let row = &p[i * n..(i + 1) * n];
                let grow = &gd[i * n..(i + 1) * n];
                let dot: T = row.iter().zip(grow).map(|(&pv, &gv)| pv * gv).sum();
                for j in 0..n {
                    dx[i * n + j] = row[j] * (grow[j] - dot);
                }
            }
            sink.add(x.index(), Tensor::new([m, n], dx).unwrap());
        }))
    }

    /// Softmax over the channel axis of a `[B,C,H,W]` tensor.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::dim("softmax_channels", xv.shape(), &[]));
        }
        let (b, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let hw = h * w;
        let mut data = xv.data().to_vec();
        for bi in 0..b {
            for s in 0..hw {
                let base = bi * c * hw + s;
                let mut maxv = data[base];
                for ci in 1..c {
                    maxv = maxv.max(data[base + ci * hw]);
                }
                let mut sum = T::ZERO;
                for ci in 0..c {
                    let e = (data[base + ci * hw] - maxv).exp();
                    data[base + ci * hw] = e;
                    sum += e;
                }
                for ci in 0..c {
                    data[base + ci * hw] /= sum;
                }
            }
        }
        let out = Tensor::new([b, c, h, w], data)?;
        let out_idx = self.len();
        Ok(self.push_unary("softmax_channels", x, out, move |values, g, sink| {
            let p = values[out_idx].data();
            let gd = g.data();
            let mut dx = vec![T::ZERO; b * c * hw];
            for bi in 0..b {
                for s in 0..hw {
                    let base = bi * c * hw + s;
                    let mut dot = T::ZERO;
                    for ci in 0..c {
                        dot += p[base + ci * hw] * gd[base + ci * hw];
                    }
                    for ci in 0..c {
                        let idx = base + ci * hw;
                        dx[idx] = p[idx] * (gd[idx] - dot);
                    }
                }
            }
            sink.add(x.index(), Tensor::new([b, c, hw / w, w], dx).unwrap());
        }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { v * slope });
        self.push_unary("leaky_relu", x, out, move |values, g, sink| {
            let dx = g
                .zip_map(&values[x.index()], |gv, xv| {
                    if xv > T::ZERO {
                        gv
                    } else {
                        gv * slope
                    }
                })
                .unwrap();
            sink.add(x.index(), dx);
        })
    }

    /// `silu(x) = x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push_unary("silu", x, out, move |values, g, sink| {
            let dx = g
                .zip_map(&values[x.index()], |gv, xv| {
                    let s = sigmoid(xv);
                    gv * s * (T::ONE + xv * (T::ONE - s))
                })
                .unwrap();
            sink.add(x.index(), dx);
        })
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_scalar);
        self.push_unary("gelu", x, out, move |values, g, sink| {
            let dx = g
                .zip_map(&values[x.index()], |gv, xv| gv * gelu_grad(xv))
                .unwrap();
            sink.add(x.index(), dx);
        })
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let s: T = self.value(x).data().iter().copied().sum();
        self.push_unary("sum_all", x, Tensor::scalar(s), move |_, g, sink| {
            let gv = g.data()[0];
            sink.add(x.index(), Tensor::full(shape.clone(), gv));
        })
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).numel();
        let s: T = self.value(x).data().iter().copied().sum();
        let inv = T::ONE / T::from_f64(n as f64);
        self.push_unary("mean_all", x, Tensor::scalar(s * inv), move |_, g, sink| {
            let gv = g.data()[0] * inv;
            sink.add(x.index(), Tensor::full(shape.clone(), gv));
        })
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or_else(|| Error::dim("layer_norm", xv.shape(), &[]))?;
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::dim("layer_norm affine", self.value(gamma).shape(), &[d]));
        }
        let shape = xv.shape().to_vec();
        let rows = xv.numel() / d;
        let epl = T::from_f64(eps);
        let gamma_d = self.value(gamma).data().to_vec();
        let beta_d = self.value(beta).data().to_vec();

        let mut data = vec![T::ZERO; rows * d];
        let mut inv_stds = vec![T::ZERO; rows];
        let mut xhat = vec![T::ZERO; rows * d];
        {
            let xd = xv.data();
            let inv_d = T::ONE / T::from_f64(d as f64);
            for r in 0..rows {
                let xs = &xd[r * d..(r + 1) * d];
                let mean: T = xs.iter().copied().sum::<T>() * inv_d;
                let var: T = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let inv_std = T::ONE / (var + epl).sqrt();
                inv_stds[r] = inv_std;
                for j in 0..d {
                    let xh = (xs[j] - mean) * inv_std;
                    xhat[r * d + j] = xh;
                    data[r * d + j] = xh * gamma_d[j] + beta_d[j];
                }
            }
        }
        let out = Tensor::new(shape.clone(), data)?;
        Ok(self.push(
            "layer_norm",
            vec![x.index(), gamma.index(), beta.index()],
            out,
            Box::new(move |_, g, sink| {
                let gd = g.data();
                let inv_d = T::ONE / T::from_f64(d as f64);
                let mut dx = vec![T::ZERO; rows * d];
                let mut dgamma = vec![T::ZERO; d];
                let mut dbeta = vec![T::ZERO; d];
                for r in 0..rows {
                    let gs = &gd[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxhat = T::ZERO;
                    let mut sum_dxhat_xhat = T::ZERO;
                    for j in 0..d {
                        let dxh = gs[j] * gamma_d[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[j];
                        dgamma[j] += gs[j] * xh[j];
                        dbeta[j] += gs[j];
                    }
                    let inv_std = inv_stds[r];
                    for j in 0..d {
                        let dxh = gs[j] * gamma_d[j];
                        dx[r * d + j] = inv_std * inv_d * (T::from_f64(d as f64) * dxh - sum_dxhat - xh[j] * sum_dxhat_xhat);
                    }
                }
                sink.add(x.index(), Tensor::new(shape.clone(), dx).unwrap());
                sink.add(gamma.index(), Tensor::new([d], dgamma).unwrap());
                sink.add(beta.index(), Tensor::new([d], dbeta).unwrap());
            }),
        ))
    }

    /// Instance normalization of `[B,C,H,W]` over each (sample, channel)
    /// spatial slice, with per-channel affine parameters.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::dim("instance_norm", xv.shape(), &[]));
        }
        let (b, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::dim("instance_norm affine", self.value(gamma).shape(), &[c]));
        }
        let hw = h * w;
        let epl = T::from_f64(eps);
        let inv_hw = T::ONE / T::from_f64(hw as f64);
        let gamma_d = self.value(gamma).data().to_vec();
        let beta_d = self.value(beta).data().to_vec();

        let xd = xv.data();
        let mut data = vec![T::ZERO; b * c * hw];
        let mut inv_stds = vec![T::ZERO; b * c];
        let mut xhat = vec![T::ZERO; b * c * hw];
        for bc in 0..b * c {
            let ci = bc % c;
            let xs = &xd[bc * hw..(bc + 1) * hw];
            let mean: T = xs.iter().copied().sum::<T>() * inv_hw;
            let var: T = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_hw;
            let inv_std = T::ONE / (var + epl).sqrt();
            inv_stds[bc] = inv_std;
            for s in 0..hw {
                let xh = (xs[s] - mean) * inv_std;
                xhat[bc * hw + s] = xh;
                data[bc * hw + s] = xh * gamma_d[ci] + beta_d[ci];
            }
        }
        let out = Tensor::new([b, c, h, w], data)?;
        Ok(self.push(
            "instance_norm",
            vec![x.index(), gamma.index(), beta.index()],
            out,
            Box::new(move |_, g, sink| {
                let gd = g.data();
                let mut dx = vec![T::ZERO; b * c * hw];
                let mut dgamma = vec![T::ZERO; c];
                let mut dbeta = vec![T::ZERO; c];
                let hw_t = T::from_f64(hw as f64);
                for bc in 0..b * c {
                    let ci = bc % c;
                    let gs = &gd[bc * hw..(bc + 1) * hw];
                    let xh = &xhat[bc * hw..(bc + 1) * hw];
                    let mut sum_dxhat = T::ZERO;
                    let mut sum_dxhat_xhat = T::ZERO;
                    for s in 0..hw {
                        let dxh = gs[s] * gamma_d[ci];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[s];
                        dgamma[ci] += gs[s] * xh[s];
                        dbeta[ci] += gs[s];
                    }
                    let inv_std = inv_stds[bc];
                    for s in 0..hw {
                        let dxh = gs[s] * gamma_d[ci];
                        dx[bc * hw + s] = inv_std * inv_hw * (hw_t * dxh - sum_dxhat - xh[s] * sum_dxhat_xhat);
                    }
                }
                sink.add(x.index(), Tensor::new([b, c, h, w], dx).unwrap());
                sink.add(gamma.index(), Tensor::new([c], dgamma).unwrap());
                sink.add(beta.index(), Tensor::new([c], dbeta).unwrap());
            }),
        ))
    }

    /// Take columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.dim(1) {
            return Err(Error::dim("slice_cols", xv.shape(), &[start, len]));
        }
        let (n, d) = (xv.dim(0), xv.dim(1));
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&xv.data()[i * d + start..i * d + start + len]);
        }
        let out = Tensor::new([n, len], data)?;
        Ok(self.push_unary("slice_cols", x, out, move |_, g, sink| {
            let mut dx = vec![T::ZERO; n * d];
            let gd = g.data();
            for i in 0..n {
                dx[i * d + start..i * d + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
            }
            sink.add(x.index(), Tensor::new([n, d], dx).unwrap());
        }))
    }

    /// Take rows `[start, start+len)` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.dim(0) {
            return Err(Error::dim("slice_rows", xv.shape(), &[start, len]));
        }
        let (n, d) = (xv.dim(0), xv.dim(1));
        let data = xv.data()[start * d..(start + len) * d].to_vec();
        let out = Tensor::new([len, d], data)?;
        Ok(self.push_unary("slice_rows", x, out, move |_, g, sink| {
            let mut dx = vec![T::ZERO; n * d];
            dx[start * d..(start + len) * d].copy_from_slice(g.data());
            sink.add(x.index(), Tensor::new([n, d], dx).unwrap());
        }))
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Validation("concat_cols of zero tensors".into()));
        }
        let n = self.value(parts[0]).dim(0);
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dim(1)).collect();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.dim(0) != n {
                return Err(Error::dim("concat_cols", v.shape(), &[n]));
            }
        }
        let d: usize = widths.iter().sum();
        let mut data = vec![T::ZERO; n * d];
        let mut col = 0;
        for (&p, &wid) in parts.iter().zip(&widths) {
            let pd = self.value(p).data();
            for i in 0..n {
                data[i * d + col..i * d + col + wid].copy_from_slice(&pd[i * wid..(i + 1) * wid]);
            }
            col += wid;
        }
        let out = Tensor::new([n, d], data)?;
        let parents: Vec<usize> = parts.iter().map(|p| p.index()).collect();
        let parent_ids = parents.clone();
        Ok(self.push(
            "concat_cols",
            parents,
            out,
            Box::new(move |_, g, sink| {
                let gd = g.data();
                let mut col = 0;
                for (&pid, &wid) in parent_ids.iter().zip(&widths) {
                    let mut dp = vec![T::ZERO; n * wid];
                    for i in 0..n {
                        dp[i * wid..(i + 1) * wid].copy_from_slice(&gd[i * d + col..i * d + col + wid]);
                    }
                    sink.add(pid, Tensor::new([n, wid], dp).unwrap());
                    col += wid;
                }
            }),
        ))
    }

    /// Concatenate two `[B,C,H,W]` tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.rank() != 4
            || bv.rank() != 4
            || av.dim(0) != bv.dim(0)
            || av.dim(2) != bv.dim(2)
            || av.dim(3) != bv.dim(3)
        {
            return Err(Error::dim("concat_channels", av.shape(), bv.shape()));
        }
        let (bs, ca, cb) = (av.dim(0), av.dim(1), bv.dim(1));
        let hw = av.dim(2) * av.dim(3);
        let (h, w) = (av.dim(2), av.dim(3));
        let mut data = vec![T::ZERO; bs * (ca + cb) * hw];
        for bi in 0..bs {
            let dst = &mut data[bi * (ca + cb) * hw..];
            dst[..ca * hw].copy_from_slice(&av.data()[bi * ca * hw..(bi + 1) * ca * hw]);
            dst[ca * hw..(ca + cb) * hw].copy_from_slice(&bv.data()[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        let out = Tensor::new([bs, ca + cb, h, w], data)?;
        Ok(self.push_binary("concat_channels", a, b, out, move |_, g, sink| {
            let gd = g.data();
            let mut da = vec![T::ZERO; bs * ca * hw];
            let mut db = vec![T::ZERO; bs * cb * hw];
            for bi in 0..bs {
                let src = &gd[bi * (ca + cb) * hw..];
                da[bi * ca * hw..(bi + 1) * ca * hw].copy_from_slice(&src[..ca * hw]);
                db[bi * cb * hw..(bi + 1) * cb * hw].copy_from_slice(&src[ca * hw..(ca + cb) * hw]);
            }
            sink.add(a.index(), Tensor::new([bs, ca, h, w], da).unwrap());
            sink.add(b.index(), Tensor::new([bs, cb, h, w], db).unwrap());
        }))
    }

    /// `[B,HW,C] -> [B,C,H,W]` token-to-image permutation.
    pub fn tokens_to_image(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 || xv.dim(1) != h * w {
            return Err(Error::dim("tokens_to_image", xv.shape(), &[h, w]));
        }
        let (b, n, c) = (xv.dim(0), xv.dim(1), xv.dim(2));
        let xd = xv.data();
        let mut data = vec![T::ZERO; b * c * n];
        for bi in 0..b {
            for s in 0..n {
                for ci in 0..c {
                    data[bi * c * n + ci * n + s] = xd[bi * n * c + s * c + ci];
                }
            }
        }
        let out = Tensor::new([b, c, h, w], data)?;
        Ok(self.push_unary("tokens_to_image", x, out, move |_, g, sink| {
            let gd = g.data();
            let mut dx = vec![T::ZERO; b * n * c];
            for bi in 0..b {
                for s in 0..n {
                    for ci in 0..c {
                        dx[bi * n * c + s * c + ci] = gd[bi * c * n + ci * n + s];
                    }
                }
            }
            sink.add(x.index(), Tensor::new([b, n, c], dx).unwrap());
        }))
    }

    /// `[B,C,H,W] -> [B,HW,C]` image-to-token permutation.
    pub fn image_to_tokens(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::dim("image_to_tokens", xv.shape(), &[]));
        }
        let (b, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let n = h * w;
        let xd = xv.data();
        let mut data = vec![T::ZERO; b * n * c];
        for bi in 0..b {
            for ci in 0..c {
                for s in 0..n {
                    data[bi * n * c + s * c + ci] = xd[bi * c * n + ci * n + s];
                }
            }
        }
        let out = Tensor::new([b, n, c], data)?;
        Ok(self.push_unary("image_to_tokens", x, out, move |_, g, sink| {
            let gd = g.data();
            let mut dx = vec![T::ZERO; b * c * n];
            for bi in 0..b {
                for ci in 0..c {
                    for s in 0..n {
                        dx[bi * c * n + ci * n + s] = gd[bi * n * c + s * c + ci];
                    }
                }
            }
            sink.add(x.index(), Tensor::new([b, c, h, w], dx).unwrap());
        }))
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

#[inline]
fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + k * x.powi(3))).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c * (x + k * x.powi(3));
    let t = inner.tanh();
    let sech2 = T::ONE - t * t;
    let d_inner = c * (T::ONE + three * k * x * x);
    half * (T::ONE + t) + half * x * sech2 * d_inner
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let mut maxv = row[0];
    for &v in row.iter() {
        maxv = maxv.max(v);
    }
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - maxv).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
