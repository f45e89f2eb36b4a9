//! 2-d convolution, transposed convolution and their gradients, lowered to
//! GEMM through im2col/col2im.

use super::Tensor;
use ndarray::{Array2, ArrayD, ArrayView2, Ix2, Ix4, IxDyn};

#[derive(Debug, Clone, Copy)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvT2dSpec {
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

pub(crate) fn conv_out_size(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

/// Unfold one [C, H, W] item (given as a flat slice) into [C*k*k, Ho*Wo].
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize) -> Array2<f64> {
    let ho = conv_out_size(h, k, s, p);
    let wo = conv_out_size(w, k, s, p);
    let mut col = Array2::zeros((c * k * k, ho * wo));
    let cs = col.as_slice_mut().unwrap();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let rbase = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xbase = ci * h * w + iy as usize * w;
                    let obase = rbase + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cs[obase + ox] = x[xbase + ix as usize];
                    }
                }
            }
        }
    }
    col
}

/// Fold [C*k*k, Ho*Wo] back into [C, H, W] (flat slice), accumulating
/// overlapping windows. The adjoint of `im2col`.
fn col2im(
    col: &ArrayView2<f64>,
    out: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
) {
    let ho = conv_out_size(h, k, s, p);
    let wo = conv_out_size(w, k, s, p);
    let cs = col.as_slice().expect("col2im: non-contiguous col");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let rbase = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xbase = ci * h * w + iy as usize * w;
                    let obase = rbase + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[xbase + ix as usize] += cs[obase + ox];
                    }
                }
            }
        }
    }
}

fn item_slice(a: &ArrayD<f64>, n: usize, len: usize) -> &[f64] {
    &a.as_slice().expect("expected standard layout")[n * len..(n + 1) * len]
}

impl Tensor {
    /// Convolution of NCHW input with [Cout, Cin, k, k] weights.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, spec: Conv2dSpec) -> Tensor {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [Cout, Cin, k, k]");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        assert_eq!(ws[2], ws[3], "conv2d: square kernels only");
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(bias.shape(), &[cout]);
        let (s, p) = (spec.stride, spec.pad);
        let ho = conv_out_size(h, k, s, p);
        let wo = conv_out_size(w, k, s, p);

        let w2 = weight
            .value()
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .unwrap();
        let mut out = ArrayD::zeros(IxDyn(&[n, cout, ho, wo]));
        {
            let os = out.as_slice_mut().unwrap();
            let bv = bias.value().as_slice().unwrap();
            for ni in 0..n {
                let col = im2col(item_slice(self.value(), ni, cin * h * w), cin, h, w, k, s, p);
                let y = w2.dot(&col); // [Cout, Ho*Wo]
                let ys = y.as_slice().unwrap();
                let base = ni * cout * ho * wo;
                for co in 0..cout {
                    let b = bv[co];
                    let src = &ys[co * ho * wo..(co + 1) * ho * wo];
                    let dst = &mut os[base + co * ho * wo..base + (co + 1) * ho * wo];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + b;
                    }
                }
            }
        }

        let (xc, wc) = (self.clone(), weight.clone());
        Tensor::from_op(
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g| {
                let gw_needed = true;
                let w2 = wc
                    .value()
                    .view()
                    .into_shape_with_order((cout, cin * k * k))
                    .unwrap();
                let mut gx = ArrayD::zeros(IxDyn(&[n, cin, h, w]));
                let mut gw2 = Array2::<f64>::zeros((cout, cin * k * k));
                let mut gb = ArrayD::zeros(IxDyn(&[cout]));
                {
                    let gxs = gx.as_slice_mut().unwrap();
                    for ni in 0..n {
                        let gy = ndarray::ArrayView2::from_shape(
                            (cout, ho * wo),
                            item_slice(g, ni, cout * ho * wo),
                        )
                        .unwrap();
                        // dX = col2im(W^T . dY)
                        let dcol = w2.t().dot(&gy);
                        col2im(
                            &dcol.view(),
                            &mut gxs[ni * cin * h * w..(ni + 1) * cin * h * w],
                            cin,
                            h,
                            w,
                            k,
                            s,
                            p,
                        );
                        if gw_needed {
                            let col =
                                im2col(item_slice(xc.value(), ni, cin * h * w), cin, h, w, k, s, p);
                            gw2 += &gy.dot(&col.t());
                        }
                        for co in 0..cout {
                            gb[[co]] += gy.row(co).sum();
                        }
                    }
                }
                let gw = gw2
                    .into_shape_with_order(IxDyn(&[cout, cin, k, k]))
                    .unwrap();
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        )
    }

    /// Transposed convolution of NCHW input with [Cin, Cout, k, k] weights.
    /// Output size is (H-1)*stride - 2*pad + k + out_pad per axis.
    pub fn conv_transpose2d(&self, weight: &Tensor, bias: &Tensor, spec: ConvT2dSpec) -> Tensor {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4);
        assert_eq!(ws.len(), 4, "conv_transpose2d: weight must be [Cin, Cout, k, k]");
        assert_eq!(xs[1], ws[0], "conv_transpose2d: channel mismatch");
        assert_eq!(ws[2], ws[3]);
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[1], ws[2]);
        assert_eq!(bias.shape(), &[cout]);
        let (s, p, op) = (spec.stride, spec.pad, spec.out_pad);
        let hout = (h - 1) * s + k + op - 2 * p;
        let wout = (w - 1) * s + k + op - 2 * p;
        // the forward scatter is exactly col2im for a conv from (hout, wout)
        // down to (h, w); verify the geometry is consistent
        assert_eq!(conv_out_size(hout, k, s, p), h, "conv_transpose2d geometry");
        assert_eq!(conv_out_size(wout, k, s, p), w, "conv_transpose2d geometry");

        let w2 = weight
            .value()
            .view()
            .into_shape_with_order((cin, cout * k * k))
            .unwrap();
        let mut out = ArrayD::zeros(IxDyn(&[n, cout, hout, wout]));
        {
            let os = out.as_slice_mut().unwrap();
            let bv = bias.value().as_slice().unwrap();
            for ni in 0..n {
                let x2 = ndarray::ArrayView2::from_shape(
                    (cin, h * w),
                    item_slice(self.value(), ni, cin * h * w),
                )
                .unwrap();
                let col = w2.t().dot(&x2); // [Cout*k*k, H*W]
                col2im(
                    &col.view(),
                    &mut os[ni * cout * hout * wout..(ni + 1) * cout * hout * wout],
                    cout,
                    hout,
                    wout,
                    k,
                    s,
                    p,
                );
                let base = ni * cout * hout * wout;
                for co in 0..cout {
                    let b = bv[co];
                    for v in &mut os[base + co * hout * wout..base + (co + 1) * hout * wout] {
                        *v += b;
                    }
                }
            }
        }

        let (xc, wc) = (self.clone(), weight.clone());
        Tensor::from_op(
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g| {
                let w2 = wc
                    .value()
                    .view()
                    .into_shape_with_order((cin, cout * k * k))
                    .unwrap();
                let mut gx = ArrayD::zeros(IxDyn(&[n, cin, h, w]));
                let mut gw2 = Array2::<f64>::zeros((cin, cout * k * k));
                let mut gb = ArrayD::zeros(IxDyn(&[cout]));
                {
                    let gxs = gx.as_slice_mut().unwrap();
                    for ni in 0..n {
                        // dX = W . im2col(dY); dW = X . im2col(dY)^T
                        let dcol = im2col(
                            item_slice(g, ni, cout * hout * wout),
                            cout,
                            hout,
                            wout,
                            k,
                            s,
                            p,
                        );
                        let dx = w2.dot(&dcol);
                        gxs[ni * cin * h * w..(ni + 1) * cin * h * w]
                            .copy_from_slice(dx.as_slice().unwrap());
                        let x2 = ndarray::ArrayView2::from_shape(
                            (cin, h * w),
                            item_slice(xc.value(), ni, cin * h * w),
                        )
                        .unwrap();
                        gw2 += &x2.dot(&dcol.t());
                        let gslice = item_slice(g, ni, cout * hout * wout);
                        for co in 0..cout {
                            gb[[co]] += gslice[co * hout * wout..(co + 1) * hout * wout]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                }
                let gw = gw2
                    .into_shape_with_order(IxDyn(&[cin, cout, k, k]))
                    .unwrap();
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn ramp(shape: [usize; 4]) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| (i as f64) * 0.01 - 0.3).collect();
        Tensor::constant(Array4::from_shape_vec(shape, v).unwrap().into_dyn())
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = ramp([1, 1, 4, 4]);
        // 1x1 kernel with weight 1 reproduces the input
        let w = Tensor::constant(Array4::from_elem([1, 1, 1, 1], 1.0).into_dyn());
        let b = Tensor::constant(ndarray::arr1(&[0.0]).into_dyn());
        let y = x.conv2d(&w, &b, Conv2dSpec { stride: 1, pad: 0 });
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn conv2d_shapes_stride2() {
        let x = ramp([2, 3, 8, 8]);
        let w = Tensor::constant(Array4::from_elem([5, 3, 3, 3], 0.1).into_dyn());
        let b = Tensor::constant(ndarray::Array1::zeros(5).into_dyn());
        let y = x.conv2d(&w, &b, Conv2dSpec { stride: 2, pad: 1 });
        assert_eq!(y.shape(), &[2, 5, 4, 4]);
    }

    #[test]
    fn conv_transpose_doubles_spatial() {
        let x = ramp([1, 4, 5, 7]);
        let w = Tensor::constant(Array4::from_elem([4, 2, 3, 3], 0.05).into_dyn());
        let b = Tensor::constant(ndarray::Array1::zeros(2).into_dyn());
        let y = x.conv_transpose2d(
            &w,
            &b,
            ConvT2dSpec { stride: 2, pad: 1, out_pad: 1 },
        );
        assert_eq!(y.shape(), &[1, 2, 10, 14]);
    }

    #[test]
    fn conv2d_matches_direct_computation() {
        // 2x2 input, 3x3 kernel, pad 1: verify one output element by hand
        let x = Tensor::constant(
            Array4::from_shape_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .into_dyn(),
        );
        let w = Tensor::constant(Array4::from_elem([1, 1, 3, 3], 1.0).into_dyn());
        let b = Tensor::constant(ndarray::arr1(&[0.5]).into_dyn());
        let y = x.conv2d(&w, &b, Conv2dSpec { stride: 1, pad: 1 });
        // every output = sum of in-bounds neighbors + bias
        assert_eq!(y.value()[[0, 0, 0, 0]], 1.0 + 2.0 + 3.0 + 4.0 + 0.5);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
    }
}
