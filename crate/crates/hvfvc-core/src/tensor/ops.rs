//! Elementwise, reduction, shape and probability ops on [`Tensor`].

use super::Tensor;
use crate::math::{normal_mass, normal_pdf};
use ndarray::{ArrayD, Axis, Ix2, IxDyn};

impl Tensor {
    fn unary(
        &self,
        value: ArrayD<f64>,
        dfn: impl Fn(&ArrayD<f64>) -> ArrayD<f64> + 'static,
    ) -> Tensor {
        let x = self.clone();
        Tensor::from_op(value, vec![self.clone()], {
            Box::new(move |g| {
                let d = dfn(x.value());
                vec![Some(g * &d)]
            })
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape(), rhs.shape(), "add: shape mismatch");
        Tensor::from_op(
            self.value() + rhs.value(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape(), rhs.shape(), "sub: shape mismatch");
        Tensor::from_op(
            self.value() - rhs.value(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![Some(g.clone()), Some(-g)]),
        )
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape(), rhs.shape(), "mul: shape mismatch");
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::from_op(
            self.value() * rhs.value(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![Some(g * b.value()), Some(g * a.value())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        Tensor::from_op(
            self.value() + c,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.clone())]),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        Tensor::from_op(
            self.value() * c,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * c)]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    /// 1 - x, the confidence complement.
    pub fn one_minus(&self) -> Tensor {
        self.neg().add_scalar(1.0)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(self.value().mapv(|v| v.max(0.0)), |x| {
            x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            self.value().mapv(|v| if v > 0.0 { v } else { slope * v }),
            move |x| x.mapv(|v| if v > 0.0 { 1.0 } else { slope }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let y = self.value().mapv(stable_sigmoid);
        let yc = y.clone();
        Tensor::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &(&yc * &yc.mapv(|v| 1.0 - v)))]),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let y = self.value().mapv(f64::tanh);
        let yc = y.clone();
        Tensor::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &yc.mapv(|v| 1.0 - v * v))]),
        )
    }

    pub fn exp(&self) -> Tensor {
        let y = self.value().mapv(f64::exp);
        let yc = y.clone();
        Tensor::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g * &yc)]),
        )
    }

    /// log(1 + e^x), computed stably.
    pub fn softplus(&self) -> Tensor {
        self.unary(self.value().mapv(stable_softplus), |x| {
            x.mapv(stable_sigmoid)
        })
    }

    pub fn abs(&self) -> Tensor {
        self.unary(self.value().mapv(f64::abs), |x| x.mapv(|v| v.signum()))
    }

    pub fn square(&self) -> Tensor {
        self.unary(self.value().mapv(|v| v * v), |x| x * 2.0)
    }

    /// Elementwise max(x, bound). The gradient passes wherever the input is
    /// above the bound, and also below it when the upstream gradient would
    /// push the value back up; this keeps clamped scales trainable.
    pub fn lower_bound(&self, bound: f64) -> Tensor {
        let x = self.clone();
        Tensor::from_op(
            self.value().mapv(|v| v.max(bound)),
            vec![self.clone()],
            Box::new(move |g| {
                let mut out = g.clone();
                ndarray::Zip::from(&mut out).and(x.value()).for_each(|gv, &xv| {
                    if xv < bound && *gv > 0.0 {
                        // gradient pushing the output further up is dropped
                        *gv = 0.0;
                    }
                });
                vec![Some(out)]
            }),
        )
    }

    pub fn sum(&self) -> Tensor {
        let shape = self.shape().to_vec();
        Tensor::from_op(
            ArrayD::from_elem(IxDyn(&[]), self.value().sum()),
            vec![self.clone()],
            Box::new(move |g| {
                let gv = *g.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.value().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Concatenate along the channel axis (axis 1 of NCHW).
    pub fn concat_channels(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|t| t.value().view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: incompatible shapes");
        let sizes: Vec<usize> = parts.iter().map(|t| t.shape()[1]).collect();
        Tensor::from_op(
            value,
            parts.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut start = 0;
                for &c in &sizes {
                    out.push(Some(
                        g.slice_axis(Axis(1), ndarray::Slice::from(start..start + c))
                            .to_owned(),
                    ));
                    start += c;
                }
                out
            }),
        )
    }

    /// Slice channels [start, end) along axis 1.
    pub fn slice_channels(&self, start: usize, end: usize) -> Tensor {
        let total = self.shape()[1];
        assert!(start < end && end <= total, "slice_channels out of range");
        let value = self
            .value()
            .slice_axis(Axis(1), ndarray::Slice::from(start..end))
            .to_owned();
        let full_shape = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut out = ArrayD::zeros(IxDyn(&full_shape));
                out.slice_axis_mut(Axis(1), ndarray::Slice::from(start..end))
                    .assign(g);
                vec![Some(out)]
            }),
        )
    }

    /// [1, C, H, W] -> [H*W, C] row matrix of feature vectors.
    pub fn nchw_to_rows(&self) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4);
        assert_eq!(s[0], 1, "nchw_to_rows expects batch 1");
        let (c, h, w) = (s[1], s[2], s[3]);
        let value = self
            .value()
            .view()
            .into_shape_with_order(IxDyn(&[c, h * w]))
            .unwrap()
            .t()
            .to_owned()
            .into_dyn();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let gt = g
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .t()
                    .to_owned();
                let back = gt.into_shape_with_order(IxDyn(&[1, c, h, w])).unwrap();
                vec![Some(back)]
            }),
        )
    }

    /// [H*W, C] rows -> [1, C, H, W].
    pub fn rows_to_nchw(&self, h: usize, w: usize) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], h * w, "rows_to_nchw: row count mismatch");
        let c = s[1];
        let value = self
            .value()
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .t()
            .to_owned()
            .into_shape_with_order(IxDyn(&[1, c, h, w]))
            .unwrap();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let gt = g
                    .view()
                    .into_shape_with_order(IxDyn(&[c, h * w]))
                    .unwrap()
                    .t()
                    .to_owned()
                    .into_dyn();
                vec![Some(gt)]
            }),
        )
    }

    /// Gather rows of a [N, C] matrix by index; backward scatter-adds.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 2);
        let src = self.value().view().into_dimensionality::<Ix2>().unwrap();
        let mut out = ndarray::Array2::zeros((indices.len(), s[1]));
        for (row, &i) in indices.iter().enumerate() {
            out.row_mut(row).assign(&src.row(i));
        }
        let idx = indices.to_vec();
        let n = s[0];
        Tensor::from_op(
            out.into_dyn(),
            vec![self.clone()],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut back = ndarray::Array2::zeros((n, g2.ncols()));
                for (row, &i) in idx.iter().enumerate() {
                    let mut dst = back.row_mut(i);
                    dst += &g2.row(row);
                }
                vec![Some(back.into_dyn())]
            }),
        )
    }

    /// 2-d matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let a = self.value().view().into_dimensionality::<Ix2>().unwrap();
        let b = rhs.value().view().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimension mismatch");
        let value = a.dot(&b).into_dyn();
        let (lhs_c, rhs_c) = (self.clone(), rhs.clone());
        Tensor::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a = lhs_c.value().view().into_dimensionality::<Ix2>().unwrap();
                let b = rhs_c.value().view().into_dimensionality::<Ix2>().unwrap();
                vec![
                    Some(g2.dot(&b.t()).into_dyn()),
                    Some(a.t().dot(&g2).into_dyn()),
                ]
            }),
        )
    }

    /// Softmax along axis 1 of a 2-d matrix.
    pub fn row_softmax(&self) -> Tensor {
        let x = self.value().view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let yc = y.clone();
        Tensor::from_op(
            y.into_dyn(),
            vec![self.clone()],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut out = ndarray::Array2::zeros(g2.raw_dim());
                for ((mut orow, grow), yrow) in
                    out.rows_mut().into_iter().zip(g2.rows()).zip(yc.rows())
                {
                    let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(out.into_dyn())]
            }),
        )
    }

    /// L2-normalize each channel vector of an NCHW tensor (per spatial
    /// position), the normalization used by the perceptual distance.
    pub fn channel_l2_normalize(&self, eps: f64) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let x = self.value();
        let mut norms = ArrayD::zeros(IxDyn(&[n, 1, h, w]));
        for bi in 0..n {
            for y in 0..h {
                for xi in 0..w {
                    let mut sq = 0.0;
                    for ci in 0..c {
                        let v = x[[bi, ci, y, xi]];
                        sq += v * v;
                    }
                    norms[[bi, 0, y, xi]] = sq.sqrt() + eps;
                }
            }
        }
        let mut value = x.clone();
        for bi in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xi in 0..w {
                        value[[bi, ci, y, xi]] /= norms[[bi, 0, y, xi]];
                    }
                }
            }
        }
        let xc = self.clone();
        let normsc = norms.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let x = xc.value();
                let mut out = g.clone();
                for bi in 0..n {
                    for y in 0..h {
                        for xi in 0..w {
                            let nv = normsc[[bi, 0, y, xi]];
                            let mut dot = 0.0;
                            for ci in 0..c {
                                dot += g[[bi, ci, y, xi]] * x[[bi, ci, y, xi]];
                            }
                            for ci in 0..c {
                                out[[bi, ci, y, xi]] =
                                    g[[bi, ci, y, xi]] / nv - x[[bi, ci, y, xi]] * dot / (nv * nv * nv);
                            }
                        }
                    }
                }
                vec![Some(out)]
            }),
        )
    }

    /// Per-offset mean over non-overlapping PxP blocks of an NCHW tensor:
    /// output [N, C, P, P] where entry (u, v) is the mean over all blocks of
    /// the pixel at block-local offset (u, v).
    pub fn block_average(&self, period: usize) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(
            period > 0 && h % period == 0 && w % period == 0,
            "block_average: period must divide spatial dims"
        );
        let m = ((h / period) * (w / period)) as f64;
        let x = self.value();
        let mut value = ArrayD::zeros(IxDyn(&[n, c, period, period]));
        for bi in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xi in 0..w {
                        value[[bi, ci, y % period, xi % period]] += x[[bi, ci, y, xi]] / m;
                    }
                }
            }
        }
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut out = ArrayD::zeros(IxDyn(&[n, c, h, w]));
                for bi in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for xi in 0..w {
                                out[[bi, ci, y, xi]] =
                                    g[[bi, ci, y % period, xi % period]] / m;
                            }
                        }
                    }
                }
                vec![Some(out)]
            }),
        )
    }

    /// Per-element code length in bits of integer (or noise-relaxed) latents
    /// under a Gaussian with the given means and scales, using CDF mass over
    /// [v - 0.5, v + 0.5]. Differentiable in all three arguments.
    pub fn gaussian_bits(latent: &Tensor, mean: &Tensor, scale: &Tensor) -> Tensor {
        assert_eq!(latent.shape(), mean.shape());
        assert_eq!(latent.shape(), scale.shape());
        const MIN_MASS: f64 = 1e-12;
        const LN2: f64 = std::f64::consts::LN_2;
        let mut value = latent.value().clone();
        ndarray::Zip::from(&mut value)
            .and(mean.value())
            .and(scale.value())
            .for_each(|v, &mu, &s| {
                let m = normal_mass(*v - 0.5, *v + 0.5, mu, s).max(MIN_MASS);
                *v = -m.ln() / LN2;
            });
        let (lc, mc, sc) = (latent.clone(), mean.clone(), scale.clone());
        Tensor::from_op(
            value,
            vec![latent.clone(), mean.clone(), scale.clone()],
            Box::new(move |g| {
                let mut gl = g.clone();
                let mut gm = g.clone();
                let mut gs = g.clone();
                ndarray::Zip::from(&mut gl)
                    .and(&mut gm)
                    .and(&mut gs)
                    .and(lc.value())
                    .and(mc.value())
                    .and(sc.value())
                    .for_each(|gl, gm, gs, &v, &mu, &s| {
                        let m = normal_mass(v - 0.5, v + 0.5, mu, s);
                        if m < MIN_MASS {
                            *gl = 0.0;
                            *gm = 0.0;
                            *gs = 0.0;
                            return;
                        }
                        let a = (v - 0.5 - mu) / s;
                        let b = (v + 0.5 - mu) / s;
                        let (pa, pb) = (normal_pdf(a), normal_pdf(b));
                        // d(-ln m / ln2)/dm = -1/(m ln 2)
                        let dm = -1.0 / (m * LN2);
                        let dmdv = (pb - pa) / s;
                        let dmds = -(pb * b - pa * a) / s;
                        let go = *gl;
                        *gl = go * dm * dmdv;
                        *gm = go * dm * (-dmdv);
                        *gs = go * dm * dmds;
                    });
                vec![Some(gl), Some(gm), Some(gs)]
            }),
        )
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn stable_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn softmax_rows_normalize() {
        let x = Tensor::constant(arr2(&[[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]).into_dyn());
        let y = x.row_softmax();
        for row in y.value().view().into_dimensionality::<Ix2>().unwrap().rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((y.value()[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_bits_half_mass_is_one_bit() {
        // choose scale so that mass over [v-0.5, v+0.5] with mean = v is 0.5:
        // 2*Phi(0.5/s) - 1 = 0.5 -> 0.5/s = Phi^-1(0.75)
        let z = 0.674_489_750_196_081_7;
        let s = 0.5 / z;
        let lat = Tensor::constant(arr1(&[3.0]).into_dyn());
        let mean = Tensor::constant(arr1(&[3.0]).into_dyn());
        let scale = Tensor::constant(arr1(&[s]).into_dyn());
        let bits = Tensor::gaussian_bits(&lat, &mean, &scale);
        assert!((bits.value()[[0]] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_bits_tend_to_zero_at_high_mass() {
        let lat = Tensor::constant(arr1(&[0.0]).into_dyn());
        let mean = Tensor::constant(arr1(&[0.0]).into_dyn());
        let scale = Tensor::constant(arr1(&[0.11]).into_dyn());
        let bits = Tensor::gaussian_bits(&lat, &mean, &scale);
        let b = bits.value()[[0]];
        assert!(b > 0.0 && b < 1e-3, "bits = {b}");
    }

    #[test]
    fn gather_scatter_roundtrip_gradient() {
        let x = Tensor::from_array(arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).into_dyn(), true);
        let g = x.gather_rows(&[2, 0, 2]);
        assert_eq!(g.value()[[0, 0]], 5.0);
        g.sum().backward();
        let grad = x.grad().unwrap();
        // row 2 gathered twice, row 1 never
        assert_eq!(grad[[2, 0]], 2.0);
        assert_eq!(grad[[1, 0]], 0.0);
        assert_eq!(grad[[0, 1]], 1.0);
    }

    #[test]
    fn block_average_constant_and_checker() {
        let mut x = ArrayD::zeros(IxDyn(&[1, 1, 4, 4]));
        for y in 0..4 {
            for xi in 0..4 {
                x[[0, 0, y, xi]] = if (y + xi) % 2 == 0 { 0.6 } else { 0.4 };
            }
        }
        let t = Tensor::constant(x);
        let b = t.block_average(2);
        assert_eq!(b.shape(), &[1, 1, 2, 2]);
        assert!((b.value()[[0, 0, 0, 0]] - 0.6).abs() < 1e-12);
        assert!((b.value()[[0, 0, 0, 1]] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_clamps_and_gates_gradient() {
        let x = Tensor::from_array(arr1(&[0.05, 0.5]).into_dyn(), true);
        let y = x.lower_bound(0.11);
        assert_eq!(y.value()[[0]], 0.11);
        assert_eq!(y.value()[[1]], 0.5);
        // loss = sum(y): upstream grad +1 pushes clamped value up -> dropped
        y.sum().backward();
        let g = x.grad().unwrap();
        assert_eq!(g[[0]], 0.0);
        assert_eq!(g[[1]], 1.0);
        // loss = -sum(y): upstream grad -1 pulls value down -> passes
        let x2 = Tensor::from_array(arr1(&[0.05]).into_dyn(), true);
        x2.lower_bound(0.11).neg().sum().backward();
        assert_eq!(x2.grad().unwrap()[[0]], -1.0);
    }
}
