//! Average pooling and bilinear upsampling.

use super::Tensor;
use ndarray::{ArrayD, IxDyn};

impl Tensor {
    /// Non-overlapping k-by-k average pooling; k must divide both spatial dims.
    pub fn avg_pool2d(&self, k: usize) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(h % k == 0 && w % k == 0, "avg_pool2d: k must divide dims");
        let (ho, wo) = (h / k, w / k);
        let x = self.value();
        let mut out = ArrayD::zeros(IxDyn(&[n, c, ho, wo]));
        let inv = 1.0 / (k * k) as f64;
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                acc += x[[ni, ci, oy * k + dy, ox * k + dx]];
                            }
                        }
                        out[[ni, ci, oy, ox]] = acc * inv;
                    }
                }
            }
        }
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = ArrayD::zeros(IxDyn(&[n, c, h, w]));
                for ni in 0..n {
                    for ci in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = g[[ni, ci, oy, ox]] * inv;
                                for dy in 0..k {
                                    for dx in 0..k {
                                        gx[[ni, ci, oy * k + dy, ox * k + dx]] = gv;
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Bilinear 2x upsampling (half-pixel-centre convention, edges clamped).
    pub fn upsample_bilinear_x2(&self) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h * 2, w * 2);
        let taps = |dst: usize, len: usize| -> (usize, usize, f64) {
            let src = dst as f64 / 2.0 - 0.25;
            let i0 = src.floor();
            let t = src - i0;
            let lo = (i0.max(0.0) as usize).min(len - 1);
            let hi = ((i0 + 1.0).max(0.0) as usize).min(len - 1);
            (lo, hi, t)
        };
        let x = self.value();
        let mut out = ArrayD::zeros(IxDyn(&[n, c, ho, wo]));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..ho {
                    let (y0, y1, ty) = taps(oy, h);
                    for ox in 0..wo {
                        let (x0, x1, tx) = taps(ox, w);
                        out[[ni, ci, oy, ox]] = (1.0 - ty)
                            * ((1.0 - tx) * x[[ni, ci, y0, x0]] + tx * x[[ni, ci, y0, x1]])
                            + ty * ((1.0 - tx) * x[[ni, ci, y1, x0]] + tx * x[[ni, ci, y1, x1]]);
                    }
                }
            }
        }
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = ArrayD::zeros(IxDyn(&[n, c, h, w]));
                for ni in 0..n {
                    for ci in 0..c {
                        for oy in 0..ho {
                            let (y0, y1, ty) = taps(oy, h);
                            for ox in 0..wo {
                                let (x0, x1, tx) = taps(ox, w);
                                let gv = g[[ni, ci, oy, ox]];
                                gx[[ni, ci, y0, x0]] += gv * (1.0 - ty) * (1.0 - tx);
                                gx[[ni, ci, y0, x1]] += gv * (1.0 - ty) * tx;
                                gx[[ni, ci, y1, x0]] += gv * ty * (1.0 - tx);
                                gx[[ni, ci, y1, x1]] += gv * ty * tx;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn pool_then_upsample_constant_is_identity() {
        let x = Tensor::constant(Array4::from_elem([1, 2, 4, 4], 0.7).into_dyn());
        let y = x.avg_pool2d(2).upsample_bilinear_x2();
        for v in y.value().iter() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool_means() {
        let x = Tensor::constant(
            Array4::from_shape_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .into_dyn(),
        );
        let y = x.avg_pool2d(2);
        assert_eq!(y.value()[[0, 0, 0, 0]], 2.5);
    }
}
