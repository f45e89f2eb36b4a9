//! Scalar numerics shared by the entropy models and the coder: double
//! precision erf/erfc (Cody's rational approximations) and Gaussian helpers.

const SQRPI: f64 = 0.564_189_583_547_756_3; // 1/sqrt(pi)

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERF_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERF_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_098_5e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_7e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERF_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_460_5e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];

/// erfc(x) for x >= 0.46875 (internal branch helper).
fn erfc_positive(y: f64) -> f64 {
    if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        (-y * y).exp() * (num + ERF_C[7]) / (den + ERF_D[7])
    } else if y < 26.5 {
        let ysq = 1.0 / (y * y);
        let mut num = ERF_P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + ERF_P[i]) * ysq;
            den = (den + ERF_Q[i]) * ysq;
        }
        let r = ysq * (num + ERF_P[4]) / (den + ERF_Q[4]);
        (-y * y).exp() * (SQRPI - r) / y
    } else {
        0.0
    }
}

pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let ysq = y * y;
        let mut num = ERF_A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + ERF_A[i]) * ysq;
            den = (den + ERF_B[i]) * ysq;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else {
        let e = 1.0 - erfc_positive(y);
        if x < 0.0 {
            -e
        } else {
            e
        }
    }
}

pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let r = if y <= 0.46875 {
        1.0 - erf(y)
    } else {
        erfc_positive(y)
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// P(lo < X < hi) for X ~ N(mu, sigma^2), evaluated on the tail side that
/// avoids catastrophic cancellation.
pub fn normal_mass(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let m = if a + b >= 0.0 {
        0.5 * (erfc(a * s) - erfc(b * s))
    } else {
        0.5 * (erfc(-b * s) - erfc(-a * s))
    };
    m.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_values() {
        // reference values from standard tables
        assert!((erf(0.0)).abs() < 1e-15);
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-13);
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-13);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-13);
        assert!((erf(-1.0) + 0.842_700_792_949_714_9).abs() < 1e-13);
        assert!((erfc(3.0) - 2.209_049_699_858_544e-5).abs() < 1e-16);
        assert!((erfc(5.0) - 1.537_459_794_428_035e-12).abs() < 1e-24);
    }

    #[test]
    fn normal_mass_partitions_to_one() {
        let mu = 0.37;
        let sigma = 1.7;
        let mut total = 0.0;
        for i in -300..300 {
            let lo = i as f64 * 0.1;
            total += normal_mass(lo, lo + 0.1, mu, sigma);
        }
        assert!((total - 1.0).abs() < 1e-12, "total = {total}");
    }

    #[test]
    fn normal_mass_tail_stability() {
        // deep-tail interval: difference of CDFs would cancel; the folded
        // form must stay positive and finite
        let m = normal_mass(8.0, 9.0, 0.0, 1.0);
        assert!(m > 0.0 && m < 1e-14);
        let m2 = normal_mass(-9.0, -8.0, 0.0, 1.0);
        assert!((m - m2).abs() < 1e-30);
    }
}
