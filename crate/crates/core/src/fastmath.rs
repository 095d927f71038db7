//! Branch-free `exp` for the softmax and SiLU inner loops.
//!
//! `libm::exp` is a faithful scalar port that the compiler cannot vectorize;
//! these loops evaluate hundreds of thousands of exponentials per forward pass.
//! This version uses Cody–Waite range reduction and a degree-13 Taylor
//! polynomial, written without data-dependent branches so it vectorizes, and
//! stays within a few ulp of the correctly rounded result.

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const INV_LN2: f64 = 1.442_695_040_888_963_387_00;
/// Adding and subtracting this rounds to the nearest integer (ties to even).
const ROUND: f64 = 6_755_399_441_055_744.0;
const OVERFLOW: f64 = 709.782_712_893_384;
const UNDERFLOW: f64 = -745.133_219_101_941_1;

#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let xc = x.clamp(-746.0, 710.0);
    let kf = (xc * INV_LN2 + ROUND) - ROUND;
    let r = (xc - kf * LN2_HI) - kf * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // 2^k as two factors so subnormal results stay representable. Integers
    // are read from the mantissa of `k + ROUND` rather than via float-to-int
    // casts, which keeps the whole function vectorizable.
    let k1f = (kf * 0.5 + ROUND) - ROUND;
    let k2f = kf - k1f;
    let s1 = pow2(k1f);
    let s2 = pow2(k2f);
    let y = p * s1 * s2;
    let y = if x > OVERFLOW { f64::INFINITY } else { y };
    let y = if x < UNDERFLOW { 0.0 } else { y };
    if x.is_nan() {
        x
    } else {
        y
    }
}

/// `2^k` for an integral `k` in `[-1022, 1023]`.
#[inline(always)]
fn pow2(k: f64) -> f64 {
    let ki = (k + ROUND).to_bits().wrapping_sub(ROUND.to_bits());
    f64::from_bits(ki.wrapping_add(1023) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ulps(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    #[test]
    fn agrees_with_reference_exp() {
        let mut worst = 0;
        let mut x = -745.0;
        while x < 709.7 {
            worst = worst.max(ulps(exp(x), x.exp()));
            x += 0.012_345_678_9;
        }
        for i in -2000..2000 {
            let x = i as f64 * 1e-3;
            worst = worst.max(ulps(exp(x), x.exp()));
        }
        assert!(worst <= 2, "worst error {worst} ulp");
    }

    #[test]
    fn special_values() {
        assert_eq!(exp(0.0), 1.0);
        assert_eq!(exp(-1000.0), 0.0);
        assert_eq!(exp(f64::NEG_INFINITY), 0.0);
        assert_eq!(exp(1000.0), f64::INFINITY);
        assert_eq!(exp(f64::INFINITY), f64::INFINITY);
        assert!(exp(f64::NAN).is_nan());
        assert!(exp(-740.0) > 0.0);
    }
}
