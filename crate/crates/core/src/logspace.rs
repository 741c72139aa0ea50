//! Signed log-magnitude arithmetic for Carleman-weighted quantities.
//!
//! The weight θ² = e^{2ℓ} spans hundreds of orders of magnitude across
//! (0,T) × G, so weighted integrands are carried as exponents and only
//! materialized through [`exp_flush`], which flushes anything below the
//! smallest positive normal f64 to exact zero (no subnormals downstream).

use num_complex::Complex64;

/// ln of the smallest positive normal f64.
pub const LN_MIN_NORMAL: f64 = -708.396_418_532_264_1;
/// ln of the largest finite f64.
pub const LN_MAX: f64 = 709.782_712_893_384;

/// e^x with flush-to-zero below the normal range.
#[inline]
pub fn exp_flush(x: f64) -> f64 {
    if x < LN_MIN_NORMAL {
        0.0
    } else {
        x.exp()
    }
}

/// θ²·x as exp(2ℓ + ln x) for x > 0; exact zero stays zero.
#[inline]
pub fn weighted(two_ell: f64, x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x == 0.0 {
        0.0
    } else {
        exp_flush(two_ell + x.ln())
    }
}

/// e^ℓ · z computed through the exponent of |z|; keeps the phase of z.
#[inline]
pub fn scaled_complex(ell: f64, z: Complex64) -> Complex64 {
    let mag = z.norm();
    if mag == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let m = exp_flush(ell + mag.ln());
    if m == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * (m / mag)
    }
}

/// ln(1 − e^{−a}) for a > 0, stable for both tiny and large a.
#[inline]
pub fn ln_one_minus_exp_neg(a: f64) -> f64 {
    debug_assert!(a > 0.0);
    if a > 0.693 {
        (-(-a).exp()).ln_1p()
    } else {
        (-(-a).exp_m1()).ln()
    }
}

/// Sign and natural log of the magnitude; (0, -inf) encodes exact zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub sign: i8,
    pub ln_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog { sign: 0, ln_abs: f64::NEG_INFINITY };

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self { sign: if x > 0.0 { 1 } else { -1 }, ln_abs: x.abs().ln() }
        }
    }

    pub fn from_parts(sign: i8, ln_abs: f64) -> Self {
        if sign == 0 || ln_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self { sign, ln_abs }
        }
    }

    pub fn mul(self, other: Self) -> Self {
        if self.sign == 0 || other.sign == 0 {
            return Self::ZERO;
        }
        Self { sign: self.sign * other.sign, ln_abs: self.ln_abs + other.ln_abs }
    }

    pub fn div(self, other: Self) -> Self {
        assert!(other.sign != 0, "division by logspace zero");
        if self.sign == 0 {
            return Self::ZERO;
        }
        Self { sign: self.sign * other.sign, ln_abs: self.ln_abs - other.ln_abs }
    }

    pub fn add(self, other: Self) -> Self {
        if self.sign == 0 {
            return other;
        }
        if other.sign == 0 {
            return self;
        }
        let (hi, lo) = if self.ln_abs >= other.ln_abs { (self, other) } else { (other, self) };
        let d = lo.ln_abs - hi.ln_abs; // <= 0
        if hi.sign == lo.sign {
            Self { sign: hi.sign, ln_abs: hi.ln_abs + d.exp().ln_1p() }
        } else {
            let r = d.exp();
            if r == 1.0 {
                Self::ZERO
            } else {
                Self { sign: hi.sign, ln_abs: hi.ln_abs + (-r).ln_1p() }
            }
        }
    }

    /// Materialize, flushing tiny magnitudes to zero and saturating huge ones.
    pub fn to_f64(self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => {
                let m = if self.ln_abs > LN_MAX { f64::INFINITY } else { exp_flush(self.ln_abs) };
                f64::from(s) * m
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flush_below_normal_range() {
        assert_eq!(exp_flush(-709.0), 0.0);
        assert!(exp_flush(-708.0) > 0.0);
        assert_eq!(weighted(-1.0e6, 1.0e30), 0.0);
        let w = weighted(-10.0, 2.0);
        assert!((w - (-10.0f64).exp() * 2.0).abs() / w < 1e-14);
    }

    #[test]
    fn scaled_complex_keeps_phase() {
        let z = Complex64::new(3.0, -4.0);
        let got = scaled_complex(-2.0, z);
        let want = z * (-2.0f64).exp();
        assert!((got - want).norm() < 1e-15 * want.norm());
        assert_eq!(scaled_complex(-1.0e7, z), Complex64::new(0.0, 0.0));
        assert_eq!(scaled_complex(-3.0, Complex64::new(0.0, 0.0)), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn signed_log_round_trip_and_sum() {
        // exp(ln x) loses ~|ln x|·eps relative accuracy at extreme magnitudes
        for &x in &[3.5e-200, -2.0e180, 1.0, -1.0e-8] {
            let r = SignedLog::from_f64(x).to_f64();
            assert!((r - x).abs() <= 1e-12 * x.abs(), "{x} -> {r}");
        }
        let a = SignedLog::from_f64(3.0e100);
        let b = SignedLog::from_f64(-1.0e100);
        assert!((a.add(b).to_f64() - 2.0e100).abs() < 1e88);
        assert_eq!(a.add(a.mul(SignedLog::from_f64(-1.0))).sign, 0);
        // additions far beyond f64 range stay finite in log space
        let big = SignedLog::from_parts(1, 5000.0);
        let sum = big.add(SignedLog::from_parts(1, 4999.0));
        assert!((sum.ln_abs - (5000.0 + (1.0f64 + (-1.0f64).exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn ln_one_minus_exp_neg_branches() {
        // moderate a: the naive form is accurate enough to compare against
        for &a in &[0.7f64, 5.0, 300.0] {
            let want = (1.0 - (-a).exp()).ln();
            let got = ln_one_minus_exp_neg(a);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "a={a}");
        }
        // small a: 1 − e^{−a} = a(1 − a/2 + O(a²)), where the naive form
        // loses all precision
        for &a in &[1.0e-12f64, 1.0e-6, 1.0e-300] {
            let want = a.ln() + (-a / 2.0).ln_1p();
            let got = ln_one_minus_exp_neg(a);
            assert!((got - want).abs() <= 1e-9, "a={a}: {got} vs {want}");
        }
    }
}
