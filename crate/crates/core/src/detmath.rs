//! Transcendental functions built only from IEEE-754 basic operations.
//!
//! Everything the decoder evaluates (predictor activations, entropy-model CDFs)
//! goes through these so that reconstruction is bit-identical on every platform,
//! independent of the system libm.

const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const INV_LN2: f64 = std::f64::consts::LOG2_E;

fn pow2i(k: i64) -> f64 {
    // k in [-1022, 1023]
    f64::from_bits(((k + 1023) as u64) << 52)
}

pub fn exp(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x > 709.78 {
        return f64::INFINITY;
    }
    if x < -745.2 {
        return 0.0;
    }
    let k = (x * INV_LN2).round();
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series of e^r, |r| <= 0.35
    let mut p = 1.0 / 6_227_020_800.0; // 1/13!
    for d in [
        479_001_600.0,
        39_916_800.0,
        3_628_800.0,
        362_880.0,
        40_320.0,
        5_040.0,
        720.0,
        120.0,
        24.0,
        6.0,
        2.0,
        1.0,
        1.0,
    ] {
        p = p * r + 1.0 / d;
    }
    let k = k as i64;
    if k > 1023 {
        p * pow2i(1023) * pow2i(k - 1023)
    } else if k < -1022 {
        p * pow2i(-1022) * pow2i(k + 1022)
    } else {
        p * pow2i(k)
    }
}

pub fn ln(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return x;
    }
    let (mut x, mut e) = (x, 0i64);
    if x < f64::MIN_POSITIVE {
        x *= pow2i(54);
        e -= 54;
    }
    let bits = x.to_bits();
    e += ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    if m > std::f64::consts::SQRT_2 {
        m *= 0.5;
        e += 1;
    }
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    let mut p = 0.0;
    for n in (1..=23).rev().step_by(2) {
        p = p * s2 + 1.0 / n as f64;
    }
    let ef = e as f64;
    ef * LN2_HI + (2.0 * s * p + ef * LN2_LO)
}

pub fn log2(x: f64) -> f64 {
    ln(x) * INV_LN2
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub fn tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = exp(2.0 * x);
    (e - 1.0) / (e + 1.0)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x > 0.0 {
        x + ln(1.0 + exp(-x))
    } else {
        ln(1.0 + exp(x))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
        }
    }

    #[test]
    fn exp_matches_libm() {
        let mut x = -740.0;
        while x < 709.0 {
            assert!(rel(exp(x), x.exp()) < 4e-15, "x={x}");
            x += 0.377;
        }
        assert_eq!(exp(0.0), 1.0);
        assert_eq!(exp(-1000.0), 0.0);
        assert!(exp(1000.0).is_infinite());
    }

    #[test]
    fn ln_matches_libm() {
        for &x in &[1e-310, 1e-300, 1e-9, 0.1, 0.5, 0.999, 1.0, 1.0001, 2.0, 10.0, 1e12, 1e300] {
            let err = (ln(x) - x.ln()).abs();
            assert!(err <= 4.0 * f64::EPSILON * x.ln().abs().max(1.0), "x={x}");
        }
        assert_eq!(ln(1.0), 0.0);
        assert!(ln(0.0).is_infinite());
    }

    #[test]
    fn sigmoid_and_tanh() {
        for i in -400..=400 {
            let x = i as f64 * 0.1;
            assert!((sigmoid(x) - 1.0 / (1.0 + (-x).exp())).abs() < 1e-15);
            assert!((tanh(x) - x.tanh()).abs() < 1e-14);
            assert!((softplus(x) - (1.0 + x.exp()).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for i in -60..=60 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
