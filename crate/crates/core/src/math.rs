//! Scalar math shims.
//!
//! All float math goes through `libm` so results are bit-identical with and
//! without the `std` feature.

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn log2(x: f64) -> f64 {
    libm::log2(x)
}

pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Exact `2^e` for integer exponents.
pub(crate) fn exp2i(e: i32) -> f64 {
    libm::scalbn(1.0, e)
}

pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[cfg(test)]
pub(crate) fn atan(x: f64) -> f64 {
    libm::atan(x)
}

pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

/// Round half away from zero (the `f64::round` convention).
pub(crate) fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}

/// Round half to even. Non-tie values round to nearest.
pub(crate) fn round_half_even(x: f64) -> f64 {
    let f = libm::floor(x);
    if x - f == 0.5 {
        // Tie: pick the even neighbor of {f, f + 1}.
        if (f as i64) % 2 == 0 {
            f
        } else {
            f + 1.0
        }
    } else {
        libm::round(x)
    }
}

pub(crate) fn is_power_of_two(n: usize) -> bool {
    n != 0 && (n & (n - 1)) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_ties() {
        assert_eq!(round_half_even(0.5), 0.0);
        assert_eq!(round_half_even(1.5), 2.0);
        assert_eq!(round_half_even(2.5), 2.0);
        assert_eq!(round_half_even(-0.5), 0.0);
        assert_eq!(round_half_even(-1.5), -2.0);
        assert_eq!(round_half_even(-2.5), -2.0);
        assert_eq!(round_half_even(1.3), 1.0);
        assert_eq!(round_half_even(-1.7), -2.0);
    }

    #[test]
    fn half_away_ties() {
        assert_eq!(round_half_away(0.5), 1.0);
        assert_eq!(round_half_away(-0.5), -1.0);
        assert_eq!(round_half_away(2.5), 3.0);
    }

    #[test]
    fn exp2i_exact() {
        assert_eq!(exp2i(0), 1.0);
        assert_eq!(exp2i(3), 8.0);
        assert_eq!(exp2i(-2), 0.25);
        assert_eq!(exp2i(-127), f64::powi(2.0, -127));
    }
}
