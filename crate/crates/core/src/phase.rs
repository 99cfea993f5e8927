//! Small helpers for working with angles.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    // rem_euclid can return TAU itself for tiny negative inputs
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Wrapped difference `a - b`.
pub fn wrapped_diff(a: f64, b: f64) -> f64 {
    wrap(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap(PI), PI);
        assert!((wrap(-PI) - PI).abs() < 1e-15);
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrapped_diff(PI - 0.01, -PI + 0.01) + 0.02).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn wrap_in_range(a in -100.0f64..100.0) {
            let w = wrap(a);
            prop_assert!(w > -PI && w <= PI);
            let k = ((a - w) / TAU).round();
            prop_assert!((a - w - k * TAU).abs() < 1e-9);
        }
    }
}
