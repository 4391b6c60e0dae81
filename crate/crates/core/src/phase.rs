//! Angle helpers. All wrapped phases live in `[-π, π)`.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `[-π, π)`.
pub fn wrap(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(TAU) - PI;
    // rem_euclid can return TAU itself for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Shortest angular distance between two angles, in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    wrap(a - b).abs()
}

/// Circular mean of a set of angles, wrapped.
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    wrap(s.atan2(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap(PI), -PI);
        assert_eq!(wrap(-PI), -PI);
        assert!((wrap(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap(-0.5) + 0.5).abs() < 1e-15);
        assert!(wrap(-1e-18) < PI);
    }

    #[test]
    fn distance_and_mean() {
        assert!((circular_distance(PI - 0.01, -PI + 0.01) - 0.02).abs() < 1e-12);
        let m = circular_mean(&[PI - 0.1, -PI + 0.1]);
        assert!(circular_distance(m, PI) < 1e-12);
        assert!((circular_mean(&[0.2, 0.4]) - 0.3).abs() < 1e-12);
    }
}
