/// The error function (absolute error below 1e-10).
pub fn erf(x: f64) -> f64 {
    statrs::function::erf::erf(x)
}

/// `erf(num / sqrt(2 * var))`, with the zero-variance case taken as the
/// limit: the sign of `num`, and 0 when `num` is 0 too.
pub fn erf_scaled(num: f64, var: f64) -> f64 {
    if var > 0.0 {
        erf(num / (2.0 * var).sqrt())
    } else if num > 0.0 {
        1.0
    } else if num < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-10);
        assert!((erf(6.0) - 1.0).abs() < 1e-7);
        assert!((erf(-0.7) + 0.677_801_193_837_418_4).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_limit() {
        assert_eq!(erf_scaled(2.0, 0.0), 1.0);
        assert_eq!(erf_scaled(-1.0, 0.0), -1.0);
        assert_eq!(erf_scaled(0.0, 0.0), 0.0);
        assert!((erf_scaled(1.0, 0.5) - erf(1.0)).abs() < 1e-15);
    }
}
