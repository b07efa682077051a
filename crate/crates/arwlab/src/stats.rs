/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for `successes` out of `n`. Returns `(0, 1)` when
/// `n == 0`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    // rounding can push an endpoint past p when p is 0 or 1
    let lo = (centre - half).max(0.0).min(p);
    let hi = (centre + half).min(1.0).max(p);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_values() {
        // 5 of 10: centre 0.5, half-width z/(1+z^2/10) sqrt(0.025 + z^2/400)
        let (lo, hi) = wilson_interval(5, 10, Z95);
        assert!((lo - 0.236593090512564).abs() < 1e-12, "{lo}");
        assert!((hi - 0.763406909487436).abs() < 1e-12, "{hi}");
        let (lo, hi) = wilson_interval(0, 20, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.161125158052819).abs() < 1e-12, "{hi}");
    }

    #[test]
    fn empty_sample() {
        assert_eq!(wilson_interval(0, 0, Z95), (0.0, 1.0));
    }
}
