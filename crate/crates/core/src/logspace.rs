//! Log-domain arithmetic helpers.

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Stable `log Σ exp(x_i)`. The shifted exponentials are accumulated with
/// Neumaier compensation, so masses spanning many orders of magnitude keep
/// their low-order bits.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let total = neumaier_sum(values.iter().map(|&v| (v - max).exp()));
    max + total.ln()
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Natural log that maps 0 to −∞ and keeps it there.
#[inline]
pub fn safe_ln(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_exp_matches_direct() {
        let got = log_add_exp(0.5, 2.0);
        let want = (0.5f64.exp() + 2.0f64.exp()).ln();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn add_exp_large() {
        // 1232 + log(e^2 + 1)
        let want = 1232.0 + (2.0f64.exp() + 1.0).ln();
        assert!((log_add_exp(1234.0, 1232.0) - want).abs() < 1e-12);
    }

    #[test]
    fn neg_infinity_is_identity() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn sum_exp_of_logs() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let logs: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
        assert!(log_sum_exp(&logs).abs() < 1e-15);
    }

    #[test]
    fn compensation_recovers_small_terms() {
        let mut values = vec![1.0];
        values.extend(std::iter::repeat_n(1e-16, 10_000));
        let got = neumaier_sum(values.iter().copied());
        assert!((got - (1.0 + 1e-12)).abs() < 1e-18);
    }
}
