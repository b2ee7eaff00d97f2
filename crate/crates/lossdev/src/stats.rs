//! Goodness-of-fit p-values for calibration checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail probability of a chi-square statistic with `df` degrees of
/// freedom.
pub fn chi_square_p_value(statistic: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(statistic)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `values` and Uniform(0, 1).
pub fn ks_statistic_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(k, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((k + 1) as f64 / n - x).max(x - k as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov survival function `Q(t) = 2 sum (-1)^(k-1) exp(-2 k^2 t^2)`.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * t * t).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value of the one-sample KS test against Uniform(0, 1), with
/// the small-sample correction `(sqrt(n) + 0.12 + 0.11 / sqrt(n)) D`.
pub fn ks_uniform_p_value(values: &[f64]) -> f64 {
    let d = ks_statistic_uniform(values);
    let rn = (values.len() as f64).sqrt();
    kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_reference_points() {
        // 95th percentile of chi-square(1) is 3.841458820694124.
        assert!((chi_square_p_value(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-9);
        // Exponential with mean 2 for df = 2.
        assert!((chi_square_p_value(3.0, 2) - (-1.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_reference_points() {
        // Classical critical values: Q(1.3581) = 0.05, Q(1.6276) = 0.01.
        assert!((kolmogorov_sf(1.358_1) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.627_6) - 0.01).abs() < 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_statistic_of_grid() {
        let v: Vec<f64> = (0..10).map(|k| (k as f64 + 0.5) / 10.0).collect();
        assert!((ks_statistic_uniform(&v) - 0.05).abs() < 1e-12);
        assert!(ks_uniform_p_value(&v) > 0.99);
        let bunched = vec![0.01; 50];
        assert!(ks_uniform_p_value(&bunched) < 1e-10);
    }
}
