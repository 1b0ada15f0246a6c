//! Autocorrelation diagnostics for scalar chains.

/// Normalized autocorrelation of `series` at `lag` (0 when the series is constant).
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    let n = series.len();
    if lag >= n {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = series[..n - lag]
        .iter()
        .zip(&series[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    cov / var
}

/// Integrated autocorrelation time `1/2 + sum_k rho(k)` with Sokal's
/// self-consistent window (stop at the first `W >= c * tau(W)`, `c = 5`).
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    let mut tau = 0.5;
    for lag in 1..n / 2 {
        tau += autocorrelation(series, lag);
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ar1_time_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi: f64 = 0.8;
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                x = phi * x + e;
                x
            })
            .collect();
        assert!((autocorrelation(&series, 1) - phi).abs() < 0.01);
        // tau_int = (1 + phi) / (2 (1 - phi)) = 4.5
        let tau = integrated_autocorrelation_time(&series);
        assert!((tau - 4.5).abs() < 0.3, "{tau}");
    }

    #[test]
    fn constant_series() {
        assert_eq!(autocorrelation(&[1.0; 10], 1), 0.0);
        assert_eq!(integrated_autocorrelation_time(&[1.0; 10]), 0.5);
    }
}
