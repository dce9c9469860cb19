//! Monte Carlo summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Mean, variance and standard error of a sample.
///
/// Values are sorted before summation, so the result does not depend on the
/// order in which replicas finished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub variance: f64,
    pub se: f64,
    pub replicas: u64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                se: f64::NAN,
                replicas: 0,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            let mut d: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            d.sort_by(f64::total_cmp);
            d.iter().sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            se: (variance / n as f64).sqrt(),
            replicas: n as u64,
        }
    }

    /// Summary of the indicator of `pred` over `values`.
    pub fn fraction<T>(values: &[T], pred: impl Fn(&T) -> bool) -> Self {
        let ind: Vec<f64> = values.iter().map(|v| if pred(v) { 1.0 } else { 0.0 }).collect();
        Self::from_values(&ind)
    }
}

/// `sqrt(a.se² + b.se²)`.
pub fn pooled_se(a: &SummaryStats, b: &SummaryStats) -> f64 {
    a.se.hypot(b.se)
}

/// Upper tail probability of a chi-square statistic.
pub fn chi_square_p_value(statistic: f64, dof: f64) -> f64 {
    if dof <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof).expect("positive degrees of freedom").sf(statistic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_sample() {
        let s = SummaryStats::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.se - (5.0 / 12.0f64).sqrt()).abs() < 1e-15);
        assert_eq!(s.replicas, 4);
    }

    #[test]
    fn order_does_not_matter() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 * 1e-3 + 1e8).collect();
        let mut ys = xs.clone();
        ys.reverse();
        ys.swap(3, 700);
        assert_eq!(SummaryStats::from_values(&xs), SummaryStats::from_values(&ys));
    }

    #[test]
    fn chi_square_tail() {
        // P(χ²₂ > x) = exp(-x/2).
        assert!((chi_square_p_value(3.0, 2.0) - (-1.5f64).exp()).abs() < 1e-12);
    }
}
