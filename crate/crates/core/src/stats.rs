//! Small estimators shared by the ensembles.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean with standard error `stdev / sqrt(n)` (unbiased stdev).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    /// Sums in slice order; feed values ordered by sample index to keep
    /// results bit-identical between serial and parallel runs.
    pub fn from_values(values: &[f64]) -> Estimate {
        let n = values.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, stderr: f64::NAN, n };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Estimate { mean, stderr: (var / n as f64).sqrt(), n }
    }

    /// `|mean - reference| / stderr`.
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.mean - reference).abs() / self.stderr
    }
}

/// Pearson chi-square statistic of observed counts against expected
/// probabilities, with its upper-tail p-value (`bins - 1` degrees of freedom).
pub fn chi_square(counts: &[usize], probabilities: &[f64]) -> (f64, f64) {
    assert_eq!(counts.len(), probabilities.len());
    assert!(counts.len() >= 2);
    let total: usize = counts.iter().sum();
    let n = total as f64;
    let stat: f64 = counts
        .iter()
        .zip(probabilities)
        .map(|(&c, &p)| {
            let e = n * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}
