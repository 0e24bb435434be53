//! Descriptive statistics shared by the corpus and pipeline reports.

use serde::{Deserialize, Serialize};

/// Mean, sample standard deviation and median of a list of counts.
///
/// The standard deviation uses the `n - 1` denominator and is `0.0` for a
/// single observation. For an even number of observations the median is the
/// lower of the two middle values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

impl Summary {
    /// Returns `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[(n - 1) / 2];
        Some(Summary { n, mean, sd, median })
    }

    pub fn of_counts(counts: &[usize]) -> Option<Summary> {
        let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Summary::of(&values)
    }
}
