//! Goodness-of-fit helpers for the simulation checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Cells whose expected count falls below this are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of `observed` counts against cell probabilities.
///
/// Any count in a zero-probability cell gives `p_value = 0`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> GofResult {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    if observed.iter().zip(probs).any(|(&o, &q)| q <= 0.0 && o > 0) {
        return GofResult { statistic: f64::INFINITY, df: 0, p_value: 0.0 };
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    for (&o, &q) in observed.iter().zip(probs) {
        if q <= 0.0 {
            continue;
        }
        let e = q * nf;
        if e < MIN_EXPECTED {
            pool_obs += o as f64;
            pool_exp += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pool_exp > 0.0 {
        if pool_exp < MIN_EXPECTED && !cells.is_empty() {
            // fold a thin pool into the smallest regular cell
            let idx = cells
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i)
                .unwrap();
            cells[idx].0 += pool_obs;
            cells[idx].1 += pool_exp;
        } else {
            cells.push((pool_obs, pool_exp));
        }
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = cells.len().saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(df as f64).expect("df > 0").cdf(statistic)
    };
    GofResult { statistic, df, p_value }
}

/// One-sigma Monte Carlo scale of an l1 distance: `sum_s sqrt(q_s (1 - q_s) / n)`.
pub fn l1_half_width(probs: &[f64], samples: u64) -> f64 {
    let n = samples as f64;
    probs.iter().map(|q| (q * (1.0 - q) / n).max(0.0).sqrt()).sum()
}
