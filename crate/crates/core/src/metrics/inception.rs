use crate::error::{Error, Result};

/// Tolerance on row sums when validating class posteriors.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

pub fn validate_posteriors(posteriors: &[Vec<f64>]) -> Result<usize> {
    let k = posteriors.first().map(Vec::len).unwrap_or(0);
    if k == 0 {
        return Err(Error::InvalidDistribution {
            row: 0,
            detail: "no classes".into(),
        });
    }
    for (row, p) in posteriors.iter().enumerate() {
        if p.len() != k {
            return Err(Error::InvalidDistribution {
                row,
                detail: format!("expected {k} entries, found {}", p.len()),
            });
        }
        if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidDistribution {
                row,
                detail: "negative or non-finite entry".into(),
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution {
                row,
                detail: format!("row sums to {sum}"),
            });
        }
    }
    Ok(k)
}

/// Neumaier summation; keeps the mean of many equal terms equal to the term.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

fn split_score(rows: &[Vec<f64>], k: usize) -> f64 {
    let m = rows.len() as f64;
    let mut marginal = vec![0.0; k];
    for p in rows {
        for (acc, v) in marginal.iter_mut().zip(p) {
            *acc += v;
        }
    }
    marginal.iter_mut().for_each(|q| *q /= m);
    let per_row = rows.iter().map(|p| {
        p.iter()
            .zip(&marginal)
            .filter(|(&pv, _)| pv > 0.0)
            .map(|(&pv, &qv)| pv * (pv.ln() - qv.ln()))
            .sum::<f64>()
    });
    let mean_kl = compensated_sum(per_row) / m;
    mean_kl.exp()
}

/// Inception score of `N x K` class posteriors: per split, the exponential
/// of the mean KL divergence between each row and the split's marginal.
/// Returns the mean and population standard deviation over splits.
///
/// Split `s` covers rows `[s*N/splits, (s+1)*N/splits)`.
pub fn inception_score(posteriors: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    let n = posteriors.len();
    if splits == 0 || n < splits {
        return Err(Error::Config(format!(
            "inception score needs 1 <= splits <= N, got splits={splits}, N={n}"
        )));
    }
    let k = validate_posteriors(posteriors)?;
    let scores: Vec<f64> = (0..splits)
        .map(|s| split_score(&posteriors[s * n / splits..(s + 1) * n / splits], k))
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}
