use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Quadratic weighted kappa between integer ratings in `[min, max]`.
///
/// Both the observed confusion matrix and the expected one (outer product of
/// the marginals) are normalized to sum to 1. When the expected disagreement
/// is zero, which only happens when every rating on both sides is the same
/// value, the result is 1.
pub fn qwk(gold: &[i64], predicted: &[i64], min: i64, max: i64) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Validation("qwk of an empty rating list".into()));
    }
    if gold.len() != predicted.len() {
        return Err(Error::Validation(format!(
            "qwk needs paired ratings, got {} gold and {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    if max < min {
        return Err(Error::Validation(format!("rating range [{min}, {max}] is empty")));
    }
    if let Some(bad) = gold.iter().chain(predicted).find(|r| !(min..=max).contains(*r)) {
        return Err(Error::Validation(format!("rating {bad} outside [{min}, {max}]")));
    }
    let r = (max - min + 1) as usize;
    if r == 1 {
        return Ok(1.0);
    }
    // Raw counts and unscaled weights keep small cases exact. The (R−1)²
    // factor cancels, and normalizing O by n and E by n² leaves a factor n.
    let n = gold.len() as f64;
    let mut observed = vec![0.0; r * r];
    let mut hist_gold = vec![0.0; r];
    let mut hist_pred = vec![0.0; r];
    for (&g, &p) in gold.iter().zip(predicted) {
        let (i, j) = ((g - min) as usize, (p - min) as usize);
        observed[i * r + j] += 1.0;
        hist_gold[i] += 1.0;
        hist_pred[j] += 1.0;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..r {
        for j in 0..r {
            let w = ((i as f64) - (j as f64)).powi(2);
            num += w * observed[i * r + j];
            den += w * hist_gold[i] * hist_pred[j];
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - n * num / den)
}

/// How a paired t-test degenerated, if it did.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestFlag {
    /// Every difference is zero; reported as `t = 0`, `p = 1`.
    Identical,
    /// Differences are constant and nonzero; `t` is infinite and `p = 0`.
    ZeroVariance,
}

impl fmt::Display for TTestFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Identical => "identical",
            Self::ZeroVariance => "zero_variance",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
    pub flag: Option<TTestFlag>,
}

/// Paired two-sided t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "paired t-test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p: 1.0,
            df,
            flag: Some(TTestFlag::Identical),
        });
    }
    if var == 0.0 {
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            p: 0.0,
            df,
            flag: Some(TTestFlag::ZeroVariance),
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df, flag: None })
}
