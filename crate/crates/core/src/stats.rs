//! Two-sample Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest group size for which the exact null distribution is enumerated.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample: pairs `(a, b)` with `a > b`, ties counting half.
    pub u1: f64,
    pub u2: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Mid-ranks (1-based) of `values`, plus the tie groups' sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of ways to reach each `U` value for groups of size `n1` and `n2`
/// without ties, via the recurrence `c(n1, n2, u) = c(n1-1, n2, u-n2) + c(n1, n2-1, u)`.
fn exact_counts(n1: usize, n2: usize) -> Vec<f64> {
    let max_u = n1 * n2;
    // table[j][u] holds counts for (i, j) as i advances.
    let mut table: Vec<Vec<f64>> = (0..=n2).map(|_| vec![0.0; max_u + 1]).collect();
    for row in table.iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=n1 {
        let mut next: Vec<Vec<f64>> = (0..=n2).map(|_| vec![0.0; max_u + 1]).collect();
        next[0][0] = 1.0;
        for j in 1..=n2 {
            for u in 0..=i * j {
                let take = if u >= j { table[j][u - j] } else { 0.0 };
                next[j][u] = take + next[j - 1][u];
            }
        }
        table = next;
    }
    std::mem::take(&mut table[n2])
}

/// Mann-Whitney U test of `a` against `b`.
///
/// Without ties and with both groups of at most [`EXACT_LIMIT`] samples the
/// p-value comes from the exact null distribution; otherwise the normal
/// approximation with tie-corrected variance and continuity correction is
/// used. A zero-variance case (every value tied) reports `p = 1`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Mann-Whitney U needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::config("Mann-Whitney U samples must be finite"));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let nn = (n1 * n2) as f64;
    let u2 = nn - u1;

    if ties.is_empty() && n1 <= EXACT_LIMIT && n2 <= EXACT_LIMIT {
        let counts = exact_counts(n1, n2);
        let total: f64 = counts.iter().sum();
        let u = u1.round() as usize;
        let lower: f64 = counts[..=u].iter().sum::<f64>() / total;
        let upper: f64 = counts[u..].iter().sum::<f64>() / total;
        return Ok(MannWhitney {
            u1,
            u2,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            method: PValueMethod::Exact,
        });
    }

    let n = (n1 + n2) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nn / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let dev = ((u1 - nn / 2.0).abs() - 0.5).max(0.0);
        let z = dev / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(MannWhitney {
        u1,
        u2,
        p_value,
        method: PValueMethod::NormalApprox,
    })
}
