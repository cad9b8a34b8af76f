//! Two-sample Mann–Whitney U test.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest group size for which the null distribution is enumerated exactly.
pub const EXACT_MAX_GROUP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MannWhitney {
    /// `U` of the first group: pairs `(a, b)` with `a > b`, ties counted ½.
    pub u: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Whether `p_value` came from exact enumeration.
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney U with midranks for ties.
///
/// When both groups have at most [`EXACT_MAX_GROUP`] members the p-value is
/// the exact permutation probability over all `C(n_a + n_b, n_a)`
/// assignments of the pooled midranks; otherwise the tie-corrected normal
/// approximation with continuity correction is used.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("Mann-Whitney U needs two non-empty groups"));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - offset;
    let mean = (na * nb) as f64 / 2.0;
    let observed = (u - mean).abs();

    if na <= EXACT_MAX_GROUP && nb <= EXACT_MAX_GROUP {
        let n = na + nb;
        let (mut extreme, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            total += 1;
            let rank_sum: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            if (rank_sum - offset - mean).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        }
        return Ok(MannWhitney {
            u,
            p_value: extreme as f64 / total as f64,
            exact: true,
        });
    }

    let n = (na + nb) as f64;
    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|x| **x == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((observed - 0.5).max(0.0)) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_value,
        exact: false,
    })
}
