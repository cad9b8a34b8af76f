//! Ranking metrics.
//!
//! The count-aware metrics compare a model's inferred rank `I` of an answer
//! with the answer's ground-truth rank `G` (from observation counts):
//!
//! * `MRR*   = (1/N) Σ 1 / (|G − I| + 1)`
//! * `Hits@5* = (1/N) Σ [|G − I| < 5]`
//!
//! Every metric is generic over the numeric type so it can be evaluated
//! exactly with rationals as well as with floats.

use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};

/// Threshold of the count-aware Hits metric; a pair is a hit when the rank
/// difference is strictly below it.
pub const STAR_HITS_THRESHOLD: usize = 5;

/// Ground-truth and inferred rank of one answer; both 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankPair {
    pub ground_truth: usize,
    pub inferred: usize,
}

impl RankPair {
    pub fn new(ground_truth: usize, inferred: usize) -> Self {
        RankPair {
            ground_truth,
            inferred,
        }
    }

    pub fn diff(&self) -> usize {
        self.ground_truth.abs_diff(self.inferred)
    }
}

fn of<T: FromPrimitive>(n: usize) -> T {
    T::from_usize(n).expect("count representable in metric type")
}

fn mean_of<T, I>(values: I, n: usize) -> T
where
    T: Num + FromPrimitive + Copy,
    I: Iterator<Item = T>,
{
    values.fold(T::zero(), |acc, x| acc + x) / of(n)
}

pub fn mrr_star<T: Num + FromPrimitive + Copy>(pairs: &[RankPair]) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("MRR* of no rank pairs"));
    }
    Ok(mean_of(pairs.iter().map(|p| T::one() / of(p.diff() + 1)), pairs.len()))
}

/// Fraction of pairs with `|G − I| < threshold`.
pub fn hits_star<T: Num + FromPrimitive + Copy>(pairs: &[RankPair], threshold: usize) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("Hits* of no rank pairs"));
    }
    let hits = pairs.iter().filter(|p| p.diff() < threshold).count();
    Ok(of::<T>(hits) / of(pairs.len()))
}

pub fn hits_at_5_star<T: Num + FromPrimitive + Copy>(pairs: &[RankPair]) -> Result<T> {
    hits_star(pairs, STAR_HITS_THRESHOLD)
}

/// Mean reciprocal rank of the true answers.
pub fn mrr<T: Num + FromPrimitive + Copy>(ranks: &[usize]) -> Result<T> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric("MRR of no ranks"));
    }
    if ranks.contains(&0) {
        return Err(Error::Config("ranks are 1-based".into()));
    }
    Ok(mean_of(ranks.iter().map(|&r| T::one() / of(r)), ranks.len()))
}

/// Fraction of true answers ranked within the top `k`.
pub fn hits_at_k<T: Num + FromPrimitive + Copy>(ranks: &[usize], k: usize) -> Result<T> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric("Hits@K of no ranks"));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(of::<T>(hits) / of(ranks.len()))
}
